#include "cmasge/pipeline/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace cmasge {

Matrix Dataset::label_matrix() const { return annotations.indicator(); }

Matrix Dataset::input_rows(const std::vector<Index>& examples) const {
  const Index m = grid.locations();
  Matrix out(static_cast<Index>(examples.size()) * m, inputs.cols());
  for (std::size_t i = 0; i < examples.size(); ++i)
    out.middleRows(static_cast<Index>(i) * m, m) = inputs.middleRows(examples[i] * m, m);
  return out;
}

Matrix Dataset::label_rows(const std::vector<Index>& examples) const {
  Matrix out = Matrix::Zero(static_cast<Index>(examples.size()), num_labels());
  for (std::size_t i = 0; i < examples.size(); ++i)
    for (Index k : annotations.examples[examples[i]]) out(static_cast<Index>(i), k) = 1;
  return out;
}

std::vector<std::string> default_label_names(Index n) {
  std::vector<std::string> names;
  for (Index k = 0; k < n; ++k) names.push_back("label" + std::to_string(k));
  return names;
}

namespace {

constexpr std::uint64_t kPatternStream = 0x5EED0001;
constexpr std::uint64_t kTrainStream = 0x5EED1000;
constexpr std::uint64_t kTestStream = 0x5EED2000;

Matrix unit_patterns(Index rows, Index cols, double norm, Rng rng) {
  Matrix p(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) p(r, c) = rng.normal();
    p.row(r) *= norm / p.row(r).norm();
  }
  return p;
}

// Mixes a shared unit direction into every row, then rescales rows to `norm`.
void add_shared_direction(Matrix& p, const RowVector& shared, double weight, double norm) {
  for (Index r = 0; r < p.rows(); ++r) {
    RowVector row = std::sqrt(weight) * shared + std::sqrt(1 - weight) * p.row(r).normalized();
    p.row(r) = norm * row / row.norm();
  }
}

Dataset generate_split(const RunConfig& cfg, const Matrix& patterns, const Matrix& distractors,
                       Index count, std::uint64_t stream) {
  const SynthSection& s = cfg.synth;
  const Index n = s.num_labels;
  Dataset d;
  d.task = cfg.task;
  const bool image = cfg.task == Task::image;
  d.grid = image ? Grid{count, s.height, s.width} : Grid{count, s.frames, 1};
  const Index m = d.grid.locations();
  const Index slot_h = image ? s.cell : s.segment;
  const Index slot_w = image ? s.cell : 1;
  const Index slots_x = image ? s.width / s.cell : 1;
  const Index slots = image ? (s.height / s.cell) * slots_x : s.frames / s.segment;
  d.inputs.resize(count * m, s.channels);
  std::vector<std::vector<Index>> labels(count);
  d.regions.assign(count, std::vector<Region>(n));

  for (Index b = 0; b < count; ++b) {
    Rng rng(cfg.seed, stream + static_cast<std::uint64_t>(b));
    const Index group = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.groups)));
    for (Index k = 0; k < n; ++k) {
      const bool inside = k * s.groups / n == group;
      if (rng.bernoulli(inside ? s.q_in : s.q_out)) labels[b].push_back(k);
    }
    if (labels[b].empty()) {
      std::vector<Index> members;
      for (Index k = 0; k < n; ++k)
        if (k * s.groups / n == group) members.push_back(k);
      labels[b].push_back(members[rng.below(members.size())]);
    }
    std::vector<Index> slot(slots);
    std::iota(slot.begin(), slot.end(), Index{0});
    rng.shuffle(slot);

    auto block = d.inputs.middleRows(b * m, m);
    for (Index i = 0; i < block.size(); ++i) block.data()[i] = s.noise * rng.normal();
    auto plant = [&](Index cell, const RowVector& pattern) {
      const Region r{(cell / slots_x) * slot_h, (cell % slots_x) * slot_w, slot_h, slot_w};
      for (Index y = r.y0; y < r.y0 + r.h; ++y)
        for (Index x = r.x0; x < r.x0 + r.w; ++x) block.row(y * d.grid.width + x) += pattern;
      return r;
    };
    std::size_t next = 0;
    for (Index k : labels[b]) d.regions[b][k] = plant(slot[next++], patterns.row(k));
    for (Index j = 0; j < s.distractors; ++j)
      plant(slot[next++],
            distractors.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(distractors.rows())))));
  }
  std::vector<std::string> ids;
  for (Index b = 0; b < count; ++b) ids.push_back(std::to_string(b));
  d.annotations = AnnotationSet(n, std::move(labels), std::move(ids));
  return d;
}

}  // namespace

SyntheticData generate_synthetic(const RunConfig& cfg) {
  cfg.validate();
  const SynthSection& s = cfg.synth;
  SyntheticData out;
  Rng base(cfg.seed, kPatternStream);
  out.patterns = unit_patterns(s.num_labels, s.channels, s.signal, base.fork(1));
  out.distractor_patterns = unit_patterns(std::max<Index>(s.num_labels, 1), s.channels, s.signal,
                                          base.fork(2));
  if (s.objectness > 0) {
    const RowVector shared = unit_patterns(1, s.channels, 1.0, base.fork(3));
    add_shared_direction(out.patterns, shared, s.objectness, s.signal);
    add_shared_direction(out.distractor_patterns, shared, s.objectness, s.signal);
  }
  out.train = generate_split(cfg, out.patterns, out.distractor_patterns, s.train_examples,
                             kTrainStream << 20);
  out.test = generate_split(cfg, out.patterns, out.distractor_patterns, s.test_examples,
                            kTestStream << 20);
  return out;
}

void save_split(const std::filesystem::path& dir, const std::string& split, const Dataset& d) {
  write_annotations(dir / (split + ".tsv"), d.annotations);
  const auto u = [](Index v) { return static_cast<std::uint64_t>(v); };
  std::vector<std::uint64_t> shape{u(d.grid.batch), u(d.grid.height)};
  if (d.task == Task::image) shape.push_back(u(d.grid.width));
  shape.push_back(u(d.channels()));
  save_tensor(dir / (split + "_x.cmat"),
              Tensor(shape, std::vector<double>(d.inputs.data(), d.inputs.data() + d.inputs.size())));
  const Index n = d.num_labels();
  std::vector<double> regions;
  regions.reserve(static_cast<std::size_t>(d.size() * n * 4));
  for (const auto& row : d.regions)
    for (const Region& r : row)
      for (Index v : {r.y0, r.x0, r.h, r.w}) regions.push_back(static_cast<double>(v));
  save_tensor(dir / (split + "_regions.cmat"), Tensor({u(d.size()), u(n), 4}, regions));
}

Dataset load_split(const std::filesystem::path& dir, const std::string& split, Task task) {
  Dataset d;
  d.task = task;
  const Tensor x = load_tensor(dir / (split + "_x.cmat"));
  const std::size_t want_rank = task == Task::image ? 4 : 3;
  if (x.rank() != want_rank)
    throw ValidationError(split + "_x.cmat has rank " + std::to_string(x.rank()) + ", expected " +
                          std::to_string(want_rank) + " for task " + to_string(task));
  const auto e = [&](std::size_t i) { return static_cast<Index>(x.extent(i)); };
  d.grid = task == Task::image ? Grid{e(0), e(1), e(2)} : Grid{e(0), e(1), 1};
  d.inputs = x.matrix(x.rank() - 1);
  const Tensor regions = load_tensor(dir / (split + "_regions.cmat"));
  if (regions.rank() != 3 || regions.extent(2) != 4 || static_cast<Index>(regions.extent(0)) != d.size())
    throw ValidationError(split + "_regions.cmat must be B x N x 4 with B = " +
                          std::to_string(d.size()));
  const Index n = static_cast<Index>(regions.extent(1));
  d.annotations = read_annotations(dir / (split + ".tsv"), n);
  if (d.annotations.size() != d.size())
    throw ValidationError(split + ".tsv has " + std::to_string(d.annotations.size()) +
                          " examples, tensors have " + std::to_string(d.size()));
  d.regions.assign(d.size(), std::vector<Region>(n));
  const double* r = regions.data().data();
  for (Index b = 0; b < d.size(); ++b)
    for (Index k = 0; k < n; ++k, r += 4)
      d.regions[b][k] = {static_cast<Index>(r[0]), static_cast<Index>(r[1]),
                         static_cast<Index>(r[2]), static_cast<Index>(r[3])};
  return d;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  save_split(dir, "train", data.train);
  save_split(dir, "test", data.test);
  save_tensor(dir / "patterns.cmat", Tensor::from_matrix(data.patterns));
  const Index n = data.train.num_labels();
  {
    std::ofstream names(dir / "labels.txt");
    for (const auto& name : default_label_names(n)) names << name << "\n";
  }
  const LabelGraph g = build_label_graph(data.train.annotations);
  std::ofstream out(dir / "summary.txt");
  char buf[32];
  out << "train_examples " << data.train.size() << "\ntest_examples " << data.test.size()
      << "\nlabels " << n << "\npriors";
  for (Index k = 0; k < n; ++k) {
    std::snprintf(buf, sizeof buf, " %.4f", g.priors(k));
    out << buf;
  }
  out << "\nsymmetric_cooccurrence\n";
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof buf, "%s%.4f", j ? " " : "", g.symmetric(i, j));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw RuntimeFailure("cannot write " + (dir / "summary.txt").string());
}

}  // namespace cmasge
