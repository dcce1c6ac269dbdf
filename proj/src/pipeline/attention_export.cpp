#include "cmasge/pipeline/attention_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cmasge {

namespace {

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Column of `maps.a` serving label k for one example, as a vector over locations.
std::vector<double> label_attention(const AttentionMaps& maps, Index example, Index k) {
  const Index m = maps.grid.locations();
  const Index col = maps.a.cols() == 1 ? 0 : k;
  std::vector<double> a(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) a[static_cast<std::size_t>(i)] = maps.a(example * m + i, col);
  return a;
}

}  // namespace

std::vector<double> mask_fractions(const Region& r, Index in_h, Index in_w, Index fh, Index fw) {
  std::vector<double> f(static_cast<std::size_t>(fh * fw), 0.0);
  if (!r.present()) return f;
  const double ch = static_cast<double>(in_h) / static_cast<double>(fh);
  const double cw = static_cast<double>(in_w) / static_cast<double>(fw);
  for (Index y = 0; y < fh; ++y)
    for (Index x = 0; x < fw; ++x) {
      const double oy = overlap(y * ch, (y + 1) * ch, static_cast<double>(r.y0),
                                static_cast<double>(r.y0 + r.h));
      const double ox = overlap(x * cw, (x + 1) * cw, static_cast<double>(r.x0),
                                static_cast<double>(r.x0 + r.w));
      f[static_cast<std::size_t>(y * fw + x)] = (oy / ch) * (ox / cw);
    }
  return f;
}

double attention_mass(const std::vector<double>& a, const std::vector<double>& f) {
  require(a.size() == f.size(), "attention_mass: length mismatch");
  return std::inner_product(a.begin(), a.end(), f.begin(), 0.0);
}

Localization measure_localization(Model& model, const Dataset& data, Index batch) {
  Localization loc;
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch) {
    const Index n = std::min(batch, data.size() - start);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    Tape t;
    const auto out = model.forward(t, data.input_rows(idx),
                                   {n, data.grid.height, data.grid.width}, Mode::eval);
    const AttentionMaps& maps = out.maps.front();
    const Index m = maps.grid.locations();
    for (Index b = 0; b < n; ++b)
      for (Index k : data.annotations.examples[start + b]) {
        const Region& r = data.regions[start + b][k];
        if (!r.present()) continue;
        const auto f = mask_fractions(r, data.grid.height, data.grid.width, maps.grid.height,
                                      maps.grid.width);
        loc.mean_mass += attention_mass(label_attention(maps, b, k), f);
        loc.mean_uniform += std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(m);
        ++loc.pairs;
      }
  }
  if (loc.pairs > 0) {
    loc.mean_mass /= static_cast<double>(loc.pairs);
    loc.mean_uniform /= static_cast<double>(loc.pairs);
  }
  return loc;
}

std::vector<ExportedMap> export_attention(Model& model, const Dataset& data,
                                          const std::filesystem::path& out_dir, Index examples) {
  std::filesystem::create_directories(out_dir);
  examples = std::min(examples, data.size());
  std::vector<ExportedMap> written;
  std::ofstream stats(out_dir / "attention_stats.csv");
  stats << "example,label,scale,mass,uniform,min,max\n";
  for (Index b = 0; b < examples; ++b) {
    Tape t;
    const auto out = model.forward(t, data.input_rows({b}), {1, data.grid.height, data.grid.width},
                                   Mode::eval);
    const std::string& id = data.annotations.ids[static_cast<std::size_t>(b)];
    for (std::size_t h = 0; h < out.maps.size(); ++h) {
      const AttentionMaps& maps = out.maps[h];
      const Index fh = maps.grid.height, fw = maps.grid.width;
      const int scale = model.scales()[h];
      for (Index k : data.annotations.examples[b]) {
        const auto a = label_attention(maps, 0, k);
        const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
        const double amin = *lo, amax = *hi;
        const auto f = mask_fractions(data.regions[b][k], data.grid.height, data.grid.width, fh, fw);
        ExportedMap em;
        em.mass = attention_mass(a, f);
        em.uniform = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(a.size());
        const std::string stem = "ex" + id + "_label" + std::to_string(k) + "_s" + std::to_string(scale);
        em.csv = out_dir / (stem + ".csv");
        std::ofstream csv(em.csv);
        if (data.task == Task::video) {
          csv << "frame,first_input_frame,last_input_frame,attention\n";
          const double span = static_cast<double>(data.grid.height) / static_cast<double>(fh);
          for (Index i = 0; i < fh; ++i)
            csv << i << "," << static_cast<Index>(std::floor(i * span)) << ","
                << static_cast<Index>(std::ceil((i + 1) * span)) - 1 << ","
                << fmt(a[static_cast<std::size_t>(i)]) << "\n";
        } else {
          for (Index y = 0; y < fh; ++y)
            for (Index x = 0; x < fw; ++x)
              csv << fmt(a[static_cast<std::size_t>(y * fw + x)]) << (x + 1 < fw ? "," : "\n");
          em.pgm = out_dir / (stem + ".pgm");
          std::ofstream pgm(em.pgm);
          pgm << "P2\n# min=" << fmt(amin) << " max=" << fmt(amax) << "\n"
              << fw << " " << fh << "\n65535\n";
          for (Index y = 0; y < fh; ++y)
            for (Index x = 0; x < fw; ++x) {
              const double v = a[static_cast<std::size_t>(y * fw + x)];
              const long level = amax > amin ? std::lround(65535.0 * (v - amin) / (amax - amin)) : 0;
              pgm << level << (x + 1 < fw ? " " : "\n");
            }
          if (!pgm) throw RuntimeFailure("cannot write " + em.pgm.string());
        }
        if (!csv) throw RuntimeFailure("cannot write " + em.csv.string());
        stats << id << "," << k << "," << scale << "," << fmt(em.mass) << "," << fmt(em.uniform)
              << "," << fmt(amin) << "," << fmt(amax) << "\n";
        written.push_back(em);
      }
    }
  }
  if (!stats) throw RuntimeFailure("cannot write attention_stats.csv");
  return written;
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  PgmImage img;
  std::string magic, line;
  std::getline(in, magic);
  if (magic != "P2") throw ValidationError(path.string() + " is not a P2 PGM");
  std::vector<long> numbers;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      std::sscanf(line.c_str(), "# min=%lf max=%lf", &img.min, &img.max);
      continue;
    }
    std::istringstream ss(line);
    long v;
    while (ss >> v) numbers.push_back(v);
  }
  if (numbers.size() < 3) throw ValidationError(path.string() + ": truncated PGM header");
  img.width = numbers[0];
  img.height = numbers[1];
  img.maxval = numbers[2];
  img.pixels.assign(numbers.begin() + 3, numbers.end());
  if (static_cast<Index>(img.pixels.size()) != img.width * img.height)
    throw ValidationError(path.string() + ": pixel count does not match size");
  return img;
}

}  // namespace cmasge
