#include "cmasge/pipeline/trainer.hpp"

#include "cmasge/optim.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

namespace cmasge {

namespace {

void write_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  out << "epoch,lr,train_loss,val_map\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.train_loss, r.val_map);
    out << buf;
  }
  if (!out) throw RuntimeFailure("cannot write " + path.string());
}

Matrix hash_halves(std::uint64_t h) {
  Matrix m(1, 2);
  m << static_cast<double>(h >> 32), static_cast<double>(h & 0xffffffffULL);
  return m;
}

std::uint64_t from_halves(const Matrix& m) {
  return (static_cast<std::uint64_t>(m(0, 0)) << 32) | static_cast<std::uint64_t>(m(0, 1));
}

}  // namespace

Matrix predict_dataset(Model& model, const Dataset& data, Index batch) {
  Matrix out(data.size(), data.num_labels());
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch) {
    const Index n = std::min(batch, data.size() - start);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    out.middleRows(start, n) =
        model.predict(data.input_rows(idx), Grid{n, data.grid.height, data.grid.width});
  }
  return out;
}

MetricReport metric_report(const RunConfig& cfg, const PredictionBatch& batch) {
  MetricReport r;
  const MapResult map = mean_average_precision(batch);
  r.set("examples", static_cast<double>(batch.examples()));
  r.set("classes_excluded", static_cast<double>(map.excluded.size()));
  r.set("map", map.map);
  if (cfg.task == Task::image) {
    add_prf(r, "all", prf_metrics(batch, {.mode = PrfOptions::Mode::threshold,
                                          .threshold = cfg.eval.threshold}));
    add_prf(r, "top" + std::to_string(cfg.eval.top_k),
            prf_metrics(batch, {.mode = PrfOptions::Mode::topk, .k = cfg.eval.top_k}));
  } else {
    const VideoMetrics v = video_metrics(batch, cfg.eval.gap_top);
    r.set("hit1", v.hit1);
    r.set("perr", v.perr);
    r.set("gap", v.gap);
  }
  return r;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Model& model,
                     const Checkpoint& state) {
  TensorArchive a;
  a.tag = cfg.architecture_hash();
  model.save(a);
  a.put_matrix("meta/epoch", Matrix::Constant(1, 1, state.epoch));
  a.put_matrix("meta/config_hash", hash_halves(cfg.hash()));
  Matrix log(static_cast<Index>(state.log.size()), 4);
  for (std::size_t i = 0; i < state.log.size(); ++i) {
    const auto& r = state.log[i];
    log.row(static_cast<Index>(i)) << r.epoch, r.lr, r.train_loss, r.val_map;
  }
  if (!state.log.empty()) a.put_matrix("meta/log", log);
  const auto tmp = path.string() + ".tmp";
  a.save(tmp);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, Model& model) {
  const TensorArchive a = TensorArchive::load(path);
  if (a.tag != cfg.architecture_hash())
    throw ValidationError("checkpoint " + path.string() +
                          " was written for a different model configuration");
  model.load(a);
  Checkpoint state;
  state.epoch = static_cast<int>(a.matrix("meta/epoch")(0, 0));
  if (a.contains("meta/log")) {
    const Matrix log = a.matrix("meta/log");
    for (Index i = 0; i < log.rows(); ++i)
      state.log.push_back({static_cast<int>(log(i, 0)), log(i, 1), log(i, 2), log(i, 3)});
  }
  if (from_halves(a.matrix("meta/config_hash")) != cfg.hash())
    log_warning("checkpoint " + path.string() + " was trained with different non-model settings");
  return state;
}

Model restore_model(const std::filesystem::path& path, const RunConfig& cfg, Index input_channels,
                    Index num_labels, Checkpoint* state) {
  const TensorArchive a = TensorArchive::load(path);
  if (!a.contains("embeddings")) throw ValidationError(path.string() + " is not a checkpoint");
  Model model(cfg, input_channels, num_labels, a.matrix("embeddings"));
  const Checkpoint s = load_checkpoint(path, cfg, model);
  if (state != nullptr) *state = s;
  return model;
}

TrainResult train_classifier(const RunConfig& cfg, const Dataset& train, const Dataset& val,
                             const Matrix& embeddings, const std::filesystem::path& out_dir,
                             const TrainOptions& opt) {
  cfg.validate();
  if (train.num_labels() != val.num_labels() || train.channels() != val.channels())
    throw ValidationError("train and validation splits disagree on labels or channels");
  std::filesystem::create_directories(out_dir);
  Model model(cfg, train.channels(), train.num_labels(), embeddings);
  Checkpoint state;
  if (opt.resume) state = load_checkpoint(*opt.resume, cfg, model);

  const RowVector priors = label_priors(train.annotations).transpose();
  const StepSchedule schedule{cfg.train.lr, cfg.train.lr_decay, cfg.train.lr_step};
  ParameterList params = model.parameters();
  TrainResult result;
  result.checkpoint = out_dir / "checkpoint.cmck";
  std::vector<Index> order(static_cast<std::size_t>(train.size()));

  for (int epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng(cfg.seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch)).shuffle(order);
    const SgdOptions sgd{schedule.lr_at(epoch - 1), cfg.train.momentum, cfg.train.weight_decay};
    double loss_sum = 0;
    Index batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.train.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const Index n = static_cast<Index>(idx.size());
      const Matrix y = train.label_rows(idx);
      Tape tape;
      const auto out =
          model.forward(tape, train.input_rows(idx), {n, train.grid.height, train.grid.width},
                        Mode::train);
      const Var loss = weighted_bce(out.probabilities, y, class_weights(y, priors, cfg.loss.beta));
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value))
        throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batches));
      tape.backward(loss);
      sgd_step(params, sgd);
      for (const Parameter* p : params)
        if (!p->value.allFinite())
          throw RuntimeFailure("non-finite parameter '" + p->name + "' at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batches));
      loss_sum += value;
      ++batches;
    }
    for (const BatchNorm* bn : model.batch_norms())
      if (bn->running && !(bn->running->mean.allFinite() && bn->running->var.allFinite()))
        throw RuntimeFailure("non-finite running statistics in '" + bn->gamma.name +
                             "' at epoch " + std::to_string(epoch));
    const PredictionBatch pred{predict_dataset(model, val), val.label_matrix(), {}};
    const EpochRecord rec{epoch, sgd.lr, loss_sum / static_cast<double>(batches),
                          mean_average_precision(pred).map};
    state.log.push_back(rec);
    state.epoch = epoch;
    save_checkpoint(result.checkpoint, cfg, model, state);
    write_log(out_dir / "train_log.csv", state.log);
    if (opt.progress != nullptr) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %d lr %.4g loss %.5f val_map %.4f\n", rec.epoch,
                    rec.lr, rec.train_loss, rec.val_map);
      *opt.progress << buf << std::flush;
    }
  }
  if (state.log.empty() || !std::filesystem::exists(result.checkpoint)) {
    save_checkpoint(result.checkpoint, cfg, model, state);
    write_log(out_dir / "train_log.csv", state.log);
  }
  result.log = state.log;
  return result;
}

}  // namespace cmasge
