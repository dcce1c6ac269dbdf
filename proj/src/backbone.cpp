#include "cmasge/backbone.hpp"

namespace cmasge {

Matrix flatten_locations(const Tensor& hwc) {
  require(hwc.rank() == 3, "flatten_locations expects an H x W x C tensor");
  return hwc.matrix(2);
}

Tensor unflatten_locations(const Matrix& locations, Index height, Index width) {
  require(locations.rows() == height * width, "unflatten_locations: row count != H*W");
  const Matrix rm = locations;
  return Tensor({static_cast<std::uint64_t>(height), static_cast<std::uint64_t>(width),
                 static_cast<std::uint64_t>(rm.cols())},
                std::vector<double>(rm.data(), rm.data() + rm.size()));
}

ToyImageBackbone::ToyImageBackbone(const ImageBackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  require(cfg.scales >= 1, "backbone needs at least one scale");
  const ConvGeometry stride2{.kernel_h = 3, .kernel_w = 3, .stride_h = 2, .stride_w = 2,
                             .pad_h = 1, .pad_w = 1};
  Index in = cfg.in_channels;
  for (int l = 0; l < cfg.scales; ++l) {
    const std::string name = "backbone.s" + std::to_string(l + 1);
    Stage s{Conv2d(name + ".conv", in, cfg.stage_channels, stride2, rng, cfg.norm == Norm::none),
            std::nullopt, Linear(name + ".head", cfg.stage_channels, cfg.out_channels, rng)};
    if (cfg.norm == Norm::batch) s.bn.emplace(name + ".bn", cfg.stage_channels);
    stages_.push_back(std::move(s));
    in = cfg.stage_channels;
  }
}

Index ToyImageBackbone::min_input_size() const { return Index{1} << cfg_.scales; }

std::vector<FeatureMap> ToyImageBackbone::forward(Var images, const Grid& in, Mode mode) {
  if (in.height < min_input_size() || in.width < min_input_size()) {
    throw ValidationError("image input " + std::to_string(in.height) + "x" +
                          std::to_string(in.width) + " is too small for " +
                          std::to_string(cfg_.scales) + " scales; minimum size is " +
                          std::to_string(min_input_size()));
  }
  std::vector<FeatureMap> maps;
  Var x = images;
  Grid grid = in;
  for (std::size_t l = 0; l < stages_.size(); ++l) {
    Stage& s = stages_[l];
    Grid out;
    Var y = s.conv.forward(x, grid, &out);
    if (s.bn) y = s.bn->forward(y, mode);
    y = relu(y);
    if (l >= 2 && x.cols() == y.cols()) {
      Var skip = avg_pool(x, grid, 2, 2);
      if (pool_output(grid, 2, 2) == out) y = add(y, skip);
    }
    x = y;
    grid = out;
    maps.push_back({s.head.forward(y), grid, static_cast<int>(l + 1), Layout::image});
  }
  return maps;
}

ParameterList ToyImageBackbone::parameters() {
  ParameterList p;
  for (auto& s : stages_) {
    append(p, s.conv.parameters());
    if (s.bn) append(p, s.bn->parameters());
    append(p, s.head.parameters());
  }
  return p;
}

std::vector<BatchNorm*> ToyImageBackbone::batch_norms() {
  std::vector<BatchNorm*> out;
  for (auto& s : stages_)
    if (s.bn) out.push_back(&*s.bn);
  return out;
}

SNet::SNet(const SNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  require(cfg.stages >= 1 && cfg.pool >= 1 && cfg.kernel >= 1 && cfg.kernel % 2 == 1,
          "SNet: stages/pool must be positive and kernel odd");
  const ConvGeometry temporal{.kernel_h = cfg.kernel, .kernel_w = 1, .stride_h = 1,
                              .stride_w = 1, .pad_h = (cfg.kernel - 1) / 2, .pad_w = 0,
                              .replicate_pad = true};
  Index in = cfg.in_channels;
  for (int l = 0; l < cfg.stages; ++l) {
    const std::string name = "snet.s" + std::to_string(l + 1);
    Stage s{Conv2d(name + ".conv", in, cfg.channels, temporal, rng, cfg.norm == Norm::none),
            std::nullopt};
    if (cfg.norm == Norm::batch) s.bn.emplace(name + ".bn", cfg.channels);
    stages_.push_back(std::move(s));
    in = cfg.channels;
  }
}

Index SNet::min_frames() const {
  Index f = 1;
  for (int l = 0; l < cfg_.stages; ++l) f *= cfg_.pool;
  return f;
}

Index SNet::output_frames(Index frames) const {
  for (int l = 0; l < cfg_.stages; ++l) frames = (frames + cfg_.pool - 1) / cfg_.pool;
  return frames;
}

FeatureMap SNet::forward(Var frames, const Grid& in, Mode mode) {
  require(in.width == 1, "SNet input grid must have width 1");
  if (in.height < min_frames()) {
    throw ValidationError("SNet needs at least " + std::to_string(min_frames()) +
                          " frames, got " + std::to_string(in.height));
  }
  Var x = frames;
  Grid grid = in;
  for (auto& s : stages_) {
    Grid out;
    x = s.conv.forward(x, grid, &out);
    if (s.bn) x = s.bn->forward(x, mode);
    x = relu(x);
    x = avg_pool(x, out, cfg_.pool, 1);
    grid = pool_output(out, cfg_.pool, 1);
  }
  return {x, grid, 1, Layout::video};
}

ParameterList SNet::parameters() {
  ParameterList p;
  for (auto& s : stages_) {
    append(p, s.conv.parameters());
    if (s.bn) append(p, s.bn->parameters());
  }
  return p;
}

}  // namespace cmasge

namespace cmasge {

std::vector<BatchNorm*> SNet::batch_norms() {
  std::vector<BatchNorm*> out;
  for (auto& s : stages_)
    if (s.bn) out.push_back(&*s.bn);
  return out;
}

}  // namespace cmasge
