#pragma once

#include "cmasge/layers.hpp"
#include "cmasge/tensor.hpp"

#include <vector>

namespace cmasge {

enum class Layout { image, video };

/// A batch of feature maps: `values` is (batch * M) x C with rows ordered
/// (example, y, x) row-major; M = H * W for images and M = T (width 1) for video.
struct FeatureMap {
  Var values;
  Grid grid;
  int scale_id = 1;
  Layout layout = Layout::image;

  Index channels() const { return values.cols(); }
  Index locations() const { return grid.locations(); }
};

// H x W x C tensor -> (H*W) x C matrix, and back.
Matrix flatten_locations(const Tensor& hwc);
Tensor unflatten_locations(const Matrix& locations, Index height, Index width);

struct ImageBackboneConfig {
  Index in_channels = 3;
  Index stage_channels = 16;
  Index out_channels = 16;  // per-scale 1x1 reduction width
  int scales = 3;
  Norm norm = Norm::batch;
};

/// Stride-2 3x3 conv stages (conv -> BN -> ReLU), one per scale. Stages from the
/// third on add an average-pooled skip of their input. Each scale ends in a
/// 1x1 reduction head.
class ToyImageBackbone {
 public:
  ToyImageBackbone(const ImageBackboneConfig& cfg, Rng& rng);

  // Returns cfg.scales maps with strictly decreasing resolution, scale ids 1..L.
  std::vector<FeatureMap> forward(Var images, const Grid& in, Mode mode);

  ParameterList parameters();
  std::vector<BatchNorm*> batch_norms();
  Index min_input_size() const;
  const ImageBackboneConfig& config() const { return cfg_; }

 private:
  struct Stage {
    Conv2d conv;
    std::optional<BatchNorm> bn;
    Linear head;
  };
  ImageBackboneConfig cfg_;
  std::vector<Stage> stages_;
};

struct SNetConfig {
  Index in_channels = 8;
  Index channels = 16;
  int stages = 4;
  Index kernel = 3;
  Index pool = 2;
  Norm norm = Norm::batch;
};

/// Temporal squeezer: per stage a 1-D conv (edge-padded, stride 1) -> BN -> ReLU
/// -> average pooling by `pool`, ceil mode.
class SNet {
 public:
  SNet(const SNetConfig& cfg, Rng& rng);

  // frames: (batch * T0) x C0 with grid {batch, T0, 1}.
  FeatureMap forward(Var frames, const Grid& in, Mode mode);

  ParameterList parameters();
  std::vector<BatchNorm*> batch_norms();
  Index min_frames() const;
  Index output_frames(Index frames) const;

 private:
  struct Stage {
    Conv2d conv;
    std::optional<BatchNorm> bn;
  };
  SNetConfig cfg_;
  std::vector<Stage> stages_;
};

}  // namespace cmasge
