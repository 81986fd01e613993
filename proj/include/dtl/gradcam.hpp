#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dtl/image.hpp"
#include "dtl/model.hpp"

namespace dtl {

struct Heatmap {
  std::vector<float> raw;  // nonnegative, layer-resolution grid
  int raw_h = 0, raw_w = 0;
  std::vector<float> normalized;  // [0,1], input-resolution grid
  int out_h = 0, out_w = 0;
  int class_idx = 0;
  std::string layer;
  bool all_zero = false;  // raw map was identically zero (flagged, not scaled)
};

// Gradient-weighted class activation map at any conv/pool feature layer:
// channel weights are the spatially averaged gradients of the class logit,
// the raw map is ReLU of the weighted activation sum.
Heatmap grad_cam(ModelGraph& model, const Tensor& input, int class_idx,
                 const std::string& layer);

// Colormapped heatmap alpha-blended onto the image (dimensions must match
// the normalized map). alpha 0 returns the image, alpha 1 the colormap.
Image overlay(const Heatmap& heatmap, const Image& image, double alpha);

// PNG overlay + npz grids (raw, normalized) + JSON sidecar.
void export_heatmap(const std::filesystem::path& prefix, const Heatmap& heatmap,
                    const Image& overlay_image, const std::string& model_ref);

}  // namespace dtl
