#include "dtl/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "dtl/error.hpp"

namespace dtl {

Heatmap grad_cam(ModelGraph& model, const Tensor& input, int class_idx,
                 const std::string& layer) {
  require(input.n == 1, ErrorCode::argument, "grad_cam expects a single image");
  require(class_idx >= 0 && class_idx < model.output_dim(),
          ErrorCode::argument,
          "class_idx " + std::to_string(class_idx) + " out of range (dim " +
              std::to_string(model.output_dim()) + ")");
  require(model.find_layer(layer) != nullptr, ErrorCode::argument,
          "unknown layer '" + layer + "'");

  Recorder acts;
  acts.want(layer);
  Tensor logits = model.forward(input, Phase::eval, nullptr, &acts);
  const Tensor* a = acts.get(layer);
  require(a != nullptr, ErrorCode::argument,
          "layer '" + layer + "' produced no activations");
  require(a->h > 0 && a->w > 0, ErrorCode::argument,
          "layer '" + layer + "' has no spatial extent");

  Tensor dlogits(1, logits.c, 1, 1);
  dlogits.at(0, class_idx, 0, 0) = 1.0f;
  Recorder grads;
  grads.want(layer);
  model.zero_grad();
  model.backward(dlogits, &grads);
  const Tensor* da = grads.get(layer);
  require(da != nullptr, ErrorCode::argument,
          "no gradient reached layer '" + layer + "'");

  Heatmap heat;
  heat.layer = layer;
  heat.class_idx = class_idx;
  heat.raw_h = a->h;
  heat.raw_w = a->w;
  heat.raw.assign(static_cast<std::size_t>(a->h) * a->w, 0.0f);

  // alpha_k = global average of d(score)/dA_k; raw = ReLU(sum_k alpha_k A_k)
  const int spatial = a->spatial();
  for (int c = 0; c < a->c; ++c) {
    const float* gk = da->chan(0, c);
    double alpha = 0.0;
    for (int i = 0; i < spatial; ++i) alpha += gk[i];
    alpha /= static_cast<double>(spatial);
    const float* ak = a->chan(0, c);
    for (int i = 0; i < spatial; ++i)
      heat.raw[static_cast<std::size_t>(i)] +=
          static_cast<float>(alpha) * ak[i];
  }
  for (auto& v : heat.raw) v = std::max(v, 0.0f);

  float lo = heat.raw[0], hi = heat.raw[0];
  for (float v : heat.raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  heat.out_h = input.h;
  heat.out_w = input.w;
  std::vector<float> norm(heat.raw.size(), 0.0f);
  heat.all_zero = hi <= 0.0f;
  if (!heat.all_zero) {
    const float span = hi - lo;
    for (std::size_t i = 0; i < norm.size(); ++i)
      norm[i] = span > 0.0f ? (heat.raw[i] - lo) / span : 1.0f;
  }
  // bilinear upsample of the normalized grid to the input resolution
  Image grid = Image::make(heat.raw_w, heat.raw_h, 1);
  std::copy(norm.begin(), norm.end(), grid.pix.begin());
  Image up = resize_bilinear(grid, heat.out_h, heat.out_w);
  heat.normalized = std::move(up.pix);
  return heat;
}

namespace {

// Compact jet-style colormap.
void colormap(float v, float rgb[3]) {
  v = std::clamp(v, 0.0f, 1.0f);
  rgb[0] = std::clamp(1.5f - std::fabs(4.0f * v - 3.0f), 0.0f, 1.0f);
  rgb[1] = std::clamp(1.5f - std::fabs(4.0f * v - 2.0f), 0.0f, 1.0f);
  rgb[2] = std::clamp(1.5f - std::fabs(4.0f * v - 1.0f), 0.0f, 1.0f);
}

}  // namespace

Image overlay(const Heatmap& heatmap, const Image& image, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::argument,
          "alpha must lie in [0, 1]");
  require(image.height == heatmap.out_h && image.width == heatmap.out_w,
          ErrorCode::argument,
          "overlay: image dimensions do not match the heatmap");
  Image out = Image::make(image.width, image.height, 3);
  const float a = static_cast<float>(alpha);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      float rgb[3];
      colormap(heatmap.normalized[static_cast<std::size_t>(y) * image.width + x],
               rgb);
      for (int c = 0; c < 3; ++c) {
        const float base =
            image.channels == 1 ? image.at(y, x, 0) : image.at(y, x, c);
        out.at(y, x, c) = (1.0f - a) * base + a * rgb[c];
      }
    }
  }
  return out;
}

void export_heatmap(const std::filesystem::path& prefix, const Heatmap& heatmap,
                    const Image& overlay_image, const std::string& model_ref) {
  auto parent = prefix.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_png(prefix.string() + "_overlay.png", overlay_image);
  write_npz(prefix.string() + "_maps.npz",
            {{"raw", heatmap.raw.data(),
              {static_cast<std::size_t>(heatmap.raw_h),
               static_cast<std::size_t>(heatmap.raw_w)}},
             {"normalized", heatmap.normalized.data(),
              {static_cast<std::size_t>(heatmap.out_h),
               static_cast<std::size_t>(heatmap.out_w)}}});
  nlohmann::json j = {{"class_idx", heatmap.class_idx},
                      {"layer", heatmap.layer},
                      {"model_ref", model_ref},
                      {"all_zero", heatmap.all_zero}};
  std::ofstream out(prefix.string() + "_meta.json");
  require(out.good(), ErrorCode::io, "cannot write heatmap sidecar");
  out << j.dump(2) << "\n";
}

}  // namespace dtl
