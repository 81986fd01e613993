#pragma once

#include <filesystem>
#include <utility>

#include "dtl/data.hpp"

namespace dtl {

// Desk-scale surrogate datasets: bright crack-like polylines vs. compact
// bright blobs (and further primitives for multilabel schemas) on textured
// gray backgrounds. Labels are derived from the drawn primitives, so they
// are consistent with image content by construction.
struct ToySpec {
  std::string name = "toy";
  int width = 32;
  int height = 32;
  int class_count = 2;
  int items_per_class = 100;
  std::uint64_t seed = 0;
  TaskKind task = TaskKind::binary;

  // domain profile; vary these to make distinct but related toy domains
  float bg_base = 0.20f;
  float bg_amp = 0.25f;
  float stroke = 0.85f;
  int line_thickness = 1;
  int blob_radius = 3;
  double extra_label_prob = 0.3;  // multilabel co-occurrence rate
};

// Writes images (PGM), manifest.csv and gen_debug.json (per-item primitive
// record) under out_dir. Deterministic given the spec.
std::pair<DatasetDescriptor, Manifest> synth_toy_dataset(
    const ToySpec& spec, const std::filesystem::path& out_dir);

}  // namespace dtl
