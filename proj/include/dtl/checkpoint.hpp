#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtl/model.hpp"

namespace dtl {

// Sidecar metadata stored next to the parameter archive.
struct CheckpointMeta {
  std::string family;
  std::array<int, 2> input_size{0, 0};
  int output_dim = 0;
  std::string output_activation = "sigmoid_per_label";
  std::vector<std::string> class_names;
  // strategy lineage
  std::string mode;
  std::vector<std::string> weight_origin_chain;
  std::uint64_t seed = 0;
  std::string train_config_hash;
};

// A checkpoint is a directory holding params.bin (all named parameter and
// buffer groups, float32, bit-exact) and meta.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelGraph& model,
                     const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

// Restores every group by name; shapes must match exactly.
void load_checkpoint(const std::filesystem::path& dir, ModelGraph& model);
// Restores the transferable set (features.*) only; the head is the target
// task's business. Errors if any backbone group is missing or mis-shaped.
void load_backbone(const std::filesystem::path& dir, ModelGraph& model);

// Rebuilds the graph from meta.json and loads everything (inference entry
// point used by the Grad-CAM CLI).
ModelGraph load_checkpoint_model(const std::filesystem::path& dir);

// Directory of per-family pre-trained backbone artifacts, laid out as
// <root>/<family>-imagenet checkpoint directories.
class WeightStore {
 public:
  explicit WeightStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  bool has(Family family) const;
  // Errors name the missing path so the operator can fix the store.
  std::filesystem::path resolve(Family family) const;

  // Writes a randomly initialized stand-in artifact. Real converted weights
  // drop into the same layout.
  static std::filesystem::path synthesize(const std::filesystem::path& root,
                                          Family family,
                                          std::array<int, 2> input_hw,
                                          std::uint64_t seed);

 private:
  std::filesystem::path root_;
};

}  // namespace dtl
