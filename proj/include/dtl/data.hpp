#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dtl {

enum class TaskKind { binary, multilabel };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct DatasetDescriptor {
  std::string name;
  TaskKind task_kind = TaskKind::binary;
  std::vector<std::string> class_names;
  std::int64_t item_count = 0;
  std::string source;  // manifest path or generator spec
  bool has_predefined_splits = false;

  // Throws on violated invariants (unique non-empty classes, binary == 2
  // classes, positive item count, Table-2 consistency for the six
  // registered inspection datasets).
  void validate() const;
};

// One manifest row: an image reference plus label indices into class_names.
// Binary items carry exactly one label; multilabel items one or more.
struct ManifestItem {
  std::string path;
  std::vector<int> labels;
};

struct Manifest {
  std::vector<ManifestItem> items;
};

// Reads `path,label` (binary) or `path,labels` (multilabel, ';'-joined)
// UTF-8 manifests. Unknown label names are schema errors.
Manifest read_manifest(const std::filesystem::path& file,
                       const DatasetDescriptor& descriptor);
void write_manifest(const std::filesystem::path& file,
                    const DatasetDescriptor& descriptor,
                    const Manifest& manifest);

// Expected Table-2 shape of the six inspection datasets, when `name`
// matches one of them.
struct KnownDatasetInfo {
  std::vector<std::int64_t> item_counts;  // accepted counts
  int class_count;
  TaskKind task_kind;
  bool has_predefined_splits;
  std::vector<std::string> class_names;
};
const KnownDatasetInfo* find_known_dataset(const std::string& name);

// ---- splits ---------------------------------------------------------------

struct DataSplit {
  std::vector<int> train, val, test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};

  std::size_t total() const { return train.size() + val.size() + test.size(); }
  // Disjointness + coverage of {0..n-1}; throws split-integrity errors.
  void validate(std::int64_t item_count) const;
};

struct LowDataPlan {
  std::vector<double> fractions{0.05, 0.10, 0.20, 0.50, 1.00};
  std::uint64_t seed = 0;

  void validate() const;  // strictly increasing, in (0, 1]
};

void save_split(const std::filesystem::path& file, const DataSplit& split);
DataSplit load_split(const std::filesystem::path& file);

// ---- registry ---------------------------------------------------------------

class RegisteredDataset {
 public:
  RegisteredDataset(DatasetDescriptor desc, Manifest manifest,
                    std::filesystem::path base_dir);

  const DatasetDescriptor& descriptor() const { return desc_; }
  const Manifest& manifest() const { return manifest_; }
  // Image path of item i, resolved against the manifest's directory.
  std::filesystem::path item_path(int index) const;
  // Dense multi-hot label row of item i (size = class count).
  std::vector<float> label_row(int index) const;

 private:
  DatasetDescriptor desc_;
  Manifest manifest_;
  std::filesystem::path base_dir_;
};

using DatasetHandle = std::shared_ptr<const RegisteredDataset>;

class Registry {
 public:
  DatasetHandle register_dataset(DatasetDescriptor descriptor,
                                 Manifest manifest,
                                 std::filesystem::path base_dir = {});
  DatasetHandle register_manifest_file(DatasetDescriptor descriptor,
                                       const std::filesystem::path& file);
  DatasetHandle get(const std::string& name) const;  // resolution error if absent
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<DatasetHandle> datasets_;
};

// 70/10/20-style split with cumulative-boundary rounding, optionally
// stratified (largest-remainder per stratum for train and val).
DataSplit make_splits(const DatasetHandle& handle,
                      std::array<double, 3> ratios, std::uint64_t seed,
                      bool stratified);

// Index lists (or *.txt files of indices) per part for datasets shipping
// official splits.
DataSplit load_predefined_splits(const DatasetHandle& handle,
                                 const std::vector<std::vector<int>>& parts);
DataSplit load_predefined_split_files(
    const DatasetHandle& handle,
    const std::array<std::filesystem::path, 3>& part_files);

// Keeps a seeded prefix of the training part: |train'| = max(1,
// floor(fraction*|train|)). Prefixes nest across fractions for a fixed seed.
DataSplit subsample_training(const DatasetHandle& handle,
                             const DataSplit& split, double fraction,
                             std::uint64_t seed, bool stratified);

// Stratification default: on for binary, off (bucketed) for multilabel.
bool default_stratified(TaskKind kind);

}  // namespace dtl
