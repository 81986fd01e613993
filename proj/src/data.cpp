#include "dtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dtl/error.hpp"
#include "dtl/rng.hpp"

namespace dtl {

using nlohmann::json;

std::string to_string(TaskKind k) {
  return k == TaskKind::binary ? "binary" : "multilabel";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "binary") return TaskKind::binary;
  if (s == "multilabel") return TaskKind::multilabel;
  raise(ErrorCode::argument, "unknown task kind: " + s);
}

namespace {

const std::map<std::string, KnownDatasetInfo>& known_datasets() {
  static const std::map<std::string, KnownDatasetInfo> table = {
      {"CDS",
       {{1027}, 2, TaskKind::binary, false, {"healthy", "unhealthy"}}},
      {"SDNETv1",
       {{13620}, 2, TaskKind::binary, false, {"uncracked", "crack"}}},
      {"BCD", {{5390}, 2, TaskKind::binary, false, {"background", "crack"}}},
      // The source table lists 60,010 instances while the prose says 60,000;
      // both counts are accepted.
      {"ICCD", {{60010, 60000}, 2, TaskKind::binary, true,
                {"uncracked", "crack"}}},
      {"MCDS",
       {{2411},
        10,
        TaskKind::multilabel,
        false,
        {"crack", "efflorescence", "scaling", "spalling", "general defects",
         "no defects", "exposed reinforcement", "no exposed reinforcement",
         "rust straining", "no rust straining"}}},
      {"CODEBRIM",
       {{8304},
        6,
        TaskKind::multilabel,
        true,
        {"cracks", "spalling", "efflorescence", "exposed bars",
         "corrosion stain", "background"}}},
  };
  return table;
}

long long round_half_up(double x) {
  return static_cast<long long>(std::floor(x + 0.5));
}

}  // namespace

const KnownDatasetInfo* find_known_dataset(const std::string& name) {
  const auto& table = known_datasets();
  auto it = table.find(name);
  return it == table.end() ? nullptr : &it->second;
}

void DatasetDescriptor::validate() const {
  require(!name.empty(), ErrorCode::schema, "dataset name empty");
  require(!class_names.empty(), ErrorCode::schema,
          name + ": class_names empty");
  std::set<std::string> uniq;
  for (const auto& c : class_names) {
    require(!c.empty(), ErrorCode::schema, name + ": empty class name");
    require(uniq.insert(c).second, ErrorCode::schema,
            name + ": duplicate class name '" + c + "'");
  }
  if (task_kind == TaskKind::binary) {
    require(class_names.size() == 2, ErrorCode::schema,
            name + ": binary dataset must have exactly 2 classes");
  }
  require(item_count > 0, ErrorCode::schema, name + ": item_count must be positive");

  if (const auto* known = find_known_dataset(name)) {
    const bool count_ok =
        std::find(known->item_counts.begin(), known->item_counts.end(),
                  item_count) != known->item_counts.end();
    require(count_ok, ErrorCode::schema,
            name + ": item_count " + std::to_string(item_count) +
                " does not match the registered inspection dataset");
    require(static_cast<int>(class_names.size()) == known->class_count,
            ErrorCode::schema, name + ": class count must be " +
                                   std::to_string(known->class_count));
    require(task_kind == known->task_kind, ErrorCode::schema,
            name + ": task kind must be " + to_string(known->task_kind));
    require(has_predefined_splits == known->has_predefined_splits,
            ErrorCode::schema,
            name + (known->has_predefined_splits
                        ? ": ships predefined splits; flag must be set"
                        : ": has no predefined splits"));
  }
}

// ---- manifest ---------------------------------------------------------------

Manifest read_manifest(const std::filesystem::path& file,
                       const DatasetDescriptor& descriptor) {
  std::ifstream in(file);
  require(in.good(), ErrorCode::io, "cannot open manifest " + file.string());

  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < descriptor.class_names.size(); ++i)
    class_index[descriptor.class_names[i]] = static_cast<int>(i);

  const bool multilabel = descriptor.task_kind == TaskKind::multilabel;
  Manifest manifest;
  std::string line;
  bool first = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      const std::string expected = multilabel ? "path,labels" : "path,label";
      require(line == expected, ErrorCode::manifest,
              file.string() + ": expected header '" + expected + "', got '" +
                  line + "'");
      continue;
    }
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorCode::manifest,
            file.string() + ":" + std::to_string(line_no) + ": missing label cell");
    ManifestItem item;
    item.path = line.substr(0, comma);
    require(!item.path.empty(), ErrorCode::manifest,
            file.string() + ":" + std::to_string(line_no) + ": empty path");
    std::stringstream labels(line.substr(comma + 1));
    std::string label;
    while (std::getline(labels, label, ';')) {
      if (label.empty()) continue;
      auto it = class_index.find(label);
      require(it != class_index.end(), ErrorCode::schema,
              file.string() + ":" + std::to_string(line_no) +
                  ": unknown label '" + label + "'");
      item.labels.push_back(it->second);
    }
    std::sort(item.labels.begin(), item.labels.end());
    item.labels.erase(std::unique(item.labels.begin(), item.labels.end()),
                      item.labels.end());
    if (multilabel) {
      require(!item.labels.empty(), ErrorCode::manifest,
              file.string() + ":" + std::to_string(line_no) + ": no labels");
    } else {
      require(item.labels.size() == 1, ErrorCode::manifest,
              file.string() + ":" + std::to_string(line_no) +
                  ": binary items carry exactly one label");
    }
    manifest.items.push_back(std::move(item));
  }
  require(!manifest.items.empty(), ErrorCode::manifest,
          file.string() + ": empty manifest");
  return manifest;
}

void write_manifest(const std::filesystem::path& file,
                    const DatasetDescriptor& descriptor,
                    const Manifest& manifest) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  require(out.good(), ErrorCode::io, "cannot write manifest " + file.string());
  out << (descriptor.task_kind == TaskKind::multilabel ? "path,labels"
                                                       : "path,label")
      << "\n";
  for (const auto& item : manifest.items) {
    out << item.path << ",";
    for (std::size_t i = 0; i < item.labels.size(); ++i) {
      if (i) out << ";";
      out << descriptor.class_names[item.labels[i]];
    }
    out << "\n";
  }
}

// ---- splits ---------------------------------------------------------------

void DataSplit::validate(std::int64_t item_count) const {
  std::vector<char> seen(static_cast<std::size_t>(item_count), 0);
  auto check_part = [&](const std::vector<int>& part, const char* which) {
    for (int idx : part) {
      require(idx >= 0 && idx < item_count, ErrorCode::split_integrity,
              std::string(which) + " index " + std::to_string(idx) +
                  " out of range");
      require(!seen[idx], ErrorCode::split_integrity,
              "index " + std::to_string(idx) + " appears in more than one part");
      seen[idx] = 1;
    }
  };
  check_part(train, "train");
  check_part(val, "val");
  check_part(test, "test");
  require(static_cast<std::int64_t>(total()) == item_count,
          ErrorCode::split_integrity,
          "split covers " + std::to_string(total()) + " of " +
              std::to_string(item_count) + " items");
}

void LowDataPlan::validate() const {
  require(!fractions.empty(), ErrorCode::argument, "empty fraction list");
  double prev = 0.0;
  for (double f : fractions) {
    require(f > prev && f <= 1.0, ErrorCode::argument,
            "fractions must be strictly increasing within (0, 1]");
    prev = f;
  }
}

void save_split(const std::filesystem::path& file, const DataSplit& split) {
  json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  j["seed"] = split.seed;
  j["ratios"] = split.ratios;
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  require(out.good(), ErrorCode::io, "cannot write split " + file.string());
  out << j.dump(2) << "\n";
}

DataSplit load_split(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorCode::io, "cannot open split " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorCode::io, file.string() + ": " + e.what());
  }
  DataSplit split;
  split.train = j.at("train").get<std::vector<int>>();
  split.val = j.at("val").get<std::vector<int>>();
  split.test = j.at("test").get<std::vector<int>>();
  split.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("ratios")) split.ratios = j.at("ratios").get<std::array<double, 3>>();
  return split;
}

// ---- registry ---------------------------------------------------------------

RegisteredDataset::RegisteredDataset(DatasetDescriptor desc, Manifest manifest,
                                     std::filesystem::path base_dir)
    : desc_(std::move(desc)),
      manifest_(std::move(manifest)),
      base_dir_(std::move(base_dir)) {}

std::filesystem::path RegisteredDataset::item_path(int index) const {
  const auto& rel = manifest_.items.at(static_cast<std::size_t>(index)).path;
  std::filesystem::path p(rel);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

std::vector<float> RegisteredDataset::label_row(int index) const {
  std::vector<float> row(desc_.class_names.size(), 0.0f);
  for (int lab : manifest_.items.at(static_cast<std::size_t>(index)).labels)
    row[static_cast<std::size_t>(lab)] = 1.0f;
  return row;
}

DatasetHandle Registry::register_dataset(DatasetDescriptor descriptor,
                                         Manifest manifest,
                                         std::filesystem::path base_dir) {
  require(!manifest.items.empty(), ErrorCode::manifest,
          descriptor.name + ": empty manifest");
  if (descriptor.item_count == 0)
    descriptor.item_count = static_cast<std::int64_t>(manifest.items.size());
  require(descriptor.item_count ==
              static_cast<std::int64_t>(manifest.items.size()),
          ErrorCode::manifest,
          descriptor.name + ": descriptor item_count " +
              std::to_string(descriptor.item_count) + " != manifest rows " +
              std::to_string(manifest.items.size()));
  if (const auto* known = find_known_dataset(descriptor.name)) {
    if (descriptor.class_names.empty()) descriptor.class_names = known->class_names;
    descriptor.has_predefined_splits = known->has_predefined_splits;
  }
  descriptor.validate();
  const int n_classes = static_cast<int>(descriptor.class_names.size());
  for (const auto& item : manifest.items) {
    for (int lab : item.labels)
      require(lab >= 0 && lab < n_classes, ErrorCode::schema,
              descriptor.name + ": label index out of range");
  }
  require(!contains(descriptor.name), ErrorCode::state,
          descriptor.name + ": already registered");
  auto ds = std::make_shared<RegisteredDataset>(
      std::move(descriptor), std::move(manifest), std::move(base_dir));
  datasets_.push_back(ds);
  return ds;
}

DatasetHandle Registry::register_manifest_file(
    DatasetDescriptor descriptor, const std::filesystem::path& file) {
  if (descriptor.class_names.empty()) {
    const auto* known = find_known_dataset(descriptor.name);
    require(known != nullptr, ErrorCode::schema,
            descriptor.name + ": class_names required for unknown datasets");
    descriptor.class_names = known->class_names;
    descriptor.task_kind = known->task_kind;
  }
  Manifest manifest = read_manifest(file, descriptor);
  if (descriptor.source.empty()) descriptor.source = file.string();
  return register_dataset(std::move(descriptor), std::move(manifest),
                          file.parent_path());
}

DatasetHandle Registry::get(const std::string& name) const {
  for (const auto& ds : datasets_)
    if (ds->descriptor().name == name) return ds;
  raise(ErrorCode::resolution, "dataset '" + name + "' is not registered");
}

bool Registry::contains(const std::string& name) const {
  for (const auto& ds : datasets_)
    if (ds->descriptor().name == name) return true;
  return false;
}

std::vector<std::string> Registry::names() const {
  std::vector<std::string> out;
  for (const auto& ds : datasets_) out.push_back(ds->descriptor().name);
  return out;
}

// ---- split construction ----------------------------------------------------

namespace {

// Item's stratum: the class for single-label items, the active-label-count
// bucket for multilabel ones.
int stratum_of(const ManifestItem& item, TaskKind kind) {
  if (kind == TaskKind::binary) return item.labels.at(0);
  return static_cast<int>(item.labels.size());
}

// Hamilton / largest-remainder allocation of `total` slots across strata with
// proportional quotas, capped by per-stratum capacity.
std::vector<int> allocate_largest_remainder(const std::vector<double>& quotas,
                                            const std::vector<int>& capacity,
                                            int total) {
  const std::size_t k = quotas.size();
  std::vector<int> counts(k);
  std::vector<double> remainder(k);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    counts[i] = std::min(static_cast<int>(std::floor(quotas[i])), capacity[i]);
    remainder[i] = quotas[i] - std::floor(quotas[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder[a] > remainder[b];
  });
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t i : order) {
      if (assigned == total) break;
      if (counts[i] < capacity[i]) {
        ++counts[i];
        ++assigned;
        progressed = true;
      }
    }
    require(progressed, ErrorCode::argument, "split allocation infeasible");
  }
  while (assigned > total) {
    for (auto it = order.rbegin(); it != order.rend() && assigned > total; ++it) {
      if (counts[*it] > 0) {
        --counts[*it];
        --assigned;
      }
    }
  }
  return counts;
}

}  // namespace

DataSplit make_splits(const DatasetHandle& handle, std::array<double, 3> ratios,
                      std::uint64_t seed, bool stratified) {
  const auto& desc = handle->descriptor();
  require(!desc.has_predefined_splits, ErrorCode::state,
          desc.name + " ships predefined splits; use load_predefined_splits");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::argument,
          "split ratios must sum to 1");
  require(ratios[0] > 0 && ratios[1] >= 0 && ratios[2] >= 0,
          ErrorCode::argument, "split ratios must be nonnegative");

  const int n = static_cast<int>(desc.item_count);
  const int n_train = static_cast<int>(round_half_up(ratios[0] * n));
  const int n_trainval =
      static_cast<int>(round_half_up((ratios[0] + ratios[1]) * n));
  const int n_val = n_trainval - n_train;

  DataSplit split;
  split.seed = seed;
  split.ratios = ratios;
  Rng rng = make_stream(seed, RngStream::split);

  if (!stratified) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    split.train.assign(order.begin(), order.begin() + n_train);
    split.val.assign(order.begin() + n_train, order.begin() + n_trainval);
    split.test.assign(order.begin() + n_trainval, order.end());
  } else {
    std::map<int, std::vector<int>> strata;
    for (int i = 0; i < n; ++i)
      strata[stratum_of(handle->manifest().items[i], desc.task_kind)].push_back(i);
    std::vector<std::vector<int>> groups;
    for (auto& [key, idxs] : strata) {
      rng.shuffle(idxs);
      groups.push_back(std::move(idxs));
    }
    std::vector<double> train_quota, val_quota;
    std::vector<int> cap;
    for (const auto& g : groups) {
      const double sz = static_cast<double>(g.size());
      train_quota.push_back(ratios[0] * sz);
      cap.push_back(static_cast<int>(g.size()));
    }
    const auto train_counts = allocate_largest_remainder(train_quota, cap, n_train);
    std::vector<int> val_cap;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      val_quota.push_back(ratios[1] * static_cast<double>(groups[i].size()));
      val_cap.push_back(cap[i] - train_counts[i]);
    }
    const auto val_counts = allocate_largest_remainder(val_quota, val_cap, n_val);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto& g = groups[i];
      split.train.insert(split.train.end(), g.begin(), g.begin() + train_counts[i]);
      split.val.insert(split.val.end(), g.begin() + train_counts[i],
                       g.begin() + train_counts[i] + val_counts[i]);
      split.test.insert(split.test.end(),
                        g.begin() + train_counts[i] + val_counts[i], g.end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  split.validate(desc.item_count);
  return split;
}

DataSplit load_predefined_splits(const DatasetHandle& handle,
                                 const std::vector<std::vector<int>>& parts) {
  require(handle->descriptor().has_predefined_splits, ErrorCode::state,
          handle->descriptor().name + " has no predefined splits");
  require(parts.size() == 3, ErrorCode::argument,
          "expected train/val/test part lists");
  DataSplit split;
  split.train = parts[0];
  split.val = parts[1];
  split.test = parts[2];
  split.ratios = {0, 0, 0};
  split.validate(handle->descriptor().item_count);
  return split;
}

DataSplit load_predefined_split_files(
    const DatasetHandle& handle,
    const std::array<std::filesystem::path, 3>& part_files) {
  std::vector<std::vector<int>> parts;
  for (const auto& file : part_files) {
    std::ifstream in(file);
    require(in.good(), ErrorCode::io, "cannot open split part " + file.string());
    std::vector<int> idxs;
    int v;
    while (in >> v) idxs.push_back(v);
    parts.push_back(std::move(idxs));
  }
  return load_predefined_splits(handle, parts);
}

namespace {

// One permutation of the train part whose every prefix is approximately
// stratified; prefixes therefore nest across fractions.
std::vector<int> subsample_order(const DatasetHandle& handle,
                                 const std::vector<int>& train,
                                 std::uint64_t seed, bool stratified) {
  Rng rng = make_stream(seed, RngStream::subsample);
  if (!stratified) {
    std::vector<int> order = train;
    rng.shuffle(order);
    return order;
  }
  const TaskKind kind = handle->descriptor().task_kind;
  std::map<int, std::vector<int>> strata;
  for (int idx : train)
    strata[stratum_of(handle->manifest().items[idx], kind)].push_back(idx);
  std::vector<std::vector<int>> groups;
  for (auto& [key, idxs] : strata) {
    rng.shuffle(idxs);
    groups.push_back(std::move(idxs));
  }
  const double total = static_cast<double>(train.size());
  std::vector<std::size_t> taken(groups.size(), 0);
  std::vector<int> order;
  order.reserve(train.size());
  for (std::size_t t = 1; t <= train.size(); ++t) {
    // pick the group furthest behind its proportional share
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (taken[g] == groups[g].size()) continue;
      const double share = static_cast<double>(groups[g].size()) / total;
      const double deficit = share * static_cast<double>(t) -
                             static_cast<double>(taken[g]);
      if (deficit > best) {
        best = deficit;
        best_g = g;
      }
    }
    order.push_back(groups[best_g][taken[best_g]++]);
  }
  return order;
}

}  // namespace

DataSplit subsample_training(const DatasetHandle& handle,
                             const DataSplit& split, double fraction,
                             std::uint64_t seed, bool stratified) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::argument,
          "fraction must lie in (0, 1]");
  const std::size_t m = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::floor(fraction * static_cast<double>(split.train.size()))));
  if (m >= split.train.size()) return split;

  const auto order = subsample_order(handle, split.train, seed, stratified);
  DataSplit out = split;
  out.train.assign(order.begin(), order.begin() + static_cast<long>(m));
  std::sort(out.train.begin(), out.train.end());
  return out;
}

bool default_stratified(TaskKind kind) { return kind == TaskKind::binary; }

}  // namespace dtl
