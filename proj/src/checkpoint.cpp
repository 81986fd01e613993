#include "dtl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

#include "dtl/error.hpp"

namespace dtl {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'T', 'L', 'W', '0', '0', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

struct ArchiveEntry {
  std::vector<int> shape;
  std::uint8_t is_buffer = 0;
  std::vector<float> data;
};

std::map<std::string, ArchiveEntry> read_archive(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorCode::resolution,
          "parameter archive not found: " + file.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::io,
          file.string() + ": not a parameter archive");
  const auto count = get<std::uint32_t>(in);
  std::map<std::string, ArchiveEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    ArchiveEntry entry;
    entry.is_buffer = get<std::uint8_t>(in);
    const auto ndim = get<std::uint8_t>(in);
    std::int64_t total = 1;
    for (int d = 0; d < ndim; ++d) {
      entry.shape.push_back(get<std::int32_t>(in));
      total *= entry.shape.back();
    }
    entry.data.resize(static_cast<std::size_t>(total));
    in.read(reinterpret_cast<char*>(entry.data.data()),
            static_cast<std::streamsize>(total * sizeof(float)));
    require(in.good(), ErrorCode::io, file.string() + ": truncated archive");
    entries.emplace(std::move(name), std::move(entry));
  }
  return entries;
}

void restore_groups(const std::filesystem::path& dir, ModelGraph& model,
                    bool backbone_only) {
  const auto entries = read_archive(dir / "params.bin");
  for (auto* g : model.param_groups()) {
    if (backbone_only && g->name.rfind("features.", 0) != 0) continue;
    auto it = entries.find(g->name);
    require(it != entries.end(), ErrorCode::resolution,
            dir.string() + ": missing group '" + g->name +
                "' (architecture mismatch)");
    require(it->second.shape == g->shape, ErrorCode::resolution,
            dir.string() + ": shape mismatch for '" + g->name + "'");
    g->value = it->second.data;
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelGraph& model,
                     const CheckpointMeta& meta) {
  require(model.materialized(), ErrorCode::state,
          "cannot checkpoint an unmaterialized model");
  std::filesystem::create_directories(dir);

  std::ofstream out(dir / "params.bin", std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write " + (dir / "params.bin").string());
  out.write(kMagic, 8);
  const auto groups = model.param_groups();
  put(out, static_cast<std::uint32_t>(groups.size()));
  for (const auto* g : groups) {
    put(out, static_cast<std::uint16_t>(g->name.size()));
    out.write(g->name.data(), static_cast<std::streamsize>(g->name.size()));
    put(out, static_cast<std::uint8_t>(g->is_buffer ? 1 : 0));
    put(out, static_cast<std::uint8_t>(g->shape.size()));
    for (int d : g->shape) put(out, static_cast<std::int32_t>(d));
    out.write(reinterpret_cast<const char*>(g->value.data()),
              static_cast<std::streamsize>(g->value.size() * sizeof(float)));
  }
  require(out.good(), ErrorCode::io, "short write to params.bin");
  out.close();

  json j;
  j["family"] = meta.family.empty() ? to_string(model.family()) : meta.family;
  j["input_size"] = meta.input_size[0] > 0
                        ? meta.input_size
                        : model.input_hw();
  j["output_dim"] = meta.output_dim > 0 ? meta.output_dim : model.output_dim();
  j["output_activation"] = meta.output_activation;
  j["class_names"] =
      meta.class_names.empty() ? model.class_names() : meta.class_names;
  j["strategy_lineage"] = {{"mode", meta.mode},
                           {"weight_origin_chain", meta.weight_origin_chain},
                           {"seed", meta.seed},
                           {"train_config_hash", meta.train_config_hash}};
  std::ofstream mout(dir / "meta.json");
  require(mout.good(), ErrorCode::io, "cannot write " + (dir / "meta.json").string());
  mout << j.dump(2) << "\n";
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  require(in.good(), ErrorCode::resolution,
          "checkpoint sidecar not found: " + (dir / "meta.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorCode::io, (dir / "meta.json").string() + ": " + e.what());
  }
  CheckpointMeta meta;
  meta.family = j.value("family", "");
  if (j.contains("input_size"))
    meta.input_size = j.at("input_size").get<std::array<int, 2>>();
  meta.output_dim = j.value("output_dim", 0);
  meta.output_activation = j.value("output_activation", "sigmoid_per_label");
  if (j.contains("class_names"))
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (j.contains("strategy_lineage")) {
    const auto& lin = j.at("strategy_lineage");
    meta.mode = lin.value("mode", "");
    if (lin.contains("weight_origin_chain"))
      meta.weight_origin_chain =
          lin.at("weight_origin_chain").get<std::vector<std::string>>();
    meta.seed = lin.value("seed", std::uint64_t{0});
    meta.train_config_hash = lin.value("train_config_hash", "");
  }
  return meta;
}

void load_checkpoint(const std::filesystem::path& dir, ModelGraph& model) {
  restore_groups(dir, model, /*backbone_only=*/false);
}

void load_backbone(const std::filesystem::path& dir, ModelGraph& model) {
  restore_groups(dir, model, /*backbone_only=*/true);
}

ModelGraph load_checkpoint_model(const std::filesystem::path& dir) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  const Family family = family_from_string(meta.family);
  ModelGraph model = make_family_graph(family, meta.input_size);
  if (meta.output_dim > 0) {
    TaskSpec task;
    task.class_names = meta.class_names;
    task.kind = (meta.class_names.size() > 2 ||
                 meta.output_dim > 2)
                    ? TaskKind::multilabel
                    : TaskKind::binary;
    HeadOptions opts;
    opts.activation = output_activation_from_string(meta.output_activation);
    // Head conv width is recoverable from the archive; probe it.
    const auto entries = read_archive(dir / "params.bin");
    auto it = entries.find("head.conv.weight");
    if (it != entries.end()) opts.conv_filters = it->second.shape.at(0);
    attach_head(model, task, opts);
    require(model.output_dim() == meta.output_dim, ErrorCode::resolution,
            dir.string() + ": head output_dim mismatch");
  }
  load_checkpoint(dir, model);
  return model;
}

// ---- WeightStore ------------------------------------------------------------

namespace {

std::filesystem::path artifact_dir(const std::filesystem::path& root,
                                   Family family) {
  return root / (to_string(family) + "-imagenet");
}

}  // namespace

bool WeightStore::has(Family family) const {
  return std::filesystem::exists(artifact_dir(root_, family) / "params.bin");
}

std::filesystem::path WeightStore::resolve(Family family) const {
  const auto dir = artifact_dir(root_, family);
  require(std::filesystem::exists(dir / "params.bin"), ErrorCode::resolution,
          "imagenet weight artifact for " + to_string(family) +
              " not found at " + dir.string() +
              "; populate the weight store (see README: weights init-store)");
  return dir;
}

std::filesystem::path WeightStore::synthesize(const std::filesystem::path& root,
                                              Family family,
                                              std::array<int, 2> input_hw,
                                              std::uint64_t seed) {
  require(family_supports_imagenet(family), ErrorCode::argument,
          to_string(family) + " does not take imagenet weights");
  ModelGraph model = make_family_graph(family, input_hw);
  model.init_random(seed);
  CheckpointMeta meta;
  meta.family = to_string(family);
  meta.input_size = input_hw;
  meta.mode = "imagenet_standin";
  meta.weight_origin_chain = {"imagenet"};
  meta.seed = seed;
  const auto dir = artifact_dir(root, family);
  save_checkpoint(dir, model, meta);
  return dir;
}

}  // namespace dtl
