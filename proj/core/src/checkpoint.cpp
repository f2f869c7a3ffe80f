#include "lfsynth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lfsynth/error.hpp"

namespace lfsynth {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr char kMagic[8] = {'L', 'F', 'S', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct Block {
  std::string name;
  const Tensor<float>* tensor;
};

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelWeights<float>& weights,
                     const AdamState<float>& adam, const CheckpointMeta& meta) {
  std::vector<Block> blocks;
  for (const auto& [name, t] : weights.params) blocks.push_back({name, &t});
  for (const auto& [name, s] : weights.norms) {
    blocks.push_back({"bn/" + name + "/mean", &s.running_mean});
    blocks.push_back({"bn/" + name + "/var", &s.running_var});
  }
  for (const auto& [name, t] : adam.m) blocks.push_back({"adam/m/" + name, &t});
  for (const auto& [name, t] : adam.v) blocks.push_back({"adam/v/" + name, &t});

  json tensors = json::object();
  std::uint64_t offset = 0;
  for (const auto& b : blocks) {
    tensors[b.name] = {{"dtype", "f32"}, {"shape", b.tensor->shape()}, {"offset", offset}};
    offset += b.tensor->numel() * sizeof(float);
  }
  const json index = {
      {"meta",
       {{"kind", std::string(to_string(weights.kind))},
        {"d_max", weights.d_max},
        {"seed_lineage", weights.seed_lineage},
        {"iteration", meta.iteration},
        {"loss", meta.loss},
        {"sampler_counter", meta.sampler_counter},
        {"adam_step", adam.step}}},
      {"tensors", tensors}};
  const std::string text = index.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blocks) {
      const auto d = b.tensor->data();
      os.write(reinterpret_cast<const char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(float)));
    }
    if (!os) throw LoadError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  const std::string who = "checkpoint " + path.string();

  char magic[8];
  std::uint64_t len = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw LoadError(who + ": bad magic");
  if (!is.read(reinterpret_cast<char*>(&len), 8) || len > (1u << 30))
    throw LoadError(who + ": truncated header");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError(who + ": truncated index");
  const auto data_start = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());

  Checkpoint ck;
  json index;
  try {
    index = json::parse(text);
    const json& m = index.at("meta");
    const NetKind kind = parse_net_kind(m.at("kind").get<std::string>());
    const auto lineage = m.at("seed_lineage").get<std::vector<std::uint64_t>>();
    ck.weights = make_model<float>(kind, lineage.empty() ? 0 : lineage.front(),
                                   m.at("d_max").get<double>());
    ck.weights.seed_lineage = lineage;
    ck.meta.iteration = m.at("iteration").get<std::size_t>();
    ck.meta.loss = m.at("loss").get<double>();
    ck.meta.sampler_counter = m.at("sampler_counter").get<std::uint64_t>();
    ck.adam.step = m.at("adam_step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw LoadError(who + ": malformed index: " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(who + ": " + e.what());
  }

  auto read_into = [&](const std::string& name, Tensor<float>& dst) {
    const json& tensors = index.at("tensors");
    if (!tensors.contains(name)) throw LoadError(who + ": missing tensor " + name);
    const json& e = tensors.at(name);
    const auto shape = e.at("shape").get<Shape>();
    if (e.at("dtype") != "f32") throw LoadError(who + ": " + name + " is not f32");
    if (dst.defined() && shape != dst.shape()) {
      throw LoadError(who + ": " + name + " has shape " + shape_str(shape) + ", model expects " +
                      shape_str(dst.shape()));
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = shape_numel(shape) * sizeof(float);
    if (data_start + offset + bytes > file_size) throw LoadError(who + ": " + name + " is truncated");
    std::vector<float> values(shape_numel(shape));
    is.seekg(static_cast<std::streamoff>(data_start + offset));
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    const bool grad = dst.defined() && dst.requires_grad();
    dst = Tensor<float>(shape, std::move(values));
    if (grad) dst.set_requires_grad(true);
  };

  try {
    for (auto& [name, t] : ck.weights.params) read_into(name, t);
    for (auto& [name, s] : ck.weights.norms) {
      read_into("bn/" + name + "/mean", s.running_mean);
      read_into("bn/" + name + "/var", s.running_var);
    }
    for (const auto& [name, t] : ck.weights.params) {
      const std::string mk = "adam/m/" + name;
      if (!index.at("tensors").contains(mk)) continue;
      Tensor<float> m(t.shape()), v(t.shape());
      read_into(mk, m);
      read_into("adam/v/" + name, v);
      ck.adam.m.emplace(name, m);
      ck.adam.v.emplace(name, v);
    }
  } catch (const json::exception& e) {
    throw LoadError(who + ": malformed index: " + e.what());
  }
  return ck;
}

}  // namespace lfsynth
