#include "coatreg/checkpoint.hpp"

#include <cstdio>
#include <set>

#include "byteio.hpp"
#include "coatreg/error.hpp"

namespace coatreg {
namespace {

using ordered_json = nlohmann::ordered_json;

const ordered_json& field(const ordered_json& j, const char* name, const char* where) {
  if (!j.is_object()) throw DataError(std::string(where) + ": expected an object");
  auto it = j.find(name);
  if (it == j.end()) throw DataError(std::string(where) + ": missing field '" + name + "'");
  return *it;
}

std::uint64_t unsigned_field(const ordered_json& j, const char* name, const char* where) {
  const auto& v = field(j, name, where);
  if (!v.is_number_unsigned()) {
    throw DataError(std::string(where) + ": field '" + name + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::vector<std::size_t> unsigned_array(const ordered_json& j, const char* name, const char* where) {
  const auto& v = field(j, name, where);
  if (!v.is_array()) throw DataError(std::string(where) + ": field '" + name + "' must be an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) {
      throw DataError(std::string(where) + ": field '" + name + "' must hold non-negative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const CheckpointTensor& Checkpoint::require(const std::string& name, const Shape& shape) const {
  const CheckpointTensor* t = find(name);
  if (t == nullptr) throw DataError("checkpoint: missing tensor '" + name + "'");
  if (t->shape != shape) {
    throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_string(t->shape) + ", expected " +
                    shape_string(shape));
  }
  return *t;
}

ordered_json config_to_json(const NetworkConfig& c) {
  ordered_json j;
  j["in_shape"] = {c.in_shape.w, c.in_shape.h, c.in_shape.d};
  j["stem_channels"] = {c.stem_channels[0], c.stem_channels[1]};
  j["att_channels"] = c.att_channels;
  j["unet_depth"] = c.unet_depth;
  j["unet_depth_z"] = c.unet_depth_z;
  j["unet_channels"] = c.unet_channels;
  j["integration_steps"] = c.integration_steps;
  j["seed"] = c.seed;
  j["attention_budget"] = c.attention_budget;
  return j;
}

NetworkConfig config_from_json(const ordered_json& j) {
  constexpr const char* where = "checkpoint config";
  NetworkConfig c;
  const auto shape = unsigned_array(j, "in_shape", where);
  if (shape.size() != 3) throw DataError("checkpoint config: field 'in_shape' must hold [W,H,D]");
  c.in_shape = {shape[0], shape[1], shape[2]};
  const auto stem = unsigned_array(j, "stem_channels", where);
  if (stem.size() != 2) throw DataError("checkpoint config: field 'stem_channels' must hold two entries");
  c.stem_channels = {stem[0], stem[1]};
  c.att_channels = unsigned_field(j, "att_channels", where);
  c.unet_depth = unsigned_field(j, "unet_depth", where);
  c.unet_depth_z = unsigned_field(j, "unet_depth_z", where);
  c.unet_channels = unsigned_array(j, "unet_channels", where);
  c.integration_steps = unsigned_field(j, "integration_steps", where);
  c.seed = unsigned_field(j, "seed", where);
  c.attention_budget = unsigned_field(j, "attention_budget", where);
  try {
    c.validate();
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

std::string config_hash(const NetworkConfig& config) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : config_to_json(config).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  ordered_json manifest;
  manifest["meta"]["iteration"] = checkpoint.meta.iteration;
  manifest["meta"]["seed"] = checkpoint.meta.seed;
  manifest["meta"]["config_hash"] = config_hash(checkpoint.meta.config);
  manifest["meta"]["config"] = config_to_json(checkpoint.meta.config);
  manifest["meta"]["extra"] = checkpoint.meta.extra;
  manifest["tensors"] = ordered_json::array();

  std::vector<char> blob;
  std::set<std::string> seen;
  for (const auto& t : checkpoint.tensors) {
    if (!seen.insert(t.name).second) throw UsageError("checkpoint: duplicate tensor '" + t.name + "'");
    if (element_count(t.shape) != t.data.size()) {
      throw UsageError("checkpoint: tensor '" + t.name + "' data does not match its shape");
    }
    ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["offset"] = blob.size();
    entry["length"] = t.data.size() * 4;
    manifest["tensors"].push_back(entry);
    detail::append_f32le(blob, t.data);
  }
  // Blob first: a manifest never points at a missing blob after a crash.
  detail::write_file(detail::with_suffix(path, ".bin"), blob);
  detail::write_text(detail::with_suffix(path, ".json"), manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto text = detail::read_file(detail::with_suffix(path, ".json"));
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(text.begin(), text.end());
  } catch (const ordered_json::parse_error& e) {
    throw DataError("checkpoint manifest: malformed JSON: " + std::string(e.what()));
  }
  constexpr const char* where = "checkpoint manifest";
  Checkpoint ck;
  const auto& meta = field(manifest, "meta", where);
  ck.meta.iteration = unsigned_field(meta, "iteration", "checkpoint meta");
  ck.meta.seed = unsigned_field(meta, "seed", "checkpoint meta");
  ck.meta.config = config_from_json(field(meta, "config", "checkpoint meta"));
  const auto& hash = field(meta, "config_hash", "checkpoint meta");
  if (!hash.is_string() || hash.get<std::string>() != config_hash(ck.meta.config)) {
    throw DataError("checkpoint meta: config_hash does not match the stored config");
  }
  if (auto it = meta.find("extra"); it != meta.end()) ck.meta.extra = *it;

  const auto blob = detail::read_file(detail::with_suffix(path, ".bin"));
  const auto& tensors = field(manifest, "tensors", where);
  if (!tensors.is_array()) throw DataError("checkpoint manifest: field 'tensors' must be an array");
  std::set<std::string> seen;
  std::size_t expected_end = 0;
  for (const auto& entry : tensors) {
    CheckpointTensor t;
    const auto& name = field(entry, "name", "checkpoint tensor");
    if (!name.is_string()) throw DataError("checkpoint tensor: field 'name' must be a string");
    t.name = name.get<std::string>();
    if (!seen.insert(t.name).second) throw DataError("checkpoint tensor: duplicate name '" + t.name + "'");
    t.shape = unsigned_array(entry, "shape", "checkpoint tensor");
    const std::uint64_t offset = unsigned_field(entry, "offset", "checkpoint tensor");
    const std::uint64_t length = unsigned_field(entry, "length", "checkpoint tensor");
    if (length != element_count(t.shape) * 4) {
      throw DataError("checkpoint tensor '" + t.name + "': length does not match shape " + shape_string(t.shape));
    }
    if (offset % 4 != 0 || offset > blob.size() || length > blob.size() - offset) {
      throw DataError("checkpoint tensor '" + t.name + "' lies outside the blob (" + std::to_string(blob.size()) +
                      " bytes)");
    }
    t.data = detail::parse_f32le(blob.data() + offset, length / 4);
    expected_end = std::max<std::size_t>(expected_end, offset + length);
    ck.tensors.push_back(std::move(t));
  }
  if (expected_end != blob.size()) {
    throw DataError("checkpoint blob has " + std::to_string(blob.size() - expected_end) + " unreferenced trailing bytes");
  }
  return ck;
}

template <typename T>
std::vector<CheckpointTensor> network_tensors(const RegistrationNetwork<T>& network) {
  std::vector<CheckpointTensor> out;
  for (const auto& p : network.parameters()) {
    const auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

template <typename T>
RegistrationNetwork<T> network_from_checkpoint(const Checkpoint& checkpoint) {
  RegistrationNetwork<T> net(checkpoint.meta.config);
  for (auto& p : net.parameters()) {
    const auto& stored = checkpoint.require(p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(stored.data[i]);
  }
  return net;
}

template std::vector<CheckpointTensor> network_tensors<float>(const RegistrationNetwork<float>&);
template std::vector<CheckpointTensor> network_tensors<double>(const RegistrationNetwork<double>&);
template RegistrationNetwork<float> network_from_checkpoint<float>(const Checkpoint&);
template RegistrationNetwork<double> network_from_checkpoint<double>(const Checkpoint&);

}  // namespace coatreg
