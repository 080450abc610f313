#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "transgrec/error.hpp"
#include "transgrec/model.hpp"

namespace transgrec {

using json = nlohmann::json;

Variant parse_variant(const std::string& tag) {
  if (tag == "E" || tag == "e") return Variant::E;
  if (tag == "A" || tag == "a") return Variant::A;
  throw InvalidInput("unknown variant '" + tag + "' (expected E or A)");
}

nk::Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return nk::Pooling::mean;
  if (s == "max") return nk::Pooling::max;
  throw InvalidInput("unknown pooling '" + s + "' (expected mean or max)");
}

std::string pooling_name(nk::Pooling p) { return p == nk::Pooling::mean ? "mean" : "max"; }

nk::Activation parse_activation(const std::string& s) {
  if (s == "relu") return nk::Activation::relu;
  if (s == "identity") return nk::Activation::identity;
  if (s == "sigmoid") return nk::Activation::sigmoid;
  throw InvalidInput("unknown activation '" + s + "'");
}

std::string activation_name(nk::Activation a) {
  switch (a) {
    case nk::Activation::relu:
      return "relu";
    case nk::Activation::identity:
      return "identity";
    case nk::Activation::sigmoid:
      return "sigmoid";
  }
  return "relu";
}

namespace {

constexpr char kMagic[4] = {'T', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + bytes > in.size()) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += bytes;
  return v;
}

std::vector<std::pair<std::string, const nk::Tensorf*>> all_tensors(const Checkpoint& c) {
  auto out = c.params.named();
  out.emplace_back("user_final", &c.user_final);
  out.emplace_back("item_final", &c.item_final);
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto tensors = all_tensors(ckpt);
  json header;
  header["format"] = "transgrec-checkpoint";
  header["variant"] = variant_tag(ckpt.variant);
  header["seed"] = ckpt.seed;
  header["epoch"] = ckpt.epoch;
  header["hyperparameters"] = ckpt.hyperparameters;
  header["layers"] = ckpt.params.gnn.layers();
  header["users"] = ckpt.users;
  header["items"] = ckpt.items;
  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    list.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size();
  }
  header["tensors"] = std::move(list);
  const std::string head = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, head.size());
  out += head;
  out.reserve(out.size() + offset * 4);
  for (const auto& [name, t] : tensors) {
    for (float f : t->data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("not a checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get_le(bytes, pos, 4);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto head_len = get_le(bytes, pos, 8);
  if (pos + head_len > bytes.size()) throw DataError("truncated checkpoint header");
  Checkpoint c;
  std::size_t layers = 0;
  json list;
  try {
    const json header = json::parse(bytes.substr(pos, head_len));
    pos += head_len;
    c.variant = parse_variant(header.at("variant").get<std::string>());
    c.seed = header.at("seed").get<std::uint64_t>();
    c.epoch = header.at("epoch").get<std::size_t>();
    c.hyperparameters = header.at("hyperparameters");
    c.users = header.at("users").get<std::vector<std::string>>();
    c.items = header.at("items").get<std::vector<std::string>>();
    layers = header.at("layers").get<std::size_t>();
    list = header.at("tensors");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }

  const std::size_t blob_start = pos;
  auto read_tensor = [&](const json& entry) {
    const auto shape = entry.at("shape").get<nk::Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::size_t p = blob_start + offset * 4;
    nk::Tensorf t(shape);
    for (auto& f : t.data()) {
      const auto bits = static_cast<std::uint32_t>(get_le(bytes, p, 4));
      std::memcpy(&f, &bits, 4);
    }
    return t;
  };

  c.params.gnn.user_weights.resize(layers);
  c.params.gnn.item_weights.resize(layers);
  for (const auto& entry : list) {
    const auto name = entry.at("name").get<std::string>();
    nk::Tensorf t = read_tensor(entry);
    auto indexed = [&](const std::string& prefix, std::vector<nk::Tensorf>& dst) {
      const auto idx = std::stoul(name.substr(prefix.size())) - 1;
      if (dst.size() <= idx) dst.resize(idx + 1);
      dst[idx] = std::move(t);
    };
    if (name == "user_emb") c.params.gnn.user_emb = std::move(t);
    else if (name == "item_emb") c.params.gnn.item_emb = std::move(t);
    else if (name == "reduce") c.params.gnn.reduce = std::move(t);
    else if (name == "user_final") c.user_final = std::move(t);
    else if (name == "item_final") c.item_final = std::move(t);
    else if (name.rfind("user_weight.", 0) == 0) indexed("user_weight.", c.params.gnn.user_weights);
    else if (name.rfind("item_weight.", 0) == 0) indexed("item_weight.", c.params.gnn.item_weights);
    else if (name.rfind("transfer.", 0) == 0) indexed("transfer.", c.params.transfer.weights);
    else if (name.rfind("disc.", 0) == 0) indexed("disc.", c.params.disc.weights);
    else throw DataError("unknown checkpoint tensor '" + name + "'");
  }
  if (c.params.gnn.user_weights.size() != layers || c.params.gnn.item_weights.size() != layers) {
    throw DataError("checkpoint layer count does not match its tensors");
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace transgrec
