#include "hybridsep/checkpoint.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace hybridsep::checkpoint {

using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints store little-endian doubles");

constexpr char kMagic[8] = {'H', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint " + path);
  return v;
}

// Optimizer moments of the parameters whose optimizer name starts with `prefix`.
void add_moments(Checkpoint& ckpt, AdamW& opt, const std::string& prefix) {
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (name.rfind(prefix, 0) != 0) continue;
    ckpt.tensors.emplace_back("opt.m." + name, Tensor::from(t.shape(), opt.first_moments()[i]));
    ckpt.tensors.emplace_back("opt.v." + name, Tensor::from(t.shape(), opt.second_moments()[i]));
  }
  ckpt.extra["optimizer_steps"] = opt.step_count();
}

void load_moments(const Checkpoint& ckpt, AdamW& opt, const std::string& prefix) {
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].first;
    if (name.rfind(prefix, 0) != 0) continue;
    auto m = ckpt.tensor("opt.m." + name).data(), v = ckpt.tensor("opt.v." + name).data();
    if (m.size() != opt.first_moments()[i].size()) throw CheckpointError("moment size mismatch for " + name);
    opt.first_moments()[i].assign(m.begin(), m.end());
    opt.second_moments()[i].assign(v.begin(), v.end());
  }
  opt.set_step_count(ckpt.extra.at("optimizer_steps").get<int64_t>());
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw CheckpointError("checkpoint of kind '" + kind + "' has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save(const std::string& path, const Checkpoint& ckpt) {
  json header{{"format_version", ckpt.format_version},
              {"kind", ckpt.kind},
              {"step", ckpt.step},
              {"encoder_fingerprint", ckpt.encoder_fingerprint},
              {"config", ckpt.config},
              {"extra", ckpt.extra},
              {"tensors", json::array()}};
  for (const auto& [name, t] : ckpt.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, ckpt.format_version);
    write_pod<uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw CheckpointError(path + " is not a checkpoint");
  Checkpoint ckpt;
  ckpt.format_version = read_pod<uint32_t>(in, path);
  if (ckpt.format_version != kFormatVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.format_version) + " in " + path);
  const auto len = read_pod<uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint " + path);
  json header;
  try {
    header = json::parse(text);
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.encoder_fingerprint = header.at("encoder_fingerprint").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.extra = header.at("extra");
    for (const auto& entry : header.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      Buffer values(static_cast<size_t>(shape_numel(shape)));
      if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
        throw CheckpointError("truncated checkpoint " + path);
      ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor::from_buffer(shape, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  return ckpt;
}

void add_module(Checkpoint& ckpt, const nn::Module& m, const std::string& prefix) {
  for (const auto& [name, t] : m.named_parameters()) ckpt.tensors.emplace_back(prefix + name, t.detach());
}

void load_module(const Checkpoint& ckpt, const nn::Module& m, const std::string& prefix) {
  for (auto [name, t] : m.named_parameters()) {
    const Tensor& src = ckpt.tensor(prefix + name);
    if (src.shape() != t.shape())
      throw CheckpointError("shape mismatch for '" + prefix + name + "': checkpoint " + shape_str(src.shape()) +
                            ", model " + shape_str(t.shape()));
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
}

void save_train_state(const std::string& dir, const act::TrainState& state, const json& config,
                      const std::string& encoder_fingerprint) {
  std::filesystem::create_directories(dir);
  auto make = [&](const std::string& kind, const nn::Module& m, AdamW& opt, const std::string& opt_prefix) {
    Checkpoint c;
    c.kind = kind;
    c.step = state.step;
    c.encoder_fingerprint = encoder_fingerprint;
    c.config = config;
    c.extra["seed"] = state.seed;
    add_module(c, m);
    add_moments(c, opt, opt_prefix);
    save((std::filesystem::path(dir) / (kind + ".ckpt")).string(), c);
  };
  make("asm", *state.asm_model, *state.opt_asm, "asm.");
  make("cd", *state.cd, *state.opt_asm, "cd.");
  make("d", *state.disc, *state.opt_d, "d.");
}

void load_train_state(const std::string& dir, act::TrainState& state) {
  auto get = [&](const std::string& kind) {
    Checkpoint c = load((std::filesystem::path(dir) / (kind + ".ckpt")).string());
    if (c.kind != kind) throw CheckpointError("expected a checkpoint of kind '" + kind + "', found '" + c.kind + "'");
    return c;
  };
  Checkpoint a = get("asm"), c = get("cd"), d = get("d");
  if (a.step != c.step || a.step != d.step) throw CheckpointError("asm, cd and d checkpoints are from different steps");
  load_module(a, *state.asm_model);
  load_module(c, *state.cd);
  load_module(d, *state.disc);
  load_moments(a, *state.opt_asm, "asm.");
  load_moments(c, *state.opt_asm, "cd.");
  load_moments(d, *state.opt_d, "d.");
  state.step = a.step;
  state.seed = a.extra.at("seed").get<uint64_t>();
}

}  // namespace hybridsep::checkpoint
