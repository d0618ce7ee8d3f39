#pragma once

// One binary container for every trained module: an 8-byte magic, a format
// version, a JSON header (kind, step, config snapshot, encoder fingerprint,
// tensor table) and the raw little-endian doubles of each tensor in order.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridsep/act.h"
#include "hybridsep/nn.h"

namespace hybridsep::checkpoint {

constexpr uint32_t kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  uint32_t format_version = kFormatVersion;
  std::string kind;  // "asm", "cd", "d", "aet", "fe", "toy_clap"
  int64_t step = 0;
  std::string encoder_fingerprint;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  /// Throws CheckpointError when absent.
  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Writes through a temporary file and a rename.
void save(const std::string& path, const Checkpoint& ckpt);
/// Throws CheckpointError on a bad magic, unknown version or truncated file.
Checkpoint load(const std::string& path);

/// Parameter copies under `prefix` + parameter path.
void add_module(Checkpoint& ckpt, const nn::Module& m, const std::string& prefix = "");
/// Copies stored values into the module's parameters; every parameter must be
/// present with a matching shape.
void load_module(const Checkpoint& ckpt, const nn::Module& m, const std::string& prefix = "");

/// Saves ASM, CD and D (with their optimizer moments) as asm.ckpt, cd.ckpt and
/// d.ckpt in `dir`.
void save_train_state(const std::string& dir, const act::TrainState& state, const nlohmann::json& config,
                      const std::string& encoder_fingerprint);
/// Restores parameters, moments and the step into a state built from the
/// same configuration.
void load_train_state(const std::string& dir, act::TrainState& state);

}  // namespace hybridsep::checkpoint
