#pragma once

// Command-line front end: synth-data, train-stage1, train-stage2, separate,
// evaluate and inspect.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hybridsep/config.h"
#include "hybridsep/encoders.h"

namespace hybridsep::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

/// Bad flags, missing inputs or inconsistent artifacts; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one command; returns the process exit code. Messages go to `out` and
/// errors to `err`. argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Directory from HYBRIDSEP_CACHE, or empty when unset.
std::string cache_dir();

/// The frozen encoder suite a config selects. A toy contrastive suite is
/// trained on a seeded synthetic corpus, or reloaded from the cache directory
/// when one is set and already holds it.
std::shared_ptr<encoders::EncoderSuite> make_suite(const config::RunConfig& cfg, std::ostream& log);

struct ManifestEntry {
  std::string id;
  std::string mixture_path;  // absolute
  std::string target_path;   // absolute
  std::string query;
  std::string kind;
  double snr_db = 0.0;
  std::vector<std::string> keywords;
};

/// Reads a line-delimited manifest; relative paths resolve against its directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace hybridsep::cli
