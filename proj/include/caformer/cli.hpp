#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "caformer/gradcheck.hpp"

namespace caformer::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string config_path;  // empty for built-in defaults
  std::uint64_t seed = 0;
  std::vector<Artifact> artifacts;
};

std::string sha256_hex(const std::filesystem::path& file);
RunManifest read_manifest(const std::filesystem::path& file);

struct ForwardArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> params;  // directory written by save_params
  std::uint64_t seed = 0;
  int frames = 1;
  std::filesystem::path out = "out";
};

struct ProfileArgs {
  std::string scale = "desk";
  std::optional<std::filesystem::path> config;
  bool cte = false;
  bool cma = false;
  bool giga = false;
  std::uint64_t seed = 0;
};

struct GradcheckArgs {
  GradScope scope = GradScope::kCme;
  std::uint64_t seed = 0;
  bool corrupt = false;
};

struct SynthArgs {
  std::optional<std::filesystem::path> config;
  std::uint64_t seed = 0;
  std::filesystem::path out = "synth";
};

struct GoldenArgs {
  std::filesystem::path file;
  bool update = false;
  int frames = 4;
};

int cmd_forward(const ForwardArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_golden(const GoldenArgs& args, std::ostream& out, std::ostream& err);

/// Worker count for frame-level parallelism: CAFORMER_THREADS when set and
/// positive, else the hardware concurrency, never more than `jobs`.
int worker_count(int jobs);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace caformer::cli
