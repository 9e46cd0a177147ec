#include "caformer/cli.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "caformer/config_io.hpp"
#include "caformer/numerics/catm.hpp"
#include "caformer/profiler.hpp"
#include "caformer/synthetic.hpp"

namespace caformer::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr double kReferenceBackboneG = 58.43;
constexpr double kReferenceCteBackboneG = 42.91;
constexpr double kGradTolerance = 1e-6;
constexpr double kGoldenTolerance = 1e-12;

std::string box_line(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g", b.cx, b.cy, b.w, b.h);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
  if (!os) throw FormatError("write failed: " + path.string());
}

TrackerConfig config_or_default(const std::optional<fs::path>& path) {
  return path ? load_config(*path) : TrackerConfig::desk();
}

TrackerParams params_for(const TrackerConfig& cfg, const std::optional<fs::path>& dir) {
  return dir ? load_params(*dir, cfg) : init_params(cfg, cfg.seed);
}

/// Runs `work(i)` for i in [0, jobs) on up to worker_count(jobs) threads.
template <typename F>
void parallel_for(int jobs, F&& work) {
  const int workers = worker_count(jobs);
  if (workers <= 1) {
    for (int i = 0; i < jobs; ++i) work(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < jobs; i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Maps library exceptions onto exit codes.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  auto& artifacts = j["artifacts"] = json::array();
  for (const Artifact& a : m.artifacts) artifacts.push_back({{"path", a.path}, {"sha256", a.sha256}});
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

void add_artifact(RunManifest& m, const fs::path& dir, const std::string& relative) {
  m.artifacts.push_back({relative, sha256_hex(dir / relative)});
}

const char* scope_name(GradScope s) {
  switch (s) {
    case GradScope::kCme: return "cme";
    case GradScope::kBlock: return "block";
    case GradScope::kAll: return "all";
  }
  return "?";
}

}  // namespace

std::string sha256_hex(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot read " + file.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0)
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

RunManifest read_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("cannot read " + file.string());
  const json j = json::parse(is);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_path = j.at("config_path").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& a : j.at("artifacts"))
    m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
  return m;
}

int worker_count(int jobs) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAFORMER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) workers = static_cast<int>(v);
  }
  return std::max(1, std::min(workers, jobs));
}

int cmd_forward(const ForwardArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.frames < 1) throw ConfigError("frames: must be at least 1");
    const TrackerConfig cfg = config_or_default(args.config);
    const TrackerParams params = params_for(cfg, args.params);

    std::vector<SyntheticFrame> frames(static_cast<std::size_t>(args.frames));
    std::vector<ForwardResult> results(frames.size());
    parallel_for(args.frames, [&](int i) {
      const std::size_t k = static_cast<std::size_t>(i);
      frames[k] = make_synthetic_frame(cfg, args.seed + k);
      results[k] = forward(cfg, frames[k].inputs, params);
    });

    fs::create_directories(args.out / "maps");
    RunManifest manifest;
    manifest.command = "forward";
    manifest.config_path = args.config ? args.config->string() : "";
    manifest.seed = args.seed;

    std::string boxes, diagnostics, keepsets;
    std::vector<BBox> predicted, truth;
    for (std::size_t k = 0; k < results.size(); ++k) {
      const ForwardResult& r = results[k];
      boxes += box_line(r.box) + "\n";
      predicted.push_back(r.box);
      truth.push_back(frames[k].truth);
      for (const LayerRecord& rec : r.diagnostics.layers) {
        json line{{"frame", k},
                  {"layer", rec.layer},
                  {"tokens", rec.tokens},
                  {"cross_modulated", rec.cross_modulated}};
        line["kept"] = rec.keep ? json(rec.keep->kept()) : json(nullptr);
        diagnostics += line.dump() + "\n";
      }
      keepsets += "# frame " + std::to_string(k) + "\n" + format_chain(r.diagnostics.chain);
      if (!keepsets.empty() && keepsets.back() != '\n') keepsets += "\n";

      char tag[16];
      std::snprintf(tag, sizeof tag, "%03zu", k);
      catm::save(args.out / "maps" / ("score_" + std::string(tag) + ".catm"), r.maps.score);
      catm::save(args.out / "maps" / ("offset_" + std::string(tag) + ".catm"), r.maps.offset);
      catm::save(args.out / "maps" / ("size_" + std::string(tag) + ".catm"), r.maps.size);
    }
    const TrackingScores scores =
        precision_success(predicted, truth, static_cast<double>(cfg.search_side));
    const json metrics{{"frames", results.size()},
                       {"precision", scores.precision},
                       {"success", scores.success}};

    write_text(args.out / "bbox.txt", boxes);
    write_text(args.out / "diagnostics.jsonl", diagnostics);
    write_text(args.out / "keepsets.txt", keepsets);
    write_text(args.out / "metrics.json", metrics.dump(2) + "\n");
    for (const char* name : {"bbox.txt", "diagnostics.jsonl", "keepsets.txt", "metrics.json"})
      add_artifact(manifest, args.out, name);
    for (std::size_t k = 0; k < results.size(); ++k) {
      char tag[16];
      std::snprintf(tag, sizeof tag, "%03zu", k);
      for (const char* kind : {"score_", "offset_", "size_"})
        add_artifact(manifest, args.out, "maps/" + std::string(kind) + tag + ".catm");
    }
    write_manifest(args.out, manifest);

    out << boxes;
    out << "wrote " << manifest.artifacts.size() << " artifacts to " << args.out.string() << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::size_t expected = 0;
    const GradCheckReport report = run_gradcheck(args.scope, args.seed, args.corrupt, &expected);
    for (const TensorCheck& t : report.tensors) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%-28s max_rel_error %.3e  |grad| %.3e%s\n", t.name.c_str(),
                    t.max_rel_error, t.gradient_norm,
                    t.zero_gradient ? "  (zero gradient, below resolution)" : "");
      out << buf;
    }
    out << "scope " << scope_name(args.scope) << ": " << report.tensors.size() << " tensors, worst "
        << report.worst() << "\n";
    if (report.tensors.size() != expected) {
      err << "gradcheck: checked " << report.tensors.size() << " tensors but scope owns "
          << expected << "\n";
      return static_cast<int>(kCheckFailed);
    }
    const std::string failing = report.first_failure(kGradTolerance);
    if (!failing.empty()) {
      err << "gradcheck: " << failing << " exceeds relative error " << kGradTolerance << "\n";
      return static_cast<int>(kCheckFailed);
    }
    return static_cast<int>(kOk);
  });
}

int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.scale == "paper") {
      TrackerConfig cfg = TrackerConfig::full();
      if (args.cte) cfg.cte_layers = TrackerConfig::desk().cte_layers;
      if (args.cma) cfg.cma_layers = TrackerConfig::desk().cma_layers;
      const CostReport report = estimate(cfg, true);
      json j = json::parse(to_json(report, args.giga));
      const double target = args.cte ? kReferenceCteBackboneG : kReferenceBackboneG;
      const double got = static_cast<double>(report.backbone_macs) / 1e9;
      j["reference_g"] = target;
      j["relative_deviation"] = (got - target) / target;
      out << j.dump(2) << "\n";
      char buf[160];
      std::snprintf(buf, sizeof buf, "backbone %.2f G vs reference %.2f G (%+.2f%%)\n", got, target,
                    100.0 * (got - target) / target);
      out << buf;
      return static_cast<int>(kOk);
    }
    if (args.scale != "desk") throw ConfigError("scale: expected desk or paper, got " + args.scale);

    TrackerConfig cfg = config_or_default(args.config);
    if (args.cte) cfg.cte_layers = TrackerConfig::desk().cte_layers;
    if (args.cma) cfg.cma_layers = TrackerConfig::desk().cma_layers;
    const CostReport predicted = estimate(cfg);
    const SyntheticFrame frame = make_synthetic_frame(cfg, args.seed);
    const CostReport counted = measure(cfg, init_params(cfg, cfg.seed), frame.inputs);
    out << to_json(predicted, args.giga) << "\n";
    if (!(predicted == counted)) {
      err << "profile: estimate and measured counts disagree\n"
          << "estimate: " << to_json(predicted) << "\nmeasured: " << to_json(counted) << "\n";
      return static_cast<int>(kCheckFailed);
    }
    out << "estimate == measure: " << predicted.total_with_io() << " MACs\n";
    return static_cast<int>(kOk);
  });
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const TrackerConfig cfg = config_or_default(args.config);
    const SyntheticFrame frame = make_synthetic_frame(cfg, args.seed);
    fs::create_directories(args.out);
    catm::save(args.out / "template_rgb.catm", frame.inputs.rgb.template_image.data);
    catm::save(args.out / "search_rgb.catm", frame.inputs.rgb.search_image.data);
    catm::save(args.out / "template_tir.catm", frame.inputs.tir.template_image.data);
    catm::save(args.out / "search_tir.catm", frame.inputs.tir.search_image.data);
    write_text(args.out / "truth.txt", box_line(frame.truth) + "\n");
    out << "truth " << box_line(frame.truth) << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_golden(const GoldenArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const TrackerConfig cfg = TrackerConfig::desk();
    const TrackerParams params = init_params(cfg, cfg.seed);
    std::vector<BBox> boxes(static_cast<std::size_t>(args.frames));
    parallel_for(args.frames, [&](int i) {
      boxes[static_cast<std::size_t>(i)] =
          forward(cfg, make_synthetic_frame(cfg, static_cast<std::uint64_t>(i)).inputs, params).box;
    });
    if (args.update) {
      std::string text;
      for (const BBox& b : boxes) text += box_line(b) + "\n";
      write_text(args.file, text);
      out << "updated " << args.file.string() << "\n";
      return static_cast<int>(kOk);
    }
    std::ifstream is(args.file);
    if (!is) throw FormatError("cannot read golden file " + args.file.string());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      BBox g;
      if (!(is >> g.cx >> g.cy >> g.w >> g.h))
        throw FormatError("golden file has fewer than " + std::to_string(boxes.size()) + " boxes");
      const double diff = std::max({std::abs(g.cx - boxes[k].cx), std::abs(g.cy - boxes[k].cy),
                                    std::abs(g.w - boxes[k].w), std::abs(g.h - boxes[k].h)});
      if (diff > kGoldenTolerance) {
        err << "golden: frame " << k << " differs by " << diff << "\n  expected "
            << box_line(g) << "\n  got      " << box_line(boxes[k]) << "\n";
        return static_cast<int>(kCheckFailed);
      }
    }
    out << "golden: " << boxes.size() << " boxes match\n";
    return static_cast<int>(kOk);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CAFormer RGB-T tracker mechanism"};
  app.require_subcommand(1);

  ForwardArgs fwd;
  std::string fwd_config, fwd_params;
  auto* forward_cmd = app.add_subcommand("forward", "Run the tracker on seeded synthetic frames");
  forward_cmd->add_option("--config", fwd_config, "JSON config file")->check(CLI::ExistingFile);
  forward_cmd->add_option("--params", fwd_params, "Parameter directory")->check(CLI::ExistingDirectory);
  forward_cmd->add_option("--seed", fwd.seed, "Frame seed");
  forward_cmd->add_option("--frames", fwd.frames, "Number of frames")->check(CLI::PositiveNumber);
  forward_cmd->add_option("--out", fwd.out, "Output directory");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--scope", grad.scope, "cme, block or all")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, GradScope>{
              {"cme", GradScope::kCme}, {"block", GradScope::kBlock}, {"all", GradScope::kAll}},
          CLI::ignore_case));
  grad_cmd->add_option("--seed", grad.seed, "Seed");
  grad_cmd->add_flag("--corrupt-gradient", grad.corrupt)->group("");

  ProfileArgs prof;
  std::string prof_config;
  auto* prof_cmd = app.add_subcommand("profile", "MAC cost report");
  prof_cmd->add_option("--scale", prof.scale, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  prof_cmd->add_option("--config", prof_config, "JSON config file (desk scale)")
      ->check(CLI::ExistingFile);
  prof_cmd->add_flag("--cte", prof.cte, "Eliminate candidates after layers 4, 7, 10");
  prof_cmd->add_flag("--cma", prof.cma, "Cross-modulate layers 10, 11, 12");
  prof_cmd->add_flag("--giga", prof.giga, "Also render totals in G");
  prof_cmd->add_option("--seed", prof.seed, "Frame seed for the measured pass");

  SynthArgs synth;
  std::string synth_config;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic RGB-T frame as CATM files");
  synth_cmd->add_option("--config", synth_config, "JSON config file")->check(CLI::ExistingFile);
  synth_cmd->add_option("--seed", synth.seed, "Seed");
  synth_cmd->add_option("--out", synth.out, "Output directory");

  GoldenArgs golden;
  auto* golden_cmd = app.add_subcommand("golden", "Check or rewrite the golden box file");
  golden_cmd->add_option("--file", golden.file, "Golden file")->required();
  golden_cmd->add_option("--frames", golden.frames, "Frames (seeds 0..n-1)")
      ->check(CLI::PositiveNumber);
  golden_cmd->add_flag("--update", golden.update, "Rewrite instead of checking");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  const auto optional_path = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };
  if (*forward_cmd) {
    fwd.config = optional_path(fwd_config);
    fwd.params = optional_path(fwd_params);
    return cmd_forward(fwd, out, err);
  }
  if (*grad_cmd) return cmd_gradcheck(grad, out, err);
  if (*prof_cmd) {
    prof.config = optional_path(prof_config);
    return cmd_profile(prof, out, err);
  }
  if (*synth_cmd) {
    synth.config = optional_path(synth_config);
    return cmd_synth(synth, out, err);
  }
  return cmd_golden(golden, out, err);
}

}  // namespace caformer::cli
