#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "caformer/numerics/catm.hpp"
#include "caformer/cli.hpp"

namespace caformer::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "caformer");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("caformer_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_text(const fs::path& file, const std::string& text) {
  std::ofstream(file) << text;
  return file;
}

TEST(Forward, WritesManifestWithHashedArtifacts) {
  const fs::path dir = scratch("forward");
  const Outcome r = invoke({"forward", "--seed", "0", "--out", dir.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const RunManifest m = read_manifest(dir / "manifest.json");
  EXPECT_EQ(m.command, "forward");
  EXPECT_EQ(m.seed, 0u);
  EXPECT_GE(m.artifacts.size(), 3u);
  for (const Artifact& a : m.artifacts) {
    ASSERT_TRUE(fs::exists(dir / a.path)) << a.path;
    EXPECT_EQ(sha256_hex(dir / a.path), a.sha256) << a.path;
    EXPECT_EQ(a.sha256.size(), 64u);
  }
  std::ifstream keeps(dir / "keepsets.txt");
  std::string first;
  std::getline(keeps, first);
  EXPECT_EQ(first, "# frame 0");
  const TokenMatrix score = catm::load(dir / "maps" / "score_000.catm");
  EXPECT_EQ(score.rows(), 8);
}

TEST(Forward, SameSeedReproducesHashes) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  ASSERT_EQ(invoke({"forward", "--seed", "3", "--frames", "2", "--out", a.string()}).code, kOk);
  ASSERT_EQ(invoke({"forward", "--seed", "3", "--frames", "2", "--out", b.string()}).code, kOk);
  const RunManifest ma = read_manifest(a / "manifest.json"), mb = read_manifest(b / "manifest.json");
  ASSERT_EQ(ma.artifacts.size(), mb.artifacts.size());
  for (std::size_t i = 0; i < ma.artifacts.size(); ++i) {
    EXPECT_EQ(ma.artifacts[i].path, mb.artifacts[i].path);
    EXPECT_EQ(ma.artifacts[i].sha256, mb.artifacts[i].sha256);
  }
  const fs::path c = scratch("det_c");
  ASSERT_EQ(invoke({"forward", "--seed", "4", "--frames", "2", "--out", c.string()}).code, kOk);
  EXPECT_NE(sha256_hex(a / "bbox.txt"), sha256_hex(c / "bbox.txt"));
}

TEST(Forward, ThreadCountDoesNotChangeOutputs) {
  const fs::path a = scratch("threads_a"), b = scratch("threads_b");
  ::setenv("CAFORMER_THREADS", "1", 1);
  ASSERT_EQ(invoke({"forward", "--frames", "3", "--out", a.string()}).code, kOk);
  ::setenv("CAFORMER_THREADS", "3", 1);
  ASSERT_EQ(invoke({"forward", "--frames", "3", "--out", b.string()}).code, kOk);
  ::unsetenv("CAFORMER_THREADS");
  EXPECT_EQ(sha256_hex(a / "bbox.txt"), sha256_hex(b / "bbox.txt"));
  EXPECT_EQ(sha256_hex(a / "diagnostics.jsonl"), sha256_hex(b / "diagnostics.jsonl"));
}

TEST(Forward, MalformedConfigExitsTwoNamingKey) {
  const fs::path dir = scratch("badcfg");
  const fs::path cfg = write_text(dir / "cfg.json", R"({"keep_ratio": 0.7, "chanels": 8})");
  const Outcome r = invoke({"forward", "--config", cfg.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("chanels"), std::string::npos) << r.err;
  const fs::path bad = write_text(dir / "bad.json", R"({"heads": 5})");
  const Outcome s = invoke({"forward", "--config", bad.string(), "--out", (dir / "p").string()});
  EXPECT_EQ(s.code, kUsage);
  EXPECT_NE(s.err.find("heads"), std::string::npos) << s.err;
}

TEST(Forward, CustomConfigAndParamsAreUsed) {
  const fs::path dir = scratch("custom");
  const fs::path cfg = write_text(dir / "cfg.json",
                                  R"({"channels": 8, "heads": 2, "layers": 3, "cma_layers": [3],
                                      "cte_layers": [1]})");
  const Outcome r = invoke({"forward", "--config", cfg.string(), "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  std::ifstream diag(dir / "o" / "diagnostics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(diag, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["cross_modulated"].get<bool>(), j["layer"].get<int>() == 3);
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(read_manifest(dir / "o" / "manifest.json").config_path, cfg.string());
}

TEST(Gradcheck, CmeScopePasses) {
  const Outcome r = invoke({"gradcheck", "--scope", "cme"});
  EXPECT_EQ(r.code, kOk) << r.out << r.err;
  EXPECT_NE(r.out.find("scope cme"), std::string::npos);
}

TEST(Gradcheck, CorruptedGradientFailsNamingTensor) {
  const Outcome r = invoke({"gradcheck", "--scope", "cme", "--corrupt-gradient"});
  EXPECT_EQ(r.code, kCheckFailed);
  EXPECT_NE(r.err.find("cme.ln1.gain exceeds"), std::string::npos) << r.err;
}

TEST(Gradcheck, UnknownScopeIsUsageError) {
  EXPECT_EQ(invoke({"gradcheck", "--scope", "everything"}).code, kUsage);
}

TEST(Profile, FullScaleWithinBands) {
  const Outcome plain = invoke({"profile", "--scale", "paper", "--giga"});
  ASSERT_EQ(plain.code, kOk) << plain.err;
  EXPECT_NE(plain.out.find("58.13"), std::string::npos);
  const Outcome cte = invoke({"profile", "--scale", "paper", "--cte"});
  ASSERT_EQ(cte.code, kOk) << cte.err;
  EXPECT_NE(cte.out.find("43012104192"), std::string::npos);
}

TEST(Profile, DeskScaleCrossChecksMeasurement) {
  const Outcome r = invoke({"profile"});
  EXPECT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("backbone_macs"), std::string::npos);
}

TEST(Profile, BadScaleIsUsageError) {
  EXPECT_EQ(invoke({"profile", "--scale", "huge"}).code, kUsage);
}

TEST(Synth, WritesFourImagesAndTruth) {
  const fs::path dir = scratch("synth");
  ASSERT_EQ(invoke({"synth", "--seed", "2", "--out", dir.string()}).code, kOk);
  int catm_files = 0;
  for (const auto& e : fs::directory_iterator(dir)) catm_files += e.path().extension() == ".catm";
  EXPECT_EQ(catm_files, 4);
  EXPECT_TRUE(fs::exists(dir / "truth.txt"));
}

TEST(Golden, UpdateThenCheckThenDetectDrift) {
  const fs::path dir = scratch("golden");
  const std::string file = (dir / "boxes.txt").string();
  ASSERT_EQ(invoke({"golden", "--file", file, "--frames", "2", "--update"}).code, kOk);
  EXPECT_EQ(invoke({"golden", "--file", file, "--frames", "2"}).code, kOk);
  std::ifstream in(file);
  std::stringstream text;
  text << in.rdbuf();
  std::string edited = text.str();
  const auto digit = edited.find_first_of("123456789");
  edited[digit] = edited[digit] == '9' ? '8' : static_cast<char>(edited[digit] + 1);
  write_text(file, edited);
  EXPECT_EQ(invoke({"golden", "--file", file, "--frames", "2"}).code, kCheckFailed);
}

TEST(Run, UsageErrors) {
  EXPECT_EQ(invoke({}).code, kUsage);
  EXPECT_EQ(invoke({"teleport"}).code, kUsage);
  EXPECT_EQ(invoke({"forward", "--frames", "0"}).code, kUsage);
  EXPECT_EQ(invoke({"forward", "--help"}).code, kOk);
}

TEST(WorkerCount, RespectsEnvironmentAndJobCount) {
  ::setenv("CAFORMER_THREADS", "2", 1);
  EXPECT_EQ(worker_count(8), 2);
  EXPECT_EQ(worker_count(1), 1);
  ::setenv("CAFORMER_THREADS", "0", 1);
  EXPECT_GE(worker_count(8), 1);
  ::unsetenv("CAFORMER_THREADS");
}

}  // namespace
}  // namespace caformer::cli
