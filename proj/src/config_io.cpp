#include "caformer/config_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "caformer/numerics/catm.hpp"

namespace caformer {
namespace {

using nlohmann::json;

constexpr const char* kManifest = "manifest.txt";

template <typename T>
T get_number(const json& j, const char* key) {
  const json& v = j.at(key);
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
  } else {
    if (!v.is_number_integer()) throw ConfigError(std::string(key) + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(std::string(key) + ": must be non-negative");
    }
  }
  return v.get<T>();
}

std::set<int> get_layers(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(std::string(key) + ": expected an array of layer indices");
  std::set<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) throw ConfigError(std::string(key) + ": expected integers");
    out.insert(e.get<int>());
  }
  return out;
}

std::string shape_token(const TokenMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

nlohmann::ordered_json config_to_json(const TrackerConfig& cfg) {
  nlohmann::ordered_json j;
  j["patch"] = cfg.patch;
  j["channels"] = cfg.channels;
  j["heads"] = cfg.heads;
  j["layers"] = cfg.layers;
  j["template_side"] = cfg.template_side;
  j["search_side"] = cfg.search_side;
  j["cma_layers"] = cfg.cma_layers;
  j["cte_layers"] = cfg.cte_layers;
  j["keep_ratio"] = cfg.keep_ratio;
  j["seed"] = cfg.seed;
  return j;
}

TrackerConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> kKeys = {"patch",        "channels",    "heads",
                                              "layers",       "template_side", "search_side",
                                              "cma_layers",   "cte_layers",  "keep_ratio",
                                              "seed"};
  for (const auto& [key, value] : j.items())
    if (!kKeys.count(key)) throw ConfigError(key + ": unknown config key");

  TrackerConfig cfg = TrackerConfig::desk();
  if (j.contains("patch")) cfg.patch = get_number<Index>(j, "patch");
  if (j.contains("channels")) cfg.channels = get_number<Index>(j, "channels");
  if (j.contains("heads")) cfg.heads = get_number<Index>(j, "heads");
  if (j.contains("layers")) cfg.layers = get_number<int>(j, "layers");
  if (j.contains("template_side")) cfg.template_side = get_number<Index>(j, "template_side");
  if (j.contains("search_side")) cfg.search_side = get_number<Index>(j, "search_side");
  if (j.contains("cma_layers")) cfg.cma_layers = get_layers(j, "cma_layers");
  if (j.contains("cte_layers")) cfg.cte_layers = get_layers(j, "cte_layers");
  if (j.contains("keep_ratio")) cfg.keep_ratio = get_number<double>(j, "keep_ratio");
  if (j.contains("seed")) cfg.seed = get_number<std::uint64_t>(j, "seed");
  cfg.validate();
  return cfg;
}

TrackerConfig config_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

TrackerConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return config_from_text(buf.str());
}

void save_params(const std::filesystem::path& dir, const TrackerParams& params) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kManifest, std::ios::trunc);
  if (!manifest) throw FormatError("params: cannot write manifest in " + dir.string());
  visit_params(params, [&](const std::string& name, const TokenMatrix& m) {
    const std::string file = name + ".catm";
    catm::save(dir / file, m);
    manifest << name << ' ' << shape_token(m) << ' ' << file << '\n';
  });
}

TrackerParams load_params(const std::filesystem::path& dir, const TrackerConfig& cfg) {
  std::ifstream manifest(dir / kManifest);
  if (!manifest) throw FormatError("params: no manifest in " + dir.string());
  std::map<std::string, std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, shape, file;
    if (!(fields >> name >> shape >> file))
      throw FormatError("params: malformed manifest line '" + line + "'");
    entries[name] = {shape, file};
  }
  TrackerParams params = init_params(cfg, 0);
  visit_params(params, [&](const std::string& name, TokenMatrix& m) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("params: manifest lacks " + name);
    const auto& [shape, file] = it->second;
    if (shape != shape_token(m))
      throw FormatError("params: " + name + " is " + shape + ", expected " + shape_token(m));
    TokenMatrix loaded = catm::load(dir / file);
    if (shape_token(loaded) != shape)
      throw FormatError("params: " + file + " holds " + shape_token(loaded) +
                        " but the manifest says " + shape);
    m = std::move(loaded);
  });
  return params;
}

}  // namespace caformer
