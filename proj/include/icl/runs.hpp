#pragma once

// Run-directory manifest: resolved configuration, code version, seed,
// timestamps, and the checkpoint index. The manifest hash (over the stable
// identity fields) is stamped into every derived CSV/SVG.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/svg.hpp"

#ifndef ICL_LAB_VERSION
#define ICL_LAB_VERSION "dev"
#endif

namespace icl {

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string name;
  nlohmann::json config;  // fully resolved
  std::string code_version = ICL_LAB_VERSION;
  uint64_t root_seed = 0;
  std::string created;
  std::string finished;
  std::vector<int64_t> checkpoints;

  // Hash over the stable identity (name, config, version, seed); timestamps
  // and the checkpoint index are excluded so reruns of the same setup agree.
  std::string hash() const {
    nlohmann::json id = {{"name", name}, {"config", config}, {"code_version", code_version}, {"seed", root_seed}};
    return hex64(fnv1a64_bytes(id.dump()));
  }

  nlohmann::json to_json() const {
    return {{"name", name},          {"config", config},     {"code_version", code_version},
            {"root_seed", root_seed}, {"created", created},  {"finished", finished},
            {"checkpoints", checkpoints}, {"manifest_hash", hash()}};
  }

  void save(const std::string& run_dir) const {
    std::filesystem::create_directories(run_dir);
    std::ofstream out(run_dir + "/manifest.json", std::ios::trunc);
    if (!out) throw ConfigError("manifest: cannot write under " + run_dir);
    out << to_json().dump(2) << "\n";
  }

  static RunManifest load(const std::string& run_dir) {
    std::ifstream in(run_dir + "/manifest.json");
    if (!in) throw ConfigError("manifest: no manifest.json under " + run_dir);
    nlohmann::json j = nlohmann::json::parse(in);
    RunManifest m;
    m.name = j.at("name").get<std::string>();
    m.config = j.at("config");
    m.code_version = j.value("code_version", "unknown");
    m.root_seed = j.at("root_seed").get<uint64_t>();
    m.created = j.value("created", "");
    m.finished = j.value("finished", "");
    m.checkpoints = j.value("checkpoints", std::vector<int64_t>{});
    return m;
  }
};

}  // namespace icl
