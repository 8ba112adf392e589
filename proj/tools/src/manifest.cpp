#include "manifest.hpp"

#include <ctime>
#include <stdexcept>

#include "lrlab/io.hpp"

#ifndef LRLAB_VERSION
#define LRLAB_VERSION "unknown"
#endif

namespace lrlab::cli {

namespace {

std::string utc_stamp(std::chrono::system_clock::time_point t, const char* fmt) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

}  // namespace

std::string version_string() { return std::string("lrlab ") + LRLAB_VERSION; }

std::string run_id(const RunManifest& m) {
  return utc_stamp(m.started, "%Y%m%dT%H%M%SZ") + "-s" + std::to_string(m.seed);
}

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& rel : m.artifacts) {
    const auto path = out_dir / rel;
    if (!std::filesystem::is_regular_file(path))
      throw std::runtime_error("manifest: artifact " + path.string() + " does not exist");
    files.push_back({{"path", rel}, {"sha256", sha256_file(path)}, {"bytes", std::filesystem::file_size(path)}});
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - m.clock_start).count();
  nlohmann::json j;
  j["run_id"] = run_id(m);
  j["command"] = m.command;
  j["version"] = version_string();
  j["seed"] = m.seed;
  j["started_at"] = utc_stamp(m.started, "%Y-%m-%dT%H:%M:%SZ");
  j["wall_clock_seconds"] = seconds;
  j["config"] = m.config;
  j["dataset_digests"] = m.dataset_digests;
  j["artifacts"] = files;
  j["results"] = m.results;
  write_file_atomic(out_dir / kManifestName, j.dump(2) + "\n");
}

}  // namespace lrlab::cli
