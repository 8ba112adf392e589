#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lrlab::cli {

inline constexpr const char* kManifestName = "manifest.json";

/// Record of one completed command. Written last; its presence marks a complete run.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> dataset_digests;
  std::vector<std::string> artifacts;  // paths relative to the output directory
  nlohmann::json results = nlohmann::json::object();
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
  std::chrono::steady_clock::time_point clock_start = std::chrono::steady_clock::now();
};

std::string version_string();

/// "<UTC yyyymmddThhmmssZ>-s<seed>".
std::string run_id(const RunManifest& m);

/// Checks every artifact exists, hashes it, and writes manifest.json atomically.
void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m);

}  // namespace lrlab::cli
