#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrlab::cli {

/// Parse or type error in a config file, located by line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Flat `key = value` file. Blank lines and text after '#' are ignored; keys
/// are [A-Za-z0-9_]+ and may appear once.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.contains(key); }

  std::string get_string(const std::string& key, const std::optional<std::string>& fallback = std::nullopt);
  double get_double(const std::string& key, const std::optional<double>& fallback = std::nullopt);
  std::uint64_t get_u64(const std::string& key, const std::optional<std::uint64_t>& fallback = std::nullopt);
  std::size_t get_size(const std::string& key, const std::optional<std::size_t>& fallback = std::nullopt);
  bool get_bool(const std::string& key, const std::optional<bool>& fallback = std::nullopt);
  /// Comma-separated lists.
  std::vector<double> get_doubles(const std::string& key, const std::optional<std::vector<double>>& fallback = std::nullopt);
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::optional<std::vector<std::size_t>>& fallback = std::nullopt);

  /// Sets or replaces a value (command-line overrides); line 0 marks it.
  void set(const std::string& key, const std::string& value);

  /// Throws for the first key no getter asked for.
  void reject_unknown() const;

  /// Every key with the value in effect, including defaults applied by getters.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  const Entry* find(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace lrlab::cli
