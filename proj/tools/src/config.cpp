#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "lrlab/io.hpp"

namespace lrlab::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_real(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& source) {
  Config c;
  c.source_ = source;
  std::istringstream in(text);
  std::string raw;
  std::size_t no = 0;
  while (std::getline(in, raw)) {
    ++no;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(source, no, "invalid key '" + key + "'");
    if (value.empty()) throw ConfigError(source, no, "empty value for '" + key + "'");
    if (c.entries_.contains(key))
      throw ConfigError(source, no, "duplicate key '" + key + "' (first at line " +
                                        std::to_string(c.entries_[key].line) + ")");
    c.entries_[key] = {value, no};
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string(), 0, std::string("cannot read config: ") + e.what());
  }
  return parse(text, path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = {value, 0};
}

const Config::Entry* Config::find(const std::string& key) {
  used_.insert(key);
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void Config::fail(const std::string& key, const std::string& what) const {
  auto it = entries_.find(key);
  const std::size_t line = it == entries_.end() ? 0 : it->second.line;
  throw ConfigError(source_, line, "'" + key + "': " + what);
}

std::string Config::get_string(const std::string& key, const std::optional<std::string>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = *fallback;
    return *fallback;
  }
  resolved_[key] = e->value;
  return e->value;
}

double Config::get_double(const std::string& key, const std::optional<double>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = format_real(*fallback);
    return *fallback;
  }
  double v = 0.0;
  if (!parse_number(e->value, v) || !std::isfinite(v)) fail(key, "expected a finite real, got '" + e->value + "'");
  resolved_[key] = e->value;
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, const std::optional<std::uint64_t>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = std::to_string(*fallback);
    return *fallback;
  }
  std::uint64_t v = 0;
  if (!parse_number(e->value, v)) fail(key, "expected a nonnegative integer, got '" + e->value + "'");
  resolved_[key] = e->value;
  return v;
}

std::size_t Config::get_size(const std::string& key, const std::optional<std::size_t>& fallback) {
  const auto v = get_u64(key, fallback ? std::optional<std::uint64_t>(*fallback) : std::nullopt);
  return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& key, const std::optional<bool>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = *fallback ? "true" : "false";
    return *fallback;
  }
  if (e->value == "true" || e->value == "1") return resolved_[key] = "true", true;
  if (e->value == "false" || e->value == "0") return resolved_[key] = "false", false;
  fail(key, "expected true or false, got '" + e->value + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::optional<std::vector<double>>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = join(*fallback);
    return *fallback;
  }
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) {
    double v = 0.0;
    if (!parse_number(item, v) || !std::isfinite(v)) fail(key, "expected comma-separated reals, got '" + item + "'");
    out.push_back(v);
  }
  resolved_[key] = e->value;
  return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key,
                                           const std::optional<std::vector<std::size_t>>& fallback) {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback) fail(key, "required key is missing");
    resolved_[key] = join(*fallback);
    return *fallback;
  }
  std::vector<std::size_t> out;
  for (const auto& item : split_list(e->value)) {
    std::size_t v = 0;
    if (!parse_number(item, v)) fail(key, "expected comma-separated integers, got '" + item + "'");
    out.push_back(v);
  }
  resolved_[key] = e->value;
  return out;
}

void Config::reject_unknown() const {
  // Report the earliest offending line.
  const Entry* worst = nullptr;
  std::string worst_key;
  for (const auto& [k, e] : entries_) {
    if (used_.contains(k)) continue;
    if (!worst || e.line < worst->line) {
      worst = &e;
      worst_key = k;
    }
  }
  if (worst) throw ConfigError(source_, worst->line, "unknown key '" + worst_key + "'");
}

}  // namespace lrlab::cli
