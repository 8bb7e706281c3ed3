#include "bdlab/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bdlab {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      auto t = trim(cur);
      if (!t.empty()) out.emplace_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  auto t = trim(s);
  const char* end = t.data() + t.size();
  auto r = std::from_chars(t.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> problems)
    : ConfigError("invalid config: " + join(problems, "; ")), problems_(std::move(problems)) {}

std::map<std::string, std::string> Config::section(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  const std::string p = prefix + ".";
  for (auto it = values.lower_bound(p); it != values.end() && it->first.starts_with(p); ++it)
    out[it->first.substr(p.size())] = it->second;
  return out;
}

Config parse_config(std::string_view text) {
  Config cfg;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (cfg.has(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    cfg.set(full, std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_text(const Config& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.values) out += k + "=" + v + "\n";
  return out;
}

std::string config_hash(const Config& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const std::string* FieldReader::lookup(const std::string& key) {
  read_[key] = true;
  auto it = cfg_.values.find(key);
  return it == cfg_.values.end() ? nullptr : &it->second;
}

std::string FieldReader::str(const std::string& key, const std::string& fallback) {
  const auto* v = lookup(key);
  return v ? *v : fallback;
}

double FieldReader::real(const std::string& key, double fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  double d;
  if (!parse_double(*v, d)) {
    problem(key + ": '" + *v + "' is not a number");
    return fallback;
  }
  return d;
}

long FieldReader::integer(const std::string& key, long fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  long n;
  const char* end = v->data() + v->size();
  auto r = std::from_chars(v->data(), end, n);
  if (r.ec != std::errc() || r.ptr != end) {
    problem(key + ": '" + *v + "' is not an integer");
    return fallback;
  }
  return n;
}

bool FieldReader::boolean(const std::string& key, bool fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  problem(key + ": '" + *v + "' is not a boolean");
  return fallback;
}

std::vector<double> FieldReader::reals(const std::string& key, const std::vector<double>& fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& w : split_list(*v)) {
    double d;
    if (!parse_double(w, d)) {
      problem(key + ": '" + w + "' is not a number");
      return fallback;
    }
    out.push_back(d);
  }
  return out;
}

std::vector<std::string> FieldReader::words(const std::string& key, const std::vector<std::string>& fallback) {
  const auto* v = lookup(key);
  return v ? split_list(*v) : fallback;
}

void FieldReader::reject_unread() {
  for (const auto& [k, v] : cfg_.values)
    if (!read_.count(k)) problem(k + ": unknown key");
}

void FieldReader::finish() const {
  if (!problems_.empty()) throw ValidationError(problems_);
}

}  // namespace bdlab
