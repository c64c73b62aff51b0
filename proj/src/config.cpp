#include "torq/config.hpp"

#include <array>
#include <cstdio>
#include <fstream>

namespace torq {

namespace {

constexpr std::array kKnownKeys = {
    "format",
    "seed",
    "dtype",
    "shape.blocks",
    "shape.lanes",
    "shape.samples",
    "dist.name",
    "dist.outlier_prob",
    "dist.outlier_scale",
    "dist.lognormal_mu",
    "dist.lognormal_sigma",
    "dist.laplace_scale",
    "block.ridge",
    "inter.epsilon_rel",
    "inter.max_sweeps",
    "inter.angle_mode",
    "intra.max_iter",
    "intra.epsilon",
    "intra.k_top",
    "intra.pairs",
    "intra.lambda",
    "intra.angle_sample_blocks",
    "intra.pow2_mode",
    "report.per_position",
    "report.timing",
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

bool is_known_config_key(const std::string& key) {
  for (const char* k : kKnownKeys)
    if (key == k) return true;
  return false;
}

void KvConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(path + ":" + std::to_string(lineno) +
                         ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (!is_known_config_key(key))
    throw InvalidInput("unknown config key: " + key);
  values_[key] = value;
}

bool KvConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string KvConfig::get_string(const std::string& key,
                                 const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("config key " + key + " is not a number: " + it->second);
  }
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("config key " + key + " is not an integer: " + it->second);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw InvalidInput("config key " + key + " is not a boolean: " + it->second);
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string config_fingerprint(const std::string& canonical_text) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_text)));
  return buf;
}

}  // namespace torq
