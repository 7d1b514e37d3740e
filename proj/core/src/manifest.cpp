#include "ssigan/manifest.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssigan {

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for checksum: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string file_checksum_hex(const std::string& path) {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(file_checksum(path)));
  return out;
}

void RunManifest::set(const std::string& key, const std::string& value) {
  for (auto& kv : config)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  config.emplace_back(key, value);
}

void RunManifest::set(const std::string& key, std::int64_t value) {
  set(key, std::to_string(value));
}

void RunManifest::set(const std::string& key, std::uint64_t value) {
  set(key, std::to_string(value));
}

void RunManifest::set(const std::string& key, double value) {
  std::ostringstream os;
  os.precision(17);
  os << value;
  set(key, os.str());
}

std::string RunManifest::get(const std::string& key) const {
  for (const auto& kv : config)
    if (kv.first == key) return kv.second;
  throw std::invalid_argument("manifest: missing key '" + key + "'");
}

bool RunManifest::has(const std::string& key) const {
  for (const auto& kv : config)
    if (kv.first == key) return true;
  return false;
}

void RunManifest::add_input(const std::string& path) {
  inputs.emplace_back(path, file_checksum_hex(path));
}

void RunManifest::add_output(const std::string& path) {
  outputs.emplace_back(path, file_checksum_hex(path));
}

void RunManifest::stamp_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  timestamp_utc = buf;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "command=" << command << '\n';
  if (!timestamp_utc.empty()) os << "timestamp=" << timestamp_utc << '\n';
  for (const auto& kv : config)
    os << "config." << kv.first << '=' << kv.second << '\n';
  for (const auto& kv : inputs)
    os << "input=" << kv.second << ' ' << kv.first << '\n';
  for (const auto& kv : outputs)
    os << "output=" << kv.second << ' ' << kv.first << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  RunManifest m;
  std::string line;
  auto split_artifact = [&](const std::string& v) {
    const auto sp = v.find(' ');
    if (sp == std::string::npos)
      throw std::runtime_error("manifest: bad artifact line in " + path);
    return std::make_pair(v.substr(sp + 1), v.substr(0, sp));
  };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("manifest: bad line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "command") m.command = val;
    else if (key == "timestamp") m.timestamp_utc = val;
    else if (key.rfind("config.", 0) == 0)
      m.config.emplace_back(key.substr(7), val);
    else if (key == "input") m.inputs.push_back(split_artifact(val));
    else if (key == "output") m.outputs.push_back(split_artifact(val));
    else throw std::runtime_error("manifest: unknown key '" + key + "'");
  }
  return m;
}

}  // namespace ssigan
