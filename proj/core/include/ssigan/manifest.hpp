#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ssigan {

// FNV-1a over the file bytes; cheap content fingerprint for manifests.
std::uint64_t file_checksum(const std::string& path);
std::string file_checksum_hex(const std::string& path);

// Record of one pipeline stage: the fully resolved configuration plus
// checksums of everything read and written, enough to replay the run.
struct RunManifest {
  std::string command;
  std::string timestamp_utc;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, checksum
  std::vector<std::pair<std::string, std::string>> outputs;  // path, checksum

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, double value);
  std::string get(const std::string& key) const;  // throws if missing
  bool has(const std::string& key) const;

  void add_input(const std::string& path);   // checksums now
  void add_output(const std::string& path);  // checksums now

  void stamp_now();
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

}  // namespace ssigan
