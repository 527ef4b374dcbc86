#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ddsi::cli {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Provenance record written next to every command's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  nlohmann::ordered_json& config() { return config_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; has_seed_ = true; }
  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_output(const std::string& name, const std::filesystem::path& path);

  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
  std::uint64_t seed_ = 0;
  bool has_seed_ = false;
  nlohmann::ordered_json inputs_ = nlohmann::ordered_json::object();
  nlohmann::ordered_json outputs_ = nlohmann::ordered_json::object();
};

}  // namespace ddsi::cli
