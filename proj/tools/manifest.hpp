#pragma once

// Run manifests: what was run, with which resolved settings, on which inputs.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace mechxfer::cli {

// SHA-1 of "blob <size>\0" + content, as git hash-object prints it.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

// UTC, ISO 8601 with seconds.
std::string utc_now();

class Manifest {
public:
    Manifest(std::string command, std::vector<std::string> argv);

    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    // Directories are expanded to their regular files, sorted.
    void add_input(const std::filesystem::path& path);
    // Records the outputs and the finish time and writes <dir>/manifest.json.
    void write(const std::filesystem::path& dir, const std::vector<std::filesystem::path>& outputs, int exit_code);

private:
    std::string command_;
    std::vector<std::string> argv_;
    nlohmann::json config_ = nlohmann::json::object();
    std::uint64_t seed_ = 0;
    nlohmann::json inputs_ = nlohmann::json::array();
    std::string started_;
};

}  // namespace mechxfer::cli
