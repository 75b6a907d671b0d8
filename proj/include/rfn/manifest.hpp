#pragma once

// Run manifests: configuration, seed and content hashes of every input file.

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rfn::manifest {

// SHA-1 of "blob <size>\0<bytes>", identical to `git hash-object`.
std::string git_blob_sha1(const std::string& bytes);

// {path: hash} for a file, or for every regular file below a directory
// (sorted by relative path).
nlohmann::json hash_inputs(const std::vector<std::filesystem::path>& inputs);

nlohmann::json run_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                            const std::vector<std::filesystem::path>& inputs, const nlohmann::json& outputs);

void write_json(const nlohmann::json& j, const std::filesystem::path& file);
nlohmann::json read_json(const std::filesystem::path& file);

}  // namespace rfn::manifest
