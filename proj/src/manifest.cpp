#include "rfn/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rfn::manifest {

std::string git_blob_sha1(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("git_blob_sha1: cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("git_blob_sha1: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

nlohmann::json hash_inputs(const std::vector<std::filesystem::path>& inputs) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& in : inputs) {
        if (std::filesystem::is_directory(in)) {
            std::vector<std::filesystem::path> files;
            for (const auto& e : std::filesystem::recursive_directory_iterator(in))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) out[f.generic_string()] = git_blob_sha1(slurp(f));
        } else {
            out[in.generic_string()] = git_blob_sha1(slurp(in));
        }
    }
    return out;
}

nlohmann::json run_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                            const std::vector<std::filesystem::path>& inputs, const nlohmann::json& outputs) {
    return {{"schema", "rfn.manifest/1"},
            {"command", command},
            {"config", config},
            {"seed", seed},
            {"inputs", hash_inputs(inputs)},
            {"outputs", outputs}};
}

void write_json(const nlohmann::json& j, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::filesystem::path& file) { return nlohmann::json::parse(slurp(file)); }

}  // namespace rfn::manifest
