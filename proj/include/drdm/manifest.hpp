#ifndef DRDM_MANIFEST_HPP
#define DRDM_MANIFEST_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "drdm/tensor.hpp"

namespace drdm {

inline constexpr const char* kCodeVersion = "drdm-0.1.0";

// Run manifest: enough to re-run the command bit-identically. Written
// atomically (tmp + rename) when the command finishes.
class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config, std::uint64_t seed)
        : start_(std::chrono::steady_clock::now()) {
        j_["command"] = std::move(command);
        j_["config"] = std::move(config);
        j_["seed"] = seed;
        j_["code_version"] = kCodeVersion;
        j_["inputs"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::object();
    }

    void record_input(const std::string& key, const std::string& path) {
        j_["inputs"][key] = path;
    }
    void record_output(const std::string& key, const std::string& path) {
        j_["outputs"][key] = path;
    }
    void record(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    void finish(const std::filesystem::path& path, bool ok, const std::string& detail = "") {
        auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_);
        j_["wall_clock_seconds"] = elapsed.count();
        j_["outcome"] = ok ? "success" : "failure";
        if (!detail.empty()) j_["detail"] = detail;
        std::filesystem::create_directories(path.parent_path());
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream os(tmp);
            if (!os) throw io_error("cannot write manifest: " + tmp.string());
            os << j_.dump(2) << "\n";
        }
        std::filesystem::rename(tmp, path);
    }

    const nlohmann::json& json() const { return j_; }

private:
    nlohmann::json j_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace drdm

#endif  // DRDM_MANIFEST_HPP
