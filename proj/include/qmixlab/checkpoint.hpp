#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "qmixlab/qmix.hpp"

namespace qmixlab {

// Checkpoint = JSON manifest (version, kind/method tags, metadata, tensor
// names and shapes) + sidecar blob of little-endian float64 in manifest order.
// Round trips are bitwise exact.

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;    // "qmix" | "atla" | "paad"
    std::string method;  // training method tag
    double epsilon = 0.0;
    nlohmann::json meta;  // env block and net config, free-form
    ParamSet params;
};

inline std::string blob_path(const std::string& manifest_path) {
    std::filesystem::path p(manifest_path);
    p.replace_extension(".bin");
    return p.string();
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& manifest_path) {
    nlohmann::json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["kind"] = ck.kind;
    manifest["method"] = ck.method;
    manifest["epsilon"] = ck.epsilon;
    manifest["meta"] = ck.meta.is_null() ? nlohmann::json::object() : ck.meta;
    manifest["blob"] = std::filesystem::path(blob_path(manifest_path)).filename().string();
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : ck.params)
        tensors.push_back({{"name", name}, {"shape", t.shape}});
    manifest["tensors"] = tensors;

    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw Error("checkpoint: cannot write " + manifest_path);
    mf << manifest.dump(2) << "\n";

    std::ofstream bf(blob_path(manifest_path), std::ios::trunc | std::ios::binary);
    if (!bf) throw Error("checkpoint: cannot write " + blob_path(manifest_path));
    for (const auto& [name, t] : ck.params)
        bf.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

inline Checkpoint load_checkpoint(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw Error("checkpoint: cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint: malformed manifest " + manifest_path + ": " + e.what());
    }
    int version = manifest.value("version", -1);
    if (version != kCheckpointVersion)
        throw Error("checkpoint: version mismatch in " + manifest_path + ": found " +
                    std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));

    Checkpoint ck;
    ck.kind = manifest.value("kind", "qmix");
    ck.method = manifest.value("method", "");
    ck.epsilon = manifest.value("epsilon", 0.0);
    ck.meta = manifest.value("meta", nlohmann::json::object());

    std::string blob = (std::filesystem::path(manifest_path).parent_path() /
                        manifest.at("blob").get<std::string>())
                           .string();
    std::ifstream bf(blob, std::ios::binary);
    if (!bf) throw Error("checkpoint: cannot open blob " + blob);
    bf.seekg(0, std::ios::end);
    auto actual = static_cast<long>(bf.tellg());
    bf.seekg(0);

    long expected = 0;
    for (const auto& entry : manifest.at("tensors"))
        expected += ad::numel(entry.at("shape").get<ad::Shape>());
    expected *= static_cast<long>(sizeof(double));
    if (actual != expected)
        throw Error("checkpoint: blob " + blob + " has " + std::to_string(actual) +
                    " bytes, manifest expects " + std::to_string(expected));

    for (const auto& entry : manifest.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        ad::Shape shape = entry.at("shape").get<ad::Shape>();
        Tensor t = Tensor::zeros(shape);
        bf.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        ck.params[name] = std::move(t);
    }
    return ck;
}

}  // namespace qmixlab
