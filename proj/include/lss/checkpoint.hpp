#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lss/core.hpp"
#include "lss/tinynet.hpp"

namespace lss {

// Checkpoint container: 8-byte magic, little-endian u64 manifest length, a
// JSON manifest (version, config, tensor registry with shapes/offsets), then
// the tensor payload as row-major little-endian float64 in registry order.
// Running normalization statistics are stored alongside the trainables.
inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json config_to_json(const TinyNetConfig& cfg) {
    ordered_json j;
    j["image_size"] = cfg.image_size;
    j["patch_size"] = cfg.patch_size;
    j["d_vis"] = cfg.d_vis;
    j["d_shared"] = cfg.d_shared;
    j["d_k"] = cfg.d_k;
    j["n_heads"] = cfg.n_heads;
    j["vocab_size"] = cfg.vocab_size;
    j["decoder_channels"] = cfg.effective_decoder_channels();
    j["seed"] = cfg.seed;
    return j;
}

inline TinyNetConfig config_from_json(const ordered_json& j) {
    TinyNetConfig cfg;
    cfg.image_size = j.at("image_size").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.d_vis = j.at("d_vis").get<int>();
    cfg.d_shared = j.at("d_shared").get<int>();
    cfg.d_k = j.at("d_k").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
    cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const TinyNetParams& params) {
    detail::ordered_json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["config"] = detail::config_to_json(params.cfg);

    std::vector<const std::vector<double>*> tensors;
    detail::ordered_json registry = detail::ordered_json::array();
    uint64_t offset = 0;
    auto record = [&](const std::string& name, const std::vector<double>& t,
                      const std::vector<int64_t>& shape) {
        detail::ordered_json e;
        e["name"] = name;
        e["shape"] = shape;
        e["offset"] = offset;
        e["count"] = t.size();
        registry.push_back(e);
        tensors.push_back(&t);
        offset += t.size();
    };
    auto& mutable_params = const_cast<TinyNetParams&>(params);
    for_each_trainable(mutable_params,
                       [&](const std::string& name, std::vector<double>& t,
                           const std::vector<int64_t>& shape, bool) { record(name, t, shape); });
    for_each_buffer(mutable_params,
                    [&](const std::string& name, std::vector<double>& t,
                        const std::vector<int64_t>& shape) { record(name, t, shape); });
    manifest["tensors"] = registry;

    const std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    const uint64_t mlen = mtext.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((mlen >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto* t : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline TinyNetParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    char lenbuf[8];
    in.read(lenbuf, 8);
    if (!in) throw IoError("load_checkpoint: truncated header in " + path);
    uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i)
        mlen |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw IoError("load_checkpoint: truncated manifest in " + path);

    detail::ordered_json manifest = detail::ordered_json::parse(mtext);
    if (manifest.at("version").get<int>() != kCheckpointVersion)
        throw IoError("load_checkpoint: unsupported version in " + path);

    TinyNetConfig cfg = detail::config_from_json(manifest.at("config"));
    TinyNetParams params = init_params(cfg);

    // index expected tensors by name
    std::vector<std::pair<std::string, std::vector<double>*>> slots;
    for_each_trainable(params, [&](const std::string& name, std::vector<double>& t,
                                   const std::vector<int64_t>&, bool) { slots.emplace_back(name, &t); });
    for_each_buffer(params, [&](const std::string& name, std::vector<double>& t,
                                const std::vector<int64_t>&) { slots.emplace_back(name, &t); });

    size_t slot_idx = 0;
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const uint64_t count = entry.at("count").get<uint64_t>();
        if (slot_idx >= slots.size() || slots[slot_idx].first != name)
            throw IoError("load_checkpoint: unexpected tensor '" + name + "' in " + path);
        std::vector<double>* dst = slots[slot_idx].second;
        if (dst->size() != count)
            throw IoError("load_checkpoint: size mismatch for tensor '" + name + "'");
        in.read(reinterpret_cast<char*>(dst->data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw IoError("load_checkpoint: truncated payload at tensor '" + name + "'");
        ++slot_idx;
    }
    if (slot_idx != slots.size())
        throw IoError("load_checkpoint: missing tensors in " + path);
    return params;
}

}  // namespace lss
