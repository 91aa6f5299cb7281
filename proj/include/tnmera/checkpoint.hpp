#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tnmera/errors.hpp"
#include "tnmera/mera.hpp"

namespace tnmera {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

// Checkpoint layout:
//   bytes 0..7   magic "TNMERA1\0"
//   bytes 8..11  u32 little-endian header length H
//   bytes 12..   header: JSON with the config echo, seed, and an ordered tensor
//                directory (name, shape, element count, byte offset into the payload)
//   then         payload: raw little-endian doubles, directory order
// Reload reproduces every tensor bit-exactly.

namespace detail {

inline nlohmann::ordered_json config_json(const MeraConfig& c) {
    nlohmann::ordered_json j;
    j["image_height"] = c.image_height;
    j["image_width"] = c.image_width;
    j["block_size"] = c.block_size;
    j["bond_dim"] = c.bond_dim;
    j["num_classes"] = c.num_classes;
    j["boundary"] = to_string(c.boundary);
    j["embedding"] = to_string(c.embedding);
    j["sharing"] = to_string(c.sharing);
    j["layout"] = to_string(c.layout);
    j["init_mode"] = to_string(c.init_mode);
    j["init_std"] = c.init_std;
    j["auto_pad"] = c.auto_pad;
    j["contraction_budget"] = c.contraction_budget;
    return j;
}

inline MeraConfig config_from_json(const nlohmann::json& j) {
    MeraConfig c;
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
    c.block_size = j.at("block_size").get<int>();
    c.bond_dim = j.at("bond_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.boundary = parse_boundary(j.at("boundary").get<std::string>());
    c.embedding = parse_embedding(j.at("embedding").get<std::string>());
    c.sharing = parse_sharing(j.at("sharing").get<std::string>());
    c.layout = parse_layout(j.at("layout").get<std::string>());
    c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
    c.init_std = j.at("init_std").get<double>();
    c.auto_pad = j.at("auto_pad").get<bool>();
    c.contraction_budget = j.at("contraction_budget").get<std::int64_t>();
    return c;
}

constexpr char kMagic[8] = {'T', 'N', 'M', 'E', 'R', 'A', '1', '\0'};

} // namespace detail

inline void checkpoint_save(const MeraModel& m, const std::string& path) {
    nlohmann::ordered_json header;
    header["config"] = detail::config_json(m.config);
    header["seed"] = m.seed;
    auto dir = nlohmann::ordered_json::array();
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        dir.push_back({{"name", m.param_names[k]},
                       {"shape", m.params[k].shape},
                       {"count", m.params[k].size()},
                       {"offset", offset}});
        offset += m.params[k].size() * static_cast<std::int64_t>(sizeof(double));
    }
    header["tensors"] = std::move(dir);
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("checkpoint: cannot write " + path);
    out.write(detail::kMagic, 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : m.params)
        out.write(reinterpret_cast<const char*>(p.data.data()),
                  static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!out) throw ValidationError("checkpoint: write failed for " + path);
}

inline MeraModel checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("checkpoint: cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, detail::kMagic, 8) != 0)
        throw ValidationError("checkpoint: bad magic in " + path);
    std::uint32_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), 4))
        throw ValidationError("checkpoint: truncated header length in " + path);
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen))
        throw ValidationError("checkpoint: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: malformed header JSON: ") + e.what());
    }
    const MeraConfig cfg = detail::config_from_json(header.at("config"));
    const std::uint64_t seed = header.at("seed").get<std::uint64_t>();

    // Rebuild the structure, then overwrite every tensor from the payload; only
    // a fully read payload replaces the model (no partial loads).
    MeraModel m = build(cfg, seed, /*init_params=*/false);
    const auto& dir = header.at("tensors");
    if (dir.size() != m.params.size())
        throw ValidationError("checkpoint: tensor directory does not match the architecture");
    std::int64_t expect_offset = 0;
    std::vector<Tensor> loaded;
    loaded.reserve(m.params.size());
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        const auto& entry = dir.at(k);
        if (entry.at("name").get<std::string>() != m.param_names[k])
            throw ValidationError("checkpoint: tensor name mismatch at index " + std::to_string(k));
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        if (shape != m.params[k].shape)
            throw ValidationError("checkpoint: tensor shape mismatch for " + m.param_names[k]);
        if (entry.at("offset").get<std::int64_t>() != expect_offset)
            throw ValidationError("checkpoint: inconsistent payload offsets");
        const std::int64_t count = entry.at("count").get<std::int64_t>();
        if (count != m.params[k].size())
            throw ValidationError("checkpoint: tensor count mismatch for " + m.param_names[k]);
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(count * sizeof(double))))
            throw ValidationError("checkpoint: truncated payload in " + path);
        loaded.push_back(std::move(t));
        expect_offset += count * static_cast<std::int64_t>(sizeof(double));
    }
    m.params = std::move(loaded);
    return m;
}

} // namespace tnmera
