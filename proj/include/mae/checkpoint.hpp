#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "mae/network.hpp"

namespace mae {

// Versioned binary checkpoint: config blob, named f64 tensors (parameters,
// BN running stats, optimizer/training state), CRC32 trailer. Writing is
// fully deterministic so identical runs produce identical files.

constexpr char kCheckpointMagic[8] = {'M', 'A', 'E', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    NetworkConfig config;
    std::vector<std::pair<std::string, std::pair<std::vector<int>, std::vector<double>>>> entries;

    void add(const std::string& name, const std::vector<int>& shape,
             const std::vector<double>& data) {
        entries.emplace_back(name, std::make_pair(shape, data));
    }
    const std::vector<double>* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.first == name) return &e.second.second;
        return nullptr;
    }
};

namespace ckpt_detail {

inline nlohmann::json config_json(const NetworkConfig& c) {
    return {{"c1", c.c1},       {"c3", c.c3},
            {"c5", c.c5},       {"k", c.k},
            {"roi", c.roi},     {"embed_dim", c.embed_dim},
            {"stem_stride", c.stem_stride}, {"use_global_mask", c.use_global_mask},
            {"use_local", c.use_local},     {"seed", c.seed}};
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.c1 = j.at("c1");
    c.c3 = j.at("c3");
    c.c5 = j.at("c5");
    c.k = j.at("k");
    c.roi = j.at("roi");
    c.embed_dim = j.at("embed_dim");
    c.stem_stride = j.at("stem_stride");
    c.use_global_mask = j.at("use_global_mask");
    c.use_local = j.at("use_local");
    c.seed = j.at("seed");
    return c;
}

struct Writer {
    std::string buf;
    void bytes(const void* p, std::size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    void bytes(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    ckpt_detail::Writer w;
    w.bytes(kCheckpointMagic, 8);
    w.str(ckpt_detail::config_json(ck.config).dump());
    w.u32(static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& [name, sv] : ck.entries) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(sv.first.size()));
        for (int d : sv.first) w.u32(static_cast<std::uint32_t>(d));
        w.u64(sv.second.size());
        w.bytes(sv.second.data(), sv.second.size() * sizeof(double));
    }
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(w.buf.data()),
              static_cast<uInt>(w.buf.size())));
    w.u32(crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint " + path);
    std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    if (buf.size() < 12) throw std::runtime_error("checkpoint truncated");
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(buf.size() - 4)));
    if (crc != stored) throw std::runtime_error("checkpoint checksum mismatch: " + path);

    ckpt_detail::Reader r{buf};
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.config = ckpt_detail::config_from_json(nlohmann::json::parse(r.str()));
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        std::uint32_t nd = r.u32();
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        std::vector<double> data(r.u64());
        r.bytes(data.data(), data.size() * sizeof(double));
        ck.entries.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return ck;
}

inline Checkpoint checkpoint_from_params(MaeParams& params) {
    Checkpoint ck;
    ck.config = params.config;
    for (auto& [name, t] : params.named_tensors()) ck.add(name, t.shape(), t.values());
    for (auto& [name, bn] : params.named_bn()) {
        ck.add(name + ".running_mean", {bn->channels()}, bn->running_mean);
        ck.add(name + ".running_var", {bn->channels()}, bn->running_var);
    }
    return ck;
}

inline void restore_params(MaeParams& params, const Checkpoint& ck) {
    if (!(ck.config == params.config))
        throw std::runtime_error("checkpoint config does not match network config");
    for (auto& [name, t] : params.named_tensors()) {
        const auto* v = ck.find(name);
        if (!v) throw std::runtime_error("checkpoint missing tensor " + name);
        if (v->size() != t.size()) throw std::runtime_error("checkpoint shape mismatch for " + name);
        t.values() = *v;
    }
    for (auto& [name, bn] : params.named_bn()) {
        const auto* rm = ck.find(name + ".running_mean");
        const auto* rv = ck.find(name + ".running_var");
        if (!rm || !rv) throw std::runtime_error("checkpoint missing BN stats for " + name);
        bn->running_mean = *rm;
        bn->running_var = *rv;
    }
}

}  // namespace mae
