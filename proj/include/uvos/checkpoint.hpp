// Copyright 2026 The uvos Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uvos/common.hpp"
#include "uvos/network.hpp"
#include "uvos/tensor.hpp"

// Checkpoint archive: magic, format version, backbone configuration, then
// named parameter/buffer arrays. Numbers are stored in native (little-endian)
// byte order as the file is a single-machine artifact.
namespace uvos {

namespace detail {

constexpr char kCkptMagic[8] = {'U', 'V', 'O', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw io_error("checkpoint: truncated file");
    return v;
}

inline void write_array(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_pod<std::int32_t>(os, t.dim(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * t.size()));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Network& net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("checkpoint: cannot open for writing: " + path);
    os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    detail::write_pod<std::uint32_t>(os, detail::kCkptVersion);
    const BackboneConfig& c = net.config();
    detail::write_pod<std::int32_t>(os, c.channels);
    detail::write_pod<std::int32_t>(os, c.stride);
    detail::write_pod<std::int32_t>(os, c.blocks);
    detail::write_pod<std::int32_t>(os, c.dilation);
    detail::write_pod<std::uint64_t>(os, c.seed);
    detail::write_pod<std::int32_t>(os, net.kappa_grid());

    auto params = net.named_params();
    auto buffers = net.named_buffers();
    detail::write_pod<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(params.size() + buffers.size()));
    for (auto& [name, var] : params) detail::write_array(os, name, var.value());
    for (auto& [name, buf] : buffers) detail::write_array(os, name, *buf);
    if (!os) throw io_error("checkpoint: write failed: " + path);
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw io_error("checkpoint: bad magic: " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != detail::kCkptVersion)
        throw io_error("checkpoint: unsupported format version " + std::to_string(version));
    BackboneConfig cfg;
    cfg.channels = detail::read_pod<std::int32_t>(is);
    cfg.stride = detail::read_pod<std::int32_t>(is);
    cfg.blocks = detail::read_pod<std::int32_t>(is);
    cfg.dilation = detail::read_pod<std::int32_t>(is);
    cfg.seed = detail::read_pod<std::uint64_t>(is);
    const int kappa_grid = detail::read_pod<std::int32_t>(is);

    Network net(cfg, kappa_grid);
    std::map<std::string, Tensor*> slots;
    for (auto& [name, var] : net.named_params()) slots[name] = &var.node()->value;
    for (auto& [name, buf] : net.named_buffers()) slots[name] = buf;

    const auto count = detail::read_pod<std::uint32_t>(is);
    std::size_t filled = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = detail::read_pod<std::uint32_t>(is);
        std::vector<int> dims(ndim);
        for (auto& d : dims) d = detail::read_pod<std::int32_t>(is);
        auto it = slots.find(name);
        if (it == slots.end()) throw io_error("checkpoint: unknown array name: " + name);
        Tensor& dst = *it->second;
        if (dims != dst.shape())
            throw io_error("checkpoint: shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(sizeof(double) * dst.size()));
        if (!is) throw io_error("checkpoint: truncated array data for " + name);
        ++filled;
    }
    if (filled != slots.size()) throw io_error("checkpoint: missing arrays in " + path);
    return net;
}

}  // namespace uvos
