#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "leagcn/error.hpp"
#include "leagcn/tensor.hpp"

namespace leagcn {

// Named-tensor container. File layout, all integers little-endian:
//   "LEAT" magic, uint32 format version (currently 1), then records until
//   EOF. Each record: uint64 name length, name bytes (UTF-8), uint64 rank,
//   rank uint64 extents, then row-major float64 payload.
// Bytes are assembled explicitly so files are identical across hosts.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path)
        : bytes_(bytes), path_(path) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
    std::uint64_t u64() { return uint_le(8); }
    double f64() { return std::bit_cast<double>(uint_le(8)); }

    std::string str(std::size_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::uint64_t uint_le(std::size_t width) {
        need(width);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        }
        pos_ += width;
        return v;
    }

    void need(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw DataError("truncated checkpoint file: " + path_);
        }
    }

    const std::string& bytes_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'L', 'E', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    for (const auto& [name, t] : tensors) {
        detail::put_u64(out, name.size());
        out.append(name);
        detail::put_u64(out, t.rank());
        for (std::size_t i = 0; i < t.rank(); ++i) detail::put_u64(out, t.extent(i));
        for (double v : t.data()) detail::put_f64(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint file for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("failed writing checkpoint file: " + path);
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r(bytes, path);
    if (r.str(4) != std::string(kCheckpointMagic, 4)) {
        throw DataError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path);
    }

    std::vector<std::pair<std::string, Tensor>> out;
    while (!r.at_end()) {
        const std::uint64_t name_len = r.u64();
        std::string name = r.str(name_len);
        const std::uint64_t rank = r.u64();
        if (rank == 0 || rank > 8) {
            throw DataError("implausible tensor rank in checkpoint: " + path);
        }
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            shape[i] = r.u64();
            if (shape[i] == 0 || total > (1ull << 32) / (shape[i] ? shape[i] : 1)) {
                throw DataError("implausible tensor shape in checkpoint: " + path);
            }
            total *= shape[i];
        }
        std::vector<double> data(total);
        for (std::size_t i = 0; i < total; ++i) data[i] = r.f64();
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace leagcn
