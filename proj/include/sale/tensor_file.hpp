#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sale/matrix.hpp"

namespace sale {

// Little-endian binary tensor container; layout documented byte-exact in
// docs/formats.md. Payload is per head: query, key, value, each tokens x dim
// row-major float32.
inline constexpr std::array<char, 8> kTensorMagic = {'S', 'A', 'L', 'E', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kTensorDtypeF32 = 1;

class TensorFileError : public std::runtime_error {
  public:
    TensorFileError(const std::string &message, std::uint64_t offset)
        : std::runtime_error(message + " (offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const { return offset_; }

  private:
    std::uint64_t offset_;
};

namespace detail {

inline void put_u32(std::ostream &out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char *>(bytes), 4);
}

inline std::uint32_t get_u32(std::istream &in, std::uint64_t offset, const char *field) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char *>(bytes), 4))
        throw TensorFileError(std::string("truncated ") + field, offset);
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline void put_f32(std::ostream &out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float bits_to_f32(std::uint32_t bits) {
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace detail

inline void write_tensor_file(const std::string &path, std::span<const HeadInput> heads) {
    if (heads.empty())
        throw std::invalid_argument("write_tensor_file: no heads");
    const std::size_t tokens = heads.front().seq_len();
    const std::size_t dim = heads.front().head_dim();
    for (const HeadInput &h : heads) {
        h.validate();
        if (h.seq_len() != tokens || h.head_dim() != dim)
            throw std::invalid_argument("write_tensor_file: inconsistent head shapes");
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("write_tensor_file: cannot open " + path);

    out.write(kTensorMagic.data(), kTensorMagic.size());
    detail::put_u32(out, kTensorVersion);
    detail::put_u32(out, kTensorDtypeF32);
    detail::put_u32(out, static_cast<std::uint32_t>(heads.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(tokens));
    detail::put_u32(out, static_cast<std::uint32_t>(dim));
    for (const HeadInput &h : heads) {
        for (const DenseMatrix *m : {&h.query, &h.key, &h.value})
            for (float v : m->data())
                detail::put_f32(out, v);
    }
    if (!out)
        throw std::runtime_error("write_tensor_file: write failed for " + path);
}

inline std::vector<HeadInput> read_tensor_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("read_tensor_file: cannot open " + path);

    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()))
        throw TensorFileError("truncated magic", 0);
    if (magic != kTensorMagic)
        throw TensorFileError("bad magic", 0);

    const std::uint32_t version = detail::get_u32(in, 8, "version");
    if (version != kTensorVersion)
        throw TensorFileError("unsupported version " + std::to_string(version), 8);
    const std::uint32_t dtype = detail::get_u32(in, 12, "dtype");
    if (dtype != kTensorDtypeF32)
        throw TensorFileError("unsupported dtype tag " + std::to_string(dtype), 12);
    const std::uint32_t head_count = detail::get_u32(in, 16, "head count");
    const std::uint32_t tokens = detail::get_u32(in, 20, "token count");
    const std::uint32_t dim = detail::get_u32(in, 24, "head dim");
    if (head_count == 0)
        throw TensorFileError("head count must be >= 1", 16);
    if (tokens == 0)
        throw TensorFileError("token count must be >= 1", 20);
    if (dim == 0)
        throw TensorFileError("head dim must be >= 1", 24);

    const std::uint64_t values = 3ULL * head_count * tokens * dim;
    std::vector<HeadInput> heads;
    heads.reserve(head_count);
    std::uint64_t offset = 28;
    std::vector<float> buffer(static_cast<std::size_t>(tokens) * dim);
    for (std::uint32_t h = 0; h < head_count; ++h) {
        HeadInput input;
        for (DenseMatrix *m : {&input.query, &input.key, &input.value}) {
            for (auto &v : buffer) {
                unsigned char bytes[4];
                if (!in.read(reinterpret_cast<char *>(bytes), 4))
                    throw TensorFileError("truncated payload: expected " +
                                              std::to_string(values) + " float32 values",
                                          offset);
                const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                                           (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                           (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                           (static_cast<std::uint32_t>(bytes[3]) << 24);
                v = detail::bits_to_f32(bits);
                if (!std::isfinite(v))
                    throw TensorFileError("non-finite value", offset);
                offset += 4;
            }
            *m = DenseMatrix::from_data(tokens, dim, buffer);
        }
        heads.push_back(std::move(input));
    }
    // anything left over means the header undercounts the payload
    char extra;
    if (in.read(&extra, 1))
        throw TensorFileError("payload longer than header describes", offset);
    return heads;
}

} // namespace sale
