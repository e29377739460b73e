#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sale/selection.hpp"
#include "sale/tensor_file.hpp"

namespace sale {

// Run-length-encoded block mask dump, one record per head; layout in
// docs/formats.md. The grid is scanned row-major; runs alternate value
// starting from first_value and sum to query_blocks * key_blocks.
inline constexpr std::array<char, 8> kMaskMagic = {'S', 'A', 'L', 'E', 'M', 'A', 'S', 'K'};
inline constexpr std::uint32_t kMaskVersion = 1;

struct MaskRecord {
    std::uint32_t head = 0;
    float tau = 0.0f;
    BlockMask mask;
};

inline void write_mask_dump(const std::string &path, std::span<const MaskRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("write_mask_dump: cannot open " + path);
    out.write(kMaskMagic.data(), kMaskMagic.size());
    detail::put_u32(out, kMaskVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const MaskRecord &rec : records) {
        detail::put_u32(out, rec.head);
        detail::put_u32(out, static_cast<std::uint32_t>(rec.mask.query_blocks()));
        detail::put_u32(out, static_cast<std::uint32_t>(rec.mask.key_blocks()));
        detail::put_f32(out, rec.tau);

        std::vector<std::uint32_t> runs;
        std::uint8_t first = 0;
        const std::size_t total = rec.mask.query_blocks() * rec.mask.key_blocks();
        if (total > 0) {
            bool current = rec.mask.get(0, 0);
            first = current ? 1 : 0;
            std::uint32_t length = 0;
            for (std::size_t i = 0; i < rec.mask.query_blocks(); ++i) {
                for (std::size_t j = 0; j < rec.mask.key_blocks(); ++j) {
                    const bool bit = rec.mask.get(i, j);
                    if (bit == current) {
                        ++length;
                    } else {
                        runs.push_back(length);
                        current = bit;
                        length = 1;
                    }
                }
            }
            runs.push_back(length);
        }
        out.put(static_cast<char>(first));
        detail::put_u32(out, static_cast<std::uint32_t>(runs.size()));
        for (std::uint32_t r : runs)
            detail::put_u32(out, r);
    }
    if (!out)
        throw std::runtime_error("write_mask_dump: write failed for " + path);
}

inline std::vector<MaskRecord> read_mask_dump(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("read_mask_dump: cannot open " + path);
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMaskMagic)
        throw TensorFileError("bad mask dump magic", 0);
    const std::uint32_t version = detail::get_u32(in, 8, "version");
    if (version != kMaskVersion)
        throw TensorFileError("unsupported mask dump version", 8);
    const std::uint32_t count = detail::get_u32(in, 12, "record count");

    std::vector<MaskRecord> records;
    records.reserve(count);
    std::uint64_t offset = 16;
    for (std::uint32_t rec_idx = 0; rec_idx < count; ++rec_idx) {
        MaskRecord rec;
        rec.head = detail::get_u32(in, offset, "head index");
        const std::uint32_t nq = detail::get_u32(in, offset + 4, "query blocks");
        const std::uint32_t nk = detail::get_u32(in, offset + 8, "key blocks");
        const std::uint32_t tau_bits = detail::get_u32(in, offset + 12, "tau");
        rec.tau = detail::bits_to_f32(tau_bits);
        char first_char;
        if (!in.get(first_char))
            throw TensorFileError("truncated first_value", offset + 16);
        const bool first = first_char != 0;
        const std::uint32_t run_count = detail::get_u32(in, offset + 17, "run count");
        offset += 21;

        rec.mask = BlockMask(nq, nk);
        std::uint64_t cell = 0;
        bool value = first;
        const std::uint64_t total = static_cast<std::uint64_t>(nq) * nk;
        for (std::uint32_t r = 0; r < run_count; ++r) {
            const std::uint32_t length = detail::get_u32(in, offset, "run length");
            offset += 4;
            if (length == 0)
                throw TensorFileError("zero-length run", offset - 4);
            for (std::uint32_t t = 0; t < length; ++t, ++cell) {
                if (cell >= total)
                    throw TensorFileError("runs exceed grid size", offset - 4);
                if (value)
                    rec.mask.set(static_cast<std::size_t>(cell / nk),
                                 static_cast<std::size_t>(cell % nk), true);
            }
            value = !value;
        }
        if (cell != total)
            throw TensorFileError("runs cover " + std::to_string(cell) + " of " +
                                      std::to_string(total) + " cells",
                                  offset);
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace sale
