#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace sale {

// Half-open token range [begin, end).
struct BlockRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const BlockRange &) const = default;
};

// Contiguous ranges covering [0, tokens) exactly once; the last one may be
// shorter than the block size.
inline std::vector<BlockRange> block_partition(std::size_t tokens, std::size_t block) {
    if (tokens == 0)
        throw std::invalid_argument("block_partition: tokens must be >= 1");
    if (block == 0)
        throw std::invalid_argument("block_partition: block size must be >= 1");
    std::vector<BlockRange> out;
    out.reserve((tokens + block - 1) / block);
    for (std::size_t b = 0; b < tokens; b += block)
        out.push_back({b, std::min(b + block, tokens)});
    return out;
}

// Query/key block axes over one sequence. Tails may be ragged.
class BlockGrid {
  public:
    BlockGrid(std::size_t tokens, std::size_t query_block_size, std::size_t key_block_size)
        : tokens_(tokens),
          query_block_size_(query_block_size),
          key_block_size_(key_block_size),
          query_blocks_(block_partition(tokens, query_block_size)),
          key_blocks_(block_partition(tokens, key_block_size)) {}

    std::size_t tokens() const { return tokens_; }
    std::size_t query_block_size() const { return query_block_size_; }
    std::size_t key_block_size() const { return key_block_size_; }
    std::size_t num_query_blocks() const { return query_blocks_.size(); }
    std::size_t num_key_blocks() const { return key_blocks_.size(); }

    const BlockRange &query_block(std::size_t i) const { return query_blocks_.at(i); }
    const BlockRange &key_block(std::size_t j) const { return key_blocks_.at(j); }

    // Index of the key block containing a token. Only the final block is
    // ragged, so plain division is exact.
    std::size_t key_block_of_token(std::size_t token) const {
        return std::min(token / key_block_size_, key_blocks_.size() - 1);
    }

  private:
    std::size_t tokens_;
    std::size_t query_block_size_;
    std::size_t key_block_size_;
    std::vector<BlockRange> query_blocks_;
    std::vector<BlockRange> key_blocks_;
};

enum class CausalClass { FullyPast, Overlapping, FullyFuture };

// FullyPast: every key token precedes the query block. FullyFuture: every key
// token follows it. Overlapping blocks straddle the causal frontier.
inline CausalClass causal_block_class(const BlockGrid &grid, std::size_t query_block,
                                      std::size_t key_block) {
    const BlockRange q = grid.query_block(query_block);
    const BlockRange k = grid.key_block(key_block);
    if (k.end <= q.begin)
        return CausalClass::FullyPast;
    if (k.begin >= q.end)
        return CausalClass::FullyFuture;
    return CausalClass::Overlapping;
}

} // namespace sale
