#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sale/matrix.hpp"

namespace sale {

// splitmix64 stream plus Box-Muller. Self-contained so a seed means the same
// tensors everywhere; the standard library's normal_distribution is
// implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1].
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

  private:
    std::uint64_t state_;
};

enum class WorkloadKind { Gaussian, SinkLocal, Needle };

struct WorkloadSpec {
    std::uint64_t seed = 0;
    std::size_t tokens = 0;
    std::size_t head_dim = 0;
    std::size_t heads = 1;
    WorkloadKind kind = WorkloadKind::Gaussian;

    // Sink-local structure. sink_logit is the target logit of key 0 against
    // every query; local_logit the target logit of nearby keys, decaying over
    // local_decay_tokens. Defaults keep the middle region clearly below the
    // sink-local statistics even after 4-bit estimation noise.
    double sink_logit = 14.0;
    double local_logit = 10.0;
    double local_decay_tokens = 64.0;

    // Needles: key rows planted to match one late query row. Position 0 is
    // left untouched; the sink key already dominates it.
    std::vector<std::size_t> needle_positions;
    std::size_t needle_query_row = static_cast<std::size_t>(-1); // default: last row
    double needle_logit = 18.0;

    void validate() const {
        if (tokens < 1 || head_dim < 1 || heads < 1)
            throw std::invalid_argument("WorkloadSpec: tokens, head_dim, heads must be >= 1");
        for (std::size_t p : needle_positions)
            if (p >= tokens)
                throw std::invalid_argument("WorkloadSpec: needle position " + std::to_string(p) +
                                            " out of range");
        if (needle_query_row != static_cast<std::size_t>(-1) && needle_query_row >= tokens)
            throw std::invalid_argument("WorkloadSpec: needle query row out of range");
        if (local_decay_tokens <= 0.0)
            throw std::invalid_argument("WorkloadSpec: local_decay_tokens must be > 0");
    }
};

namespace detail {

inline Rng head_rng(const WorkloadSpec &spec, std::size_t head) {
    return Rng(spec.seed + 0x9e3779b97f4a7c15ULL * (head + 1));
}

inline void fill_normal(Rng &rng, DenseMatrix &m) {
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<float>(rng.next_normal());
}

inline std::vector<double> random_unit(Rng &rng, std::size_t d) {
    std::vector<double> v(d);
    double norm2 = 0.0;
    for (auto &x : v) {
        x = rng.next_normal();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2 > 0.0 ? norm2 : 1.0);
    for (auto &x : v)
        x *= inv;
    return v;
}

inline HeadInput gaussian_base(const WorkloadSpec &spec, Rng &rng) {
    HeadInput input{DenseMatrix(spec.tokens, spec.head_dim),
                    DenseMatrix(spec.tokens, spec.head_dim),
                    DenseMatrix(spec.tokens, spec.head_dim)};
    fill_normal(rng, input.query);
    fill_normal(rng, input.key);
    fill_normal(rng, input.value);
    return input;
}

inline HeadInput gaussian_head(const WorkloadSpec &spec, std::size_t head) {
    Rng rng = head_rng(spec, head);
    return gaussian_base(spec, rng);
}

// Gaussian base plus two planted components: a sink direction shared by all
// queries and key 0, and a slowly drifting local direction shared by queries
// and keys with nearby positions. Amplitudes are chosen so the planted logits
// (q.k / sqrt(d)) land near sink_logit and local_logit.
inline HeadInput sink_local_head(const WorkloadSpec &spec, std::size_t head) {
    Rng rng = head_rng(spec, head);
    HeadInput input = gaussian_base(spec, rng);

    const std::size_t n = spec.tokens;
    const std::size_t d = spec.head_dim;
    const double sqrt_d = std::sqrt(static_cast<double>(d));
    const double sink_amp = std::sqrt(std::max(spec.sink_logit, 0.0) * sqrt_d);
    const double local_amp = std::sqrt(std::max(spec.local_logit, 0.0) * sqrt_d);
    const double rho = std::exp(-1.0 / spec.local_decay_tokens);
    const double drift = std::sqrt(1.0 - rho * rho);

    const std::vector<double> sink_dir = random_unit(rng, d);
    std::vector<double> local_dir = random_unit(rng, d);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) {
            double norm2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                local_dir[c] = rho * local_dir[c] + drift * rng.next_normal() / sqrt_d;
                norm2 += local_dir[c] * local_dir[c];
            }
            const double inv = 1.0 / std::sqrt(norm2 > 0.0 ? norm2 : 1.0);
            for (auto &x : local_dir)
                x *= inv;
        }
        for (std::size_t c = 0; c < d; ++c) {
            const double planted = sink_amp * sink_dir[c] + local_amp * local_dir[c];
            input.query(i, c) += static_cast<float>(planted);
            input.key(i, c) += static_cast<float>(local_amp * local_dir[c]);
            if (i == 0)
                input.key(0, c) += static_cast<float>(sink_amp * sink_dir[c]);
        }
    }
    return input;
}

inline HeadInput needle_head(const WorkloadSpec &spec, std::size_t head) {
    HeadInput input = sink_local_head(spec, head);
    const std::size_t target = spec.needle_query_row == static_cast<std::size_t>(-1)
                                   ? spec.tokens - 1
                                   : spec.needle_query_row;
    const std::size_t d = spec.head_dim;
    const double sqrt_d = std::sqrt(static_cast<double>(d));

    double qnorm2 = 0.0;
    for (std::size_t c = 0; c < d; ++c)
        qnorm2 += static_cast<double>(input.query(target, c)) * input.query(target, c);
    const double qnorm = std::sqrt(qnorm2 > 0.0 ? qnorm2 : 1.0);
    const double gain = spec.needle_logit * sqrt_d / qnorm / qnorm;

    for (std::size_t p : spec.needle_positions) {
        if (p == 0)
            continue;
        for (std::size_t c = 0; c < d; ++c)
            input.key(p, c) += static_cast<float>(gain * input.query(target, c));
    }
    return input;
}

} // namespace detail

inline std::vector<HeadInput> gaussian_workload(const WorkloadSpec &spec) {
    spec.validate();
    std::vector<HeadInput> heads;
    heads.reserve(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h)
        heads.push_back(detail::gaussian_head(spec, h));
    return heads;
}

inline std::vector<HeadInput> sink_local_workload(const WorkloadSpec &spec) {
    spec.validate();
    std::vector<HeadInput> heads;
    heads.reserve(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h)
        heads.push_back(detail::sink_local_head(spec, h));
    return heads;
}

inline std::vector<HeadInput> needle_workload(const WorkloadSpec &spec) {
    spec.validate();
    std::vector<HeadInput> heads;
    heads.reserve(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h)
        heads.push_back(detail::needle_head(spec, h));
    return heads;
}

inline std::vector<HeadInput> generate_workload(const WorkloadSpec &spec) {
    switch (spec.kind) {
    case WorkloadKind::Gaussian:
        return gaussian_workload(spec);
    case WorkloadKind::SinkLocal:
        return sink_local_workload(spec);
    case WorkloadKind::Needle:
        return needle_workload(spec);
    }
    throw std::invalid_argument("generate_workload: unknown kind");
}

} // namespace sale
