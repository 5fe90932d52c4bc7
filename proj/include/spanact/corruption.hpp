#pragma once

// Forward masking process for activation sequences.
//
// All functions take the generator by reference and draw from it in a fixed
// order, so identical (sequence, t, seed) inputs give identical records.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "spanact/activation.hpp"
#include "spanact/error.hpp"

namespace spanact {

using Rng = std::mt19937_64;

enum class MaskingStrategy { Independent, BoundarySpan, SpanUnmask, Full };

[[nodiscard]] inline std::string_view to_string(MaskingStrategy s) noexcept {
    switch (s) {
    case MaskingStrategy::Independent: return "independent";
    case MaskingStrategy::BoundarySpan: return "boundary_span";
    case MaskingStrategy::SpanUnmask: return "span_unmask";
    case MaskingStrategy::Full: return "full";
    }
    return "unknown";
}

[[nodiscard]] inline MaskingStrategy masking_strategy_from_string(std::string_view name) {
    for (auto s : {MaskingStrategy::Independent, MaskingStrategy::BoundarySpan, MaskingStrategy::SpanUnmask,
                   MaskingStrategy::Full}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw InvalidArgument("unknown masking strategy '" + std::string(name) + "'");
}

struct CorruptionRecord {
    ActivationSequence masked_seq;
    MaskingStrategy strategy = MaskingStrategy::Full;
    double t = 1.0;
    std::size_t masked_count = 0;
};

// Set of strategies drawn uniformly during training.
struct MaskingMix {
    std::vector<MaskingStrategy> strategies;

    // Boundary span + span unmasking + full masking, equal weights.
    static MaskingMix mixture() {
        return {{MaskingStrategy::BoundarySpan, MaskingStrategy::SpanUnmask, MaskingStrategy::Full}};
    }
    static MaskingMix independent_only() { return {{MaskingStrategy::Independent}}; }
    static MaskingMix span_only() { return {{MaskingStrategy::BoundarySpan}}; }
    static MaskingMix span_full() { return {{MaskingStrategy::BoundarySpan, MaskingStrategy::Full}}; }
};

namespace detail {

inline void check_noise(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw InvalidArgument("noise level must lie in [0, 1], got " + std::to_string(t));
    }
}

inline void check_clean(const ActivationSequence& seq, std::string_view op) {
    if (!is_resolved(seq)) {
        throw InvalidArgument(std::string(op) + ": input already contains Masked tokens");
    }
}

inline CorruptionRecord make_record(ActivationSequence seq, MaskingStrategy s, double t) {
    CorruptionRecord rec;
    rec.masked_count = count_masked(seq);
    rec.masked_seq = std::move(seq);
    rec.strategy = s;
    rec.t = t;
    return rec;
}

} // namespace detail

// Round half away from zero.
[[nodiscard]] inline long long round_count(double x) noexcept {
    return std::llround(x);
}

// Indices b with seq[b] != seq[b + 1]; each names the adjacency (b, b+1).
[[nodiscard]] inline std::vector<std::size_t> boundaries(const ActivationSequence& seq) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        if (seq[i] != seq[i + 1]) {
            out.push_back(i);
        }
    }
    return out;
}

// Does the inclusive block [start, start+len) intersect the adjacency pair of some boundary?
[[nodiscard]] inline bool block_overlaps_boundary(std::size_t start, std::size_t len,
                                                  const std::vector<std::size_t>& bounds) {
    const std::size_t last = start + len - 1;
    return std::any_of(bounds.begin(), bounds.end(), [&](std::size_t b) { return start <= b + 1 && b <= last; });
}

// Distance from index i to the nearest side of the boundary adjacency (b, b+1).
[[nodiscard]] inline std::size_t distance_to_boundary(std::size_t i, std::size_t b) noexcept {
    return i <= b ? b - i : i - (b + 1);
}

[[nodiscard]] inline bool block_respects_margin(std::size_t start, std::size_t len,
                                                const std::vector<std::size_t>& bounds, std::size_t margin) {
    for (std::size_t i = start; i < start + len; ++i) {
        for (auto b : bounds) {
            if (distance_to_boundary(i, b) < margin) {
                return false;
            }
        }
    }
    return true;
}

[[nodiscard]] inline CorruptionRecord mask_independent(const ActivationSequence& seq, double t, Rng& rng) {
    detail::check_noise(t);
    detail::check_clean(seq, "mask_independent");
    std::bernoulli_distribution coin(t);
    ActivationSequence out = seq;
    for (auto& token : out) {
        if (coin(rng)) {
            token = ActivationToken::Masked;
        }
    }
    return detail::make_record(std::move(out), MaskingStrategy::Independent, t);
}

// Mask one contiguous block of round(t*n) positions (at least 1) that overlaps an
// activation boundary. Homogeneous sequences get a uniformly placed block.
[[nodiscard]] inline CorruptionRecord mask_boundary_span(const ActivationSequence& seq, double t, Rng& rng) {
    detail::check_noise(t);
    detail::check_clean(seq, "mask_boundary_span");
    if (seq.empty()) {
        return detail::make_record(seq, MaskingStrategy::BoundarySpan, t);
    }
    const std::size_t n = seq.size();
    const auto len = static_cast<std::size_t>(std::clamp<long long>(round_count(t * static_cast<double>(n)), 1,
                                                                    static_cast<long long>(n)));
    const auto bounds = boundaries(seq);
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + len <= n; ++s) {
        if (bounds.empty() || block_overlaps_boundary(s, len, bounds)) {
            starts.push_back(s);
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
    const std::size_t start = starts[pick(rng)];
    ActivationSequence out = seq;
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(start),
              out.begin() + static_cast<std::ptrdiff_t>(start + len), ActivationToken::Masked);
    return detail::make_record(std::move(out), MaskingStrategy::BoundarySpan, t);
}

// Start fully masked and reveal one contiguous block of round((1-t)*n) positions,
// none of which lies within `margin` of a boundary. The block shrinks until a
// legal placement exists.
[[nodiscard]] inline CorruptionRecord mask_span_unmask(const ActivationSequence& seq, double t, Rng& rng,
                                                       std::size_t margin = 2) {
    detail::check_noise(t);
    detail::check_clean(seq, "mask_span_unmask");
    const std::size_t n = seq.size();
    auto reveal = static_cast<std::size_t>(std::max<long long>(0, round_count((1.0 - t) * static_cast<double>(n))));
    reveal = std::min(reveal, n);
    const auto bounds = boundaries(seq);
    std::vector<std::size_t> starts;
    for (; reveal > 0; --reveal) {
        starts.clear();
        for (std::size_t s = 0; s + reveal <= n; ++s) {
            if (block_respects_margin(s, reveal, bounds, margin)) {
                starts.push_back(s);
            }
        }
        if (!starts.empty()) {
            break;
        }
    }
    ActivationSequence out(n, ActivationToken::Masked);
    if (reveal > 0) {
        std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
        const std::size_t start = starts[pick(rng)];
        std::copy(seq.begin() + static_cast<std::ptrdiff_t>(start),
                  seq.begin() + static_cast<std::ptrdiff_t>(start + reveal),
                  out.begin() + static_cast<std::ptrdiff_t>(start));
    }
    return detail::make_record(std::move(out), MaskingStrategy::SpanUnmask, t);
}

[[nodiscard]] inline CorruptionRecord mask_full(const ActivationSequence& seq) {
    return detail::make_record(ActivationSequence(seq.size(), ActivationToken::Masked), MaskingStrategy::Full, 1.0);
}

// Noise level for training draws: uniform on (0, 1]; t = 0 would leave the 1/t weight undefined.
[[nodiscard]] inline double draw_noise_level(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return 1.0 - u(rng);
}

// Draw a strategy uniformly from `mix`, then a noise level for it (Full uses t = 1).
[[nodiscard]] inline CorruptionRecord sample_training_corruption(const ActivationSequence& seq, Rng& rng,
                                                                 const MaskingMix& mix = MaskingMix::mixture(),
                                                                 std::size_t margin = 2) {
    detail::check_clean(seq, "sample_training_corruption");
    if (mix.strategies.empty()) {
        throw InvalidArgument("masking mix has no strategies");
    }
    std::uniform_int_distribution<std::size_t> pick(0, mix.strategies.size() - 1);
    const auto strategy = mix.strategies[pick(rng)];
    switch (strategy) {
    case MaskingStrategy::Full: return mask_full(seq);
    case MaskingStrategy::Independent: return mask_independent(seq, draw_noise_level(rng), rng);
    case MaskingStrategy::BoundarySpan: return mask_boundary_span(seq, draw_noise_level(rng), rng);
    case MaskingStrategy::SpanUnmask: return mask_span_unmask(seq, draw_noise_level(rng), rng, margin);
    }
    throw InvalidArgument("unreachable masking strategy");
}

// Force every position before `cutoff` to Inactive, overriding masks.
[[nodiscard]] inline CorruptionRecord apply_inactive_override(CorruptionRecord rec, std::size_t cutoff) {
    if (cutoff > rec.masked_seq.size()) {
        throw InvalidArgument("inactive override cutoff " + std::to_string(cutoff) + " exceeds length " +
                              std::to_string(rec.masked_seq.size()));
    }
    std::fill(rec.masked_seq.begin(), rec.masked_seq.begin() + static_cast<std::ptrdiff_t>(cutoff),
              ActivationToken::Inactive);
    rec.masked_count = count_masked(rec.masked_seq);
    return rec;
}

} // namespace spanact
