#pragma once

// Mask-predictor contract: given a query, the per-second feature cache and a
// (partially masked) activation window, return P(Active) at every window slot.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spanact/activation.hpp"
#include "spanact/error.hpp"

namespace spanact {

// Row-major sequence of fixed-dimension feature vectors, one per second.
class FeatureBuffer {
public:
    FeatureBuffer() = default;
    explicit FeatureBuffer(std::size_t dim) : dim_(dim) {}

    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::size_t rows() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }

    void push_back(std::span<const double> v) {
        if (v.size() != dim_) {
            throw InvalidArgument("feature dimension mismatch: expected " + std::to_string(dim_) + ", got " +
                                  std::to_string(v.size()));
        }
        data_.insert(data_.end(), v.begin(), v.end());
    }

    // Keep only the newest `n` rows.
    void keep_last(std::size_t n) {
        if (n < rows()) {
            data_.erase(data_.begin(), data_.end() - static_cast<std::ptrdiff_t>(n * dim_));
        }
    }

    void clear() noexcept { data_.clear(); }

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

// View over everything the predictor conditions on. `features` holds
// `features.size() / feature_dim` rows; the window's positions align with the
// newest rows.
struct PredictorContext {
    int query_id = 0;
    std::span<const double> features;
    std::size_t feature_dim = 0;
    const ActivationWindow* window = nullptr;

    [[nodiscard]] std::size_t feature_rows() const noexcept {
        return feature_dim == 0 ? 0 : features.size() / feature_dim;
    }
    [[nodiscard]] std::span<const double> feature_row(std::size_t i) const {
        return features.subspan(i * feature_dim, feature_dim);
    }
};

// P(Active) at every window position, masked or resolved.
using ProbVector = std::vector<double>;

inline void validate(const PredictorContext& ctx) {
    if (ctx.window == nullptr) {
        throw InvalidArgument("predictor context has no window");
    }
    if (ctx.feature_dim == 0 || ctx.features.size() % ctx.feature_dim != 0) {
        throw InvalidArgument("predictor context features are not a whole number of rows");
    }
    if (ctx.feature_rows() < ctx.window->size()) {
        throw InvalidArgument("predictor context has fewer features than window positions");
    }
}

// ---------------------------------------------------------------------------
// Duplicated input layout
// ---------------------------------------------------------------------------

enum class SlotRole : std::uint8_t { Query = 0, Feature = 1, Prefix = 2, Separator = 3, Prediction = 4 };
inline constexpr std::size_t kNumRoles = 5;

enum class DuplicationMode : std::uint8_t {
    Duplicate,    // prefix copy carries the same tokens as the prediction copy
    MaskedPrefix, // prefix copy is all Masked (duplication disabled)
};

struct LayoutSlot {
    SlotRole role = SlotRole::Query;
    ActivationToken token = ActivationToken::Masked; // Prefix / Prediction slots only
    std::size_t feature_row = 0;                     // aligned feature row (Feature/Prefix/Prediction)
    std::size_t window_pos = 0;                      // Prefix / Prediction slots only
};

// [query, features..., a..., separator, a'...]; predictions are read at a'.
struct ModelInputLayout {
    std::vector<LayoutSlot> slots;
    std::size_t prefix_len = 0;       // query + feature slots
    std::size_t prediction_begin = 0; // index of a'[0]
    std::size_t window_len = 0;

    [[nodiscard]] std::size_t activation_slots() const noexcept {
        return slots.size() - prefix_len - (window_len > 0 ? 1 : 0);
    }
};

[[nodiscard]] inline ModelInputLayout duplicate_input(const PredictorContext& ctx,
                                                      DuplicationMode mode = DuplicationMode::Duplicate) {
    validate(ctx);
    const auto& window = *ctx.window;
    const std::size_t rows = ctx.feature_rows();
    const std::size_t w = window.size();
    const std::size_t first_row = rows - w;

    ModelInputLayout layout;
    layout.window_len = w;
    layout.slots.reserve(1 + rows + (w > 0 ? 2 * w + 1 : 0));
    layout.slots.push_back({SlotRole::Query, ActivationToken::Masked, 0, 0});
    for (std::size_t i = 0; i < rows; ++i) {
        layout.slots.push_back({SlotRole::Feature, ActivationToken::Masked, i, 0});
    }
    layout.prefix_len = layout.slots.size();
    if (w == 0) {
        layout.prediction_begin = layout.slots.size();
        return layout;
    }
    for (std::size_t j = 0; j < w; ++j) {
        const auto token = mode == DuplicationMode::Duplicate ? window.seq[j] : ActivationToken::Masked;
        layout.slots.push_back({SlotRole::Prefix, token, first_row + j, j});
    }
    layout.slots.push_back({SlotRole::Separator, ActivationToken::Masked, 0, 0});
    layout.prediction_begin = layout.slots.size();
    for (std::size_t j = 0; j < w; ++j) {
        layout.slots.push_back({SlotRole::Prediction, window.seq[j], first_row + j, j});
    }
    return layout;
}

// ---------------------------------------------------------------------------
// Denoiser interface
// ---------------------------------------------------------------------------

// Per-stream reusable state (e.g. cached attention keys for the feature prefix).
// Holding one never changes predictions, only their cost.
class InferenceSession {
public:
    virtual ~InferenceSession() = default;
    // Call whenever the feature cache is cleared or truncated.
    virtual void invalidate() = 0;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;

    [[nodiscard]] virtual std::size_t feature_dim() const = 0;
    [[nodiscard]] virtual ProbVector predict(const PredictorContext& ctx) const = 0;

    [[nodiscard]] virtual std::unique_ptr<InferenceSession> new_session() const { return nullptr; }
    [[nodiscard]] virtual ProbVector predict(const PredictorContext& ctx, InferenceSession* /*session*/) const {
        return predict(ctx);
    }
};

// Test double for the learned predictor. Knows the ground truth per stream
// second and emits (1 - eps) * truth + eps * (1 - truth), with extra noise near true
// boundaries and optional deterministic jitter.
class OracleDenoiser final : public Denoiser {
public:
    struct Params {
        double epsilon = 0.0;         // in [0, 0.5]
        std::size_t boundary_blur = 0; // radius (seconds) of extra noise around boundaries
        double blur_strength = 0.0;    // added to epsilon at a boundary, fading linearly with distance
        double jitter = 0.0;           // amplitude of hashed uniform noise, clamped to [0, 1]
        std::uint64_t seed = 0;
    };

    OracleDenoiser(ActivationSequence truth, std::size_t feature_dim, Params params)
        : truth_(std::move(truth)), feature_dim_(feature_dim), params_(params) {
        if (!(params_.epsilon >= 0.0 && params_.epsilon <= 0.5)) {
            throw InvalidArgument("oracle epsilon must lie in [0, 0.5]");
        }
        if (!is_resolved(truth_)) {
            throw InvalidArgument("oracle truth must be fully resolved");
        }
        for (std::size_t i = 0; i + 1 < truth_.size(); ++i) {
            if (truth_[i] != truth_[i + 1]) {
                boundary_seconds_.push_back(static_cast<std::int64_t>(i));
            }
        }
    }

    [[nodiscard]] std::size_t feature_dim() const override { return feature_dim_; }
    [[nodiscard]] const Params& params() const noexcept { return params_; }

    // Effective epsilon at stream second `s`.
    [[nodiscard]] double effective_epsilon(std::int64_t s) const {
        double eps = params_.epsilon;
        if (params_.boundary_blur > 0 && params_.blur_strength > 0.0) {
            const auto radius = static_cast<std::int64_t>(params_.boundary_blur);
            std::int64_t best = std::numeric_limits<std::int64_t>::max();
            for (auto b : boundary_seconds_) {
                const std::int64_t d = s <= b ? b - s : s - (b + 1);
                best = std::min(best, d);
            }
            if (best <= radius) {
                eps += params_.blur_strength * (1.0 - static_cast<double>(best) / static_cast<double>(radius + 1));
            }
        }
        return std::min(eps, 0.5);
    }

    [[nodiscard]] double truth_at(std::int64_t s) const {
        if (s < 0 || s >= static_cast<std::int64_t>(truth_.size())) {
            return 0.0;
        }
        return truth_[static_cast<std::size_t>(s)] == ActivationToken::Active ? 1.0 : 0.0;
    }

    [[nodiscard]] ProbVector predict(const PredictorContext& ctx) const override {
        validate(ctx);
        if (ctx.feature_dim != feature_dim_) {
            throw InvalidArgument("oracle: feature dimension mismatch");
        }
        const auto& window = *ctx.window;
        ProbVector p(window.size());
        if (window.empty()) {
            return p;
        }
        const std::int64_t anchor = window.anchor.value_or(static_cast<std::int64_t>(window.size()) - 1);
        const std::uint64_t masked = count_masked(window.seq);
        for (std::size_t j = 0; j < window.size(); ++j) {
            const std::int64_t s = anchor - static_cast<std::int64_t>(window.size()) + 1 + static_cast<std::int64_t>(j);
            const double eps = effective_epsilon(s);
            // eps reads as a flip probability, so 0.5 is uninformative
            const double y = truth_at(s);
            double v = (1.0 - eps) * y + eps * (1.0 - y);
            if (params_.jitter > 0.0) {
                const double u = unit_hash(params_.seed, static_cast<std::uint64_t>(s),
                                           static_cast<std::uint64_t>(anchor), masked);
                v = std::clamp(v + params_.jitter * (2.0 * u - 1.0), 0.0, 1.0);
            }
            p[j] = v;
        }
        return p;
    }

private:
    // splitmix64 finalizer over the inputs, mapped to [0, 1).
    static double unit_hash(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
        std::uint64_t x = a ^ 0x9e3779b97f4a7c15ULL;
        for (std::uint64_t v : {b, c, d}) {
            x += v + 0x9e3779b97f4a7c15ULL;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
            x ^= x >> 31;
        }
        return static_cast<double>(x >> 11) * 0x1.0p-53;
    }

    ActivationSequence truth_;
    std::size_t feature_dim_;
    Params params_;
    std::vector<std::int64_t> boundary_seconds_;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// (1/t) * sum over masked j of -log p(target_j), with p the P(Active) vector.
[[nodiscard]] inline double masked_ce_loss(const ProbVector& p, const ActivationSequence& target,
                                           const std::vector<bool>& mask, double t) {
    if (p.size() != target.size() || mask.size() != target.size()) {
        throw InvalidArgument("masked_ce_loss: length mismatch");
    }
    const bool any_masked = std::find(mask.begin(), mask.end(), true) != mask.end();
    if (!any_masked) {
        return 0.0;
    }
    if (!(t > 0.0)) {
        throw InvalidArgument("masked_ce_loss: t must be > 0 when positions are masked");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (!mask[j]) {
            continue;
        }
        if (target[j] == ActivationToken::Masked) {
            throw InvalidArgument("masked_ce_loss: target contains Masked token");
        }
        const double q = target[j] == ActivationToken::Active ? p[j] : 1.0 - p[j];
        sum -= std::log(q);
    }
    return sum / t;
}

[[nodiscard]] inline std::vector<bool> mask_of(const ActivationSequence& seq) {
    std::vector<bool> m(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        m[i] = seq[i] == ActivationToken::Masked;
    }
    return m;
}

} // namespace spanact
