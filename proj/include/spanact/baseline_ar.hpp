#pragma once

// Point-wise AR comparator: one score per frame from a causal score head, a
// fixed threshold, no revision of earlier outputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "spanact/activation.hpp"
#include "spanact/corruption.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/engine.hpp"
#include "spanact/error.hpp"
#include "spanact/neural.hpp"

namespace spanact {

inline constexpr double kArThreshold = 0.35;

// Trailing ceil(P% * length) seconds of the span are Active. Returned over the span only.
[[nodiscard]] inline ActivationSequence label_last_p(const EventSpan& span, double percent) {
    validate(span);
    if (!(percent >= 0.0 && percent <= 100.0)) {
        throw InvalidArgument("label_last_p: P must lie in [0, 100]");
    }
    const auto len = span.length();
    // small slack so exact products like 50% of 10 are not pushed up by rounding error
    const auto active = std::min<std::int64_t>(
        len, static_cast<std::int64_t>(std::ceil(percent / 100.0 * static_cast<double>(len) - 1e-9)));
    ActivationSequence seq(static_cast<std::size_t>(len), ActivationToken::Inactive);
    std::fill(seq.end() - active, seq.end(), ActivationToken::Active);
    return seq;
}

// AR labels over [start, start + len), one P ~ U[0, p_max] per event.
[[nodiscard]] inline ActivationSequence ar_labels(const std::vector<EventSpan>& targets, std::int64_t start,
                                                  std::int64_t len, double p_max, Rng& rng) {
    ActivationSequence out(static_cast<std::size_t>(len), ActivationToken::Inactive);
    std::uniform_real_distribution<double> pdist(0.0, p_max);
    for (const auto& e : targets) {
        const double p = pdist(rng);
        const auto seg = label_last_p(e, p);
        for (std::int64_t s = std::max(e.start_s, start); s <= std::min(e.end_s, start + len - 1); ++s) {
            out[static_cast<std::size_t>(s - start)] = seg[static_cast<std::size_t>(s - e.start_s)];
        }
    }
    return out;
}

struct ArState {
    EngineConfig config; // max_context / retain_on_cap / reset_on_trigger are used
    int query_id = 0;
    FeatureBuffer visual_cache;
    std::vector<TriggerRecord> context_log;
    std::int64_t now = -1;
    bool prev_fired = false;
    std::size_t cap_events = 0;
    double threshold = kArThreshold;
    ActivationSequence decisions; // one per second, final when made
    std::unique_ptr<InferenceSession> session;
};

struct ArFrame {
    TriggerDecision decision;
    bool issued = false;
    double score = 0.0;
    double predict_ms = 0.0;
};

[[nodiscard]] inline ArState start_ar_stream(const EngineConfig& cfg, int query_id, std::size_t feature_dim,
                                             const ScoreModel* model = nullptr) {
    validate(cfg);
    ArState st;
    st.config = cfg;
    st.query_id = query_id;
    st.visual_cache = FeatureBuffer(feature_dim);
    if (model != nullptr) {
        st.session = model->new_session();
    }
    return st;
}

// Decision from a score: strictly above the threshold.
[[nodiscard]] inline bool ar_fires(double score, double threshold = kArThreshold) noexcept {
    return score > threshold;
}

inline ArFrame ar_step(ArState& st, std::span<const double> feature, const ScoreModel& model) {
    if (feature.size() != st.visual_cache.dim() || model.feature_dim() != st.visual_cache.dim()) {
        throw InvalidArgument("ar_step: feature dimension mismatch");
    }
    st.now += 1;
    st.visual_cache.push_back(feature);
    if (st.visual_cache.rows() > st.config.max_context) {
        st.visual_cache.keep_last(st.config.retain_on_cap);
        if (st.session) {
            st.session->invalidate();
        }
        ++st.cap_events;
    }
    ArFrame out;
    const auto t0 = std::chrono::steady_clock::now();
    out.score = model.score_newest(st.query_id, st.visual_cache.data(), st.visual_cache.dim(), st.now,
                                   st.session.get());
    out.predict_ms = detail::elapsed_ms(t0);
    const bool fired = ar_fires(out.score, st.threshold);
    st.decisions.push_back(fired ? ActivationToken::Active : ActivationToken::Inactive);
    out.decision = TriggerDecision{fired, st.now, fired ? std::size_t{1} : std::size_t{0}};
    out.issued = fired && !st.prev_fired;
    st.prev_fired = fired;
    if (out.issued) {
        st.context_log.push_back({st.now, fired ? "1" : "0", out.decision.span_len});
        if (st.config.reset_on_trigger) {
            st.visual_cache.clear();
            if (st.session) {
                st.session->invalidate();
            }
        }
    }
    return out;
}

// Scores known up front (tests, oracle scoring).
class FixedScores final : public ScoreModel {
public:
    FixedScores(std::vector<double> scores, std::size_t feature_dim)
        : scores_(std::move(scores)), feature_dim_(feature_dim) {}
    [[nodiscard]] std::size_t feature_dim() const override { return feature_dim_; }
    [[nodiscard]] double score_newest(int, std::span<const double>, std::size_t, std::int64_t newest_time,
                                      InferenceSession*) const override {
        if (newest_time < 0 || static_cast<std::size_t>(newest_time) >= scores_.size()) {
            throw InvalidArgument("fixed scores: time out of range");
        }
        return scores_[static_cast<std::size_t>(newest_time)];
    }

private:
    std::vector<double> scores_;
    std::size_t feature_dim_;
};

} // namespace spanact
