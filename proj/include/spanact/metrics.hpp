#pragma once

// Segment and frame F1, and transition counts aligned to event boundaries.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "spanact/activation.hpp"
#include "spanact/error.hpp"

namespace spanact {

struct SegmentMatchConfig {
    double iou_threshold = 0.5;
};

inline void validate(const SegmentMatchConfig& cfg) {
    if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0)) {
        throw InvalidArgument("iou_threshold must lie in (0, 1]");
    }
}

// Intersection over union of two inclusive second ranges.
[[nodiscard]] inline double segment_iou(const EventSpan& a, const EventSpan& b) noexcept {
    const std::int64_t inter = std::max<std::int64_t>(0, std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s) + 1);
    const std::int64_t uni = a.length() + b.length() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct SegmentCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    SegmentCounts& operator+=(const SegmentCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

[[nodiscard]] inline double f1_from_counts(const SegmentCounts& c) noexcept {
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// Greedy one-to-one matching in descending IoU (ties: lower pred index, then lower gt index).
[[nodiscard]] inline SegmentCounts match_segments(const std::vector<EventSpan>& pred, const std::vector<EventSpan>& gt,
                                                  const SegmentMatchConfig& cfg = {}) {
    validate(cfg);
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (std::size_t j = 0; j < gt.size(); ++j) {
            const double iou = segment_iou(pred[i], gt[j]);
            if (iou >= cfg.iou_threshold) {
                pairs.emplace_back(iou, i, j);
            }
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::vector<bool> used_p(pred.size()), used_g(gt.size());
    SegmentCounts c;
    for (const auto& [iou, i, j] : pairs) {
        if (!used_p[i] && !used_g[j]) {
            used_p[i] = used_g[j] = true;
            ++c.tp;
        }
    }
    c.fp = pred.size() - c.tp;
    c.fn = gt.size() - c.tp;
    return c;
}

[[nodiscard]] inline double segment_f1(const std::vector<EventSpan>& pred, const std::vector<EventSpan>& gt,
                                       const SegmentMatchConfig& cfg = {}) {
    return f1_from_counts(match_segments(pred, gt, cfg));
}

// Maximal Active runs as second spans.
[[nodiscard]] inline std::vector<EventSpan> spans_from_decisions(const ActivationSequence& decisions) {
    std::vector<EventSpan> out;
    for (const auto& s : active_spans(decisions)) {
        out.push_back({static_cast<std::int64_t>(s.start), static_cast<std::int64_t>(s.end), 0});
    }
    return out;
}

[[nodiscard]] inline SegmentCounts frame_counts(const ActivationSequence& pred, const ActivationSequence& gt) {
    if (pred.size() != gt.size()) {
        throw InvalidArgument("frame_counts: length mismatch");
    }
    SegmentCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == ActivationToken::Active;
        const bool g = gt[i] == ActivationToken::Active;
        c.tp += p && g ? 1 : 0;
        c.fp += p && !g ? 1 : 0;
        c.fn += !p && g ? 1 : 0;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Transition histogram
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kTransitionHorizon = 60;
inline constexpr std::size_t kDuringBins = 10;

struct TransitionHistogram {
    std::array<std::uint64_t, kTransitionHorizon> pre{};   // offset -60 .. -1 from onset
    std::array<std::uint64_t, kDuringBins> during{};        // progress 0-10%, ..., 90-100%
    std::array<std::uint64_t, kTransitionHorizon> post{};  // offset +1 .. +60 from the last event second
    std::size_t events = 0;

    [[nodiscard]] std::uint64_t pre_total() const { return sum(pre); }
    [[nodiscard]] std::uint64_t during_total() const { return sum(during); }
    [[nodiscard]] std::uint64_t post_total() const { return sum(post); }
    [[nodiscard]] std::uint64_t total() const { return pre_total() + during_total() + post_total(); }

    TransitionHistogram& operator+=(const TransitionHistogram& o) {
        for (std::size_t i = 0; i < pre.size(); ++i) {
            pre[i] += o.pre[i];
            post[i] += o.post[i];
        }
        for (std::size_t i = 0; i < during.size(); ++i) {
            during[i] += o.during[i];
        }
        events += o.events;
        return *this;
    }

private:
    template <std::size_t N>
    static std::uint64_t sum(const std::array<std::uint64_t, N>& a) {
        std::uint64_t s = 0;
        for (auto v : a) {
            s += v;
        }
        return s;
    }
};

// Seconds s with decisions[s-1] != decisions[s].
[[nodiscard]] inline std::vector<std::int64_t> transition_times(const ActivationSequence& decisions) {
    if (!is_resolved(decisions)) {
        throw UnresolvedSequence("transition_times: decisions contain Masked");
    }
    std::vector<std::int64_t> out;
    for (std::size_t s = 1; s < decisions.size(); ++s) {
        if (decisions[s] != decisions[s - 1]) {
            out.push_back(static_cast<std::int64_t>(s));
        }
    }
    return out;
}

// Bin every transition against every event: pre [onset-60, onset), during
// [onset, end] by progress, post (end, end+60]. Counts add up across events.
[[nodiscard]] inline TransitionHistogram transition_histogram(const ActivationSequence& decisions,
                                                              const std::vector<EventSpan>& events) {
    TransitionHistogram h;
    const auto times = transition_times(decisions);
    for (const auto& e : events) {
        validate(e);
        ++h.events;
        for (auto s : times) {
            if (s >= e.start_s - kTransitionHorizon && s < e.start_s) {
                ++h.pre[static_cast<std::size_t>(s - (e.start_s - kTransitionHorizon))];
            } else if (s >= e.start_s && s <= e.end_s) {
                const double progress = e.end_s == e.start_s ? 0.0
                                                             : static_cast<double>(s - e.start_s) /
                                                                   static_cast<double>(e.end_s - e.start_s);
                const auto bin = std::min<std::size_t>(kDuringBins - 1, static_cast<std::size_t>(progress * kDuringBins));
                ++h.during[bin];
            } else if (s > e.end_s && s <= e.end_s + kTransitionHorizon) {
                ++h.post[static_cast<std::size_t>(s - e.end_s - 1)];
            }
        }
    }
    return h;
}

[[nodiscard]] inline nlohmann::json to_json(const TransitionHistogram& h) {
    const double n = h.events > 0 ? static_cast<double>(h.events) : 1.0;
    return {{"events", h.events},
            {"pre", h.pre},
            {"during", h.during},
            {"post", h.post},
            {"totals", {{"pre", h.pre_total()}, {"during", h.during_total()}, {"post", h.post_total()}}},
            {"per_event",
             {{"pre", static_cast<double>(h.pre_total()) / n},
              {"during", static_cast<double>(h.during_total()) / n},
              {"post", static_cast<double>(h.post_total()) / n}}}};
}

} // namespace spanact
