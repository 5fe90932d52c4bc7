#pragma once

// Online activation loop. Per frame: append the feature, advance the window,
// re-mask carried decisions the model no longer backs, denoise the masked slots
// over K steps, then test the trigger.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanact/activation.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/error.hpp"

namespace spanact {

enum class UnmaskSchedule { UniformCount, FractionOfRemaining };
enum class RemaskMode { Selective, LastOnly };

struct EngineConfig {
    std::size_t window = 256;      // W
    std::size_t steps = 8;         // K
    double tau = 0.75;
    std::size_t gamma = 1;
    std::size_t max_context = 256;
    std::size_t retain_on_cap = 128;
    UnmaskSchedule schedule = UnmaskSchedule::UniformCount;
    RemaskMode remask = RemaskMode::Selective;
    bool reset_on_trigger = true;  // clear cache and window after a trigger
};

inline void validate(const EngineConfig& cfg) {
    if (cfg.window == 0 || cfg.steps == 0) {
        throw InvalidArgument("engine config: W and K must be >= 1");
    }
    if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) {
        throw InvalidArgument("engine config: tau must lie in [0, 1]");
    }
    if (cfg.gamma == 0 || cfg.gamma > cfg.window) {
        throw InvalidArgument("engine config: gamma must lie in [1, W]");
    }
    if (cfg.retain_on_cap == 0 || cfg.retain_on_cap >= cfg.max_context) {
        throw InvalidArgument("engine config: need 0 < retain_on_cap < max_context");
    }
}

struct StepRecord {
    std::size_t step = 0; // 1-based
    std::vector<std::size_t> positions;
    std::vector<double> confidences;
    double predict_ms = 0.0;
};

struct StepTrace {
    std::int64_t time_s = 0;
    std::size_t n_init = 0;
    std::vector<std::size_t> remask_set;
    std::vector<StepRecord> steps;
    double retention_ms = 0.0;
    std::size_t predict_calls = 0;
    bool cap_event = false;

    [[nodiscard]] double denoise_ms() const {
        double total = 0.0;
        for (const auto& s : steps) {
            total += s.predict_ms;
        }
        return total;
    }
};

struct TriggerRecord {
    std::int64_t time_s = 0;
    std::string window;
    std::size_t span_len = 0;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline double value_prob(ActivationToken v, double p_active) {
    return v == ActivationToken::Active ? p_active : 1.0 - p_active;
}

} // namespace detail

// Keep a resolved position only if the model's probability for its value exceeds tau
// (tau = 0 keeps everything). Masked slots take the new P(Active).
struct RemaskResult {
    ActivationWindow window;
    std::size_t n_init = 0;
    std::vector<std::size_t> remasked;
};

[[nodiscard]] inline RemaskResult selective_remask(ActivationWindow window, const ProbVector& p_active, double tau) {
    if (p_active.size() != window.size()) {
        throw InvalidArgument("selective_remask: probability vector length differs from window");
    }
    RemaskResult r;
    for (std::size_t j = 0; j < window.size(); ++j) {
        auto& token = window.seq[j];
        if (token == ActivationToken::Masked) {
            window.probs[j] = p_active[j];
            continue;
        }
        const double pv = detail::value_prob(token, p_active[j]);
        if (tau == 0.0 || pv > tau) {
            window.probs[j] = pv;
        } else {
            token = ActivationToken::Masked;
            window.probs[j] = p_active[j];
            r.remasked.push_back(j);
        }
    }
    r.n_init = count_masked(window.seq);
    r.window = std::move(window);
    return r;
}

// Positions to reveal this step, in reveal order: highest confidence first, ties to the lower index.
[[nodiscard]] inline std::vector<std::size_t> rank_masked(const ActivationSequence& seq, const ProbVector& p,
                                                          std::size_t k) {
    std::vector<std::size_t> masked;
    for (std::size_t j = 0; j < seq.size(); ++j) {
        if (seq[j] == ActivationToken::Masked) {
            masked.push_back(j);
        }
    }
    auto conf = [&](std::size_t j) { return std::max(p[j], 1.0 - p[j]); };
    std::stable_sort(masked.begin(), masked.end(), [&](std::size_t a, std::size_t b) { return conf(a) > conf(b); });
    masked.resize(std::min(k, masked.size()));
    return masked;
}

// Resolve every Masked slot of `window` in at most K predictor calls.
// `base` supplies query and features; its window pointer is ignored.
[[nodiscard]] inline std::vector<StepRecord> denoise_k_steps(ActivationWindow& window, const PredictorContext& base,
                                                             const Denoiser& denoiser, std::size_t K,
                                                             UnmaskSchedule schedule,
                                                             InferenceSession* session = nullptr) {
    if (K == 0) {
        throw InvalidArgument("denoise_k_steps: K must be >= 1");
    }
    std::vector<StepRecord> trace;
    const std::size_t n_init = count_masked(window.seq);
    if (n_init == 0) {
        return trace;
    }
    const std::size_t k_uniform = (n_init + K - 1) / K;
    PredictorContext ctx = base;
    ctx.window = &window;
    for (std::size_t step = 1; step <= K; ++step) {
        const std::size_t remaining = count_masked(window.seq);
        if (remaining == 0) {
            break;
        }
        std::size_t k = 0;
        if (step == K) {
            k = remaining;
        } else if (schedule == UnmaskSchedule::UniformCount) {
            k = k_uniform;
        } else {
            const std::size_t left = K - step + 1; // reveal fraction 1/left of what is still masked
            k = (remaining + left - 1) / left;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const ProbVector p = denoiser.predict(ctx, session);
        StepRecord rec;
        rec.predict_ms = detail::elapsed_ms(t0);
        rec.step = step;
        if (p.size() != window.size()) {
            throw InvalidArgument("denoiser returned the wrong number of probabilities");
        }
        rec.positions = rank_masked(window.seq, p, k);
        for (auto j : rec.positions) {
            const double pj = std::clamp(p[j], 0.0, 1.0);
            rec.confidences.push_back(std::max(pj, 1.0 - pj));
            window.seq[j] = pj >= 0.5 ? ActivationToken::Active : ActivationToken::Inactive;
            window.probs[j] = detail::value_prob(window.seq[j], pj);
        }
        for (std::size_t j = 0; j < window.size(); ++j) {
            if (window.seq[j] == ActivationToken::Masked) {
                window.probs[j] = p[j];
            }
        }
        trace.push_back(std::move(rec));
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Stream state
// ---------------------------------------------------------------------------

struct StreamState {
    EngineConfig config;
    int query_id = 0;
    FeatureBuffer visual_cache;
    ActivationWindow window;
    std::vector<TriggerRecord> context_log;
    std::int64_t now = -1;
    bool prev_fired = false;
    std::size_t cap_events = 0;
    // Decision each second held when it left the window (Masked = not yet committed).
    ActivationSequence committed;
    std::unique_ptr<InferenceSession> session;
};

struct FrameResult {
    TriggerDecision decision; // raw trigger test on the resolved window
    bool issued = false;      // rising edge: fired now and not at the previous frame
    StepTrace trace;
};

namespace detail {

inline void commit(StreamState& st, std::int64_t second, ActivationToken v) {
    if (second < 0) {
        return;
    }
    const auto s = static_cast<std::size_t>(second);
    if (st.committed.size() <= s) {
        st.committed.resize(s + 1, ActivationToken::Masked);
    }
    st.committed[s] = v;
}

inline void commit_range(StreamState& st, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
        commit(st, st.window.time_of(i), st.window.seq[i]);
    }
}

} // namespace detail

[[nodiscard]] inline StreamState start_stream(const EngineConfig& cfg, int query_id, std::size_t feature_dim,
                                              const Denoiser* denoiser = nullptr) {
    validate(cfg);
    StreamState st;
    st.config = cfg;
    st.query_id = query_id;
    st.visual_cache = FeatureBuffer(feature_dim);
    st.window = new_window(cfg.window);
    if (denoiser != nullptr) {
        st.session = denoiser->new_session();
    }
    return st;
}

// Log the trigger; with reset_on_trigger, clear the cache and the window.
inline void handle_trigger(StreamState& st, const TriggerDecision& decision) {
    if (!decision.fired) {
        throw ProtocolViolation("handle_trigger called without a fired trigger");
    }
    st.context_log.push_back({decision.time_s, to_string(st.window.seq), decision.span_len});
    if (!st.config.reset_on_trigger) {
        return;
    }
    if (!st.window.empty() && st.window.anchor) {
        detail::commit_range(st, 0, st.window.size());
    }
    st.visual_cache.clear();
    st.window = new_window(st.config.window);
    if (st.session) {
        st.session->invalidate();
    }
}

// Past max_context cached frames, keep the newest retain_on_cap and rebuild the
// window over them fully masked. Returns whether a cap event happened.
inline bool enforce_context_cap(StreamState& st) {
    if (st.visual_cache.rows() <= st.config.max_context) {
        return false;
    }
    st.visual_cache.keep_last(st.config.retain_on_cap);
    const std::size_t keep = std::min(st.config.retain_on_cap, st.config.window);
    const std::int64_t first_kept = st.now - static_cast<std::int64_t>(keep) + 1;
    if (st.window.anchor) {
        for (std::size_t i = 0; i < st.window.size() && st.window.time_of(i) < first_kept; ++i) {
            detail::commit(st, st.window.time_of(i), st.window.seq[i]);
        }
    }
    st.window = new_window(st.config.window);
    st.window.seq.assign(keep, ActivationToken::Masked);
    st.window.probs.assign(keep, 0.5);
    st.window.anchor = st.now;
    if (st.session) {
        st.session->invalidate();
    }
    ++st.cap_events;
    return true;
}

inline FrameResult ingest_frame(StreamState& st, std::span<const double> feature, const Denoiser& denoiser) {
    if (feature.size() != st.visual_cache.dim()) {
        throw InvalidArgument("ingest_frame: feature dimension " + std::to_string(feature.size()) + ", expected " +
                              std::to_string(st.visual_cache.dim()));
    }
    if (denoiser.feature_dim() != st.visual_cache.dim()) {
        throw InvalidArgument("ingest_frame: denoiser feature dimension mismatch");
    }
    FrameResult out;
    auto& trace = out.trace;
    st.now += 1;
    trace.time_s = st.now;
    st.visual_cache.push_back(feature);

    // Window advance. A cap event rebuilds the window already covering this frame.
    if (st.visual_cache.rows() > st.config.max_context) {
        enforce_context_cap(st);
        trace.cap_event = true;
    } else {
        if (st.window.full() && st.window.anchor) {
            detail::commit_range(st, 0, 1);
        }
        st.window = shift_append(std::move(st.window));
        st.window.anchor = st.now;
    }

    const PredictorContext base{st.query_id, st.visual_cache.data(), st.visual_cache.dim(), nullptr};

    // Retention pass over carried decisions.
    const bool has_carried = count_masked(st.window.seq) < st.window.size();
    if (has_carried && st.config.remask == RemaskMode::Selective) {
        PredictorContext ctx = base;
        ctx.window = &st.window;
        const auto t0 = std::chrono::steady_clock::now();
        const ProbVector p = denoiser.predict(ctx, st.session.get());
        trace.retention_ms = detail::elapsed_ms(t0);
        trace.predict_calls += 1;
        auto r = selective_remask(std::move(st.window), p, st.config.tau);
        st.window = std::move(r.window);
        trace.remask_set = std::move(r.remasked);
    }
    trace.n_init = count_masked(st.window.seq);

    trace.steps = denoise_k_steps(st.window, base, denoiser, st.config.steps, st.config.schedule, st.session.get());
    trace.predict_calls += trace.steps.size();

    out.decision = check_trigger(st.window, st.config.gamma);
    out.issued = out.decision.fired && !st.prev_fired;
    st.prev_fired = out.decision.fired;
    if (out.issued) {
        handle_trigger(st, out.decision);
    }
    return out;
}

// Commit whatever is still in the window; returns one decision per stream second.
inline ActivationSequence finish_stream(StreamState& st) {
    if (!st.window.empty() && st.window.anchor) {
        detail::commit_range(st, 0, st.window.size());
    }
    ActivationSequence out = st.committed;
    out.resize(static_cast<std::size_t>(st.now + 1), ActivationToken::Inactive);
    for (auto& v : out) {
        if (v == ActivationToken::Masked) {
            v = ActivationToken::Inactive;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json to_json(const TriggerRecord& r, const std::string& model = "denoiser") {
    return {{"t", r.time_s}, {"window", r.window}, {"span_len", r.span_len}, {"model", model}};
}

[[nodiscard]] inline nlohmann::json to_json(const StepTrace& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps) {
        steps.push_back({{"step", s.step}, {"positions", s.positions}, {"confidences", s.confidences},
                         {"predict_ms", s.predict_ms}});
    }
    return {{"t", t.time_s},           {"n_init", t.n_init},           {"remask", t.remask_set},
            {"steps", steps},          {"retention_ms", t.retention_ms}, {"predict_calls", t.predict_calls},
            {"cap_event", t.cap_event}};
}

[[nodiscard]] inline std::string_view to_string(UnmaskSchedule s) {
    return s == UnmaskSchedule::UniformCount ? "uniform_count" : "fraction_of_remaining";
}

[[nodiscard]] inline nlohmann::json to_json(const EngineConfig& c) {
    return {{"W", c.window},
            {"K", c.steps},
            {"tau", c.tau},
            {"gamma", c.gamma},
            {"max_context", c.max_context},
            {"retain_on_cap", c.retain_on_cap},
            {"schedule", to_string(c.schedule)},
            {"remask", c.remask == RemaskMode::Selective ? "selective" : "last_only"},
            {"reset_on_trigger", c.reset_on_trigger}};
}

[[nodiscard]] inline EngineConfig engine_config_from_json(const nlohmann::json& j, EngineConfig c = {}) {
    c.window = j.value("W", c.window);
    c.steps = j.value("K", c.steps);
    c.tau = j.value("tau", c.tau);
    c.gamma = j.value("gamma", c.gamma);
    c.max_context = j.value("max_context", c.max_context);
    c.retain_on_cap = j.value("retain_on_cap", c.retain_on_cap);
    if (j.contains("schedule")) {
        const auto s = j.at("schedule").get<std::string>();
        if (s == "uniform_count") {
            c.schedule = UnmaskSchedule::UniformCount;
        } else if (s == "fraction_of_remaining") {
            c.schedule = UnmaskSchedule::FractionOfRemaining;
        } else {
            throw ConfigError("unknown schedule '" + s + "'");
        }
    }
    if (j.contains("remask")) {
        const auto s = j.at("remask").get<std::string>();
        if (s == "selective") {
            c.remask = RemaskMode::Selective;
        } else if (s == "last_only") {
            c.remask = RemaskMode::LastOnly;
        } else {
            throw ConfigError("unknown remask mode '" + s + "'");
        }
    }
    c.reset_on_trigger = j.value("reset_on_trigger", c.reset_on_trigger);
    validate(c);
    return c;
}

} // namespace spanact
