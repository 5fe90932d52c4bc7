#include <gtest/gtest.h>

#include "spanact/engine.hpp"
#include "spanact/streamgen.hpp"
#include "support.hpp"

using namespace spanact;

namespace {

ActivationWindow resolved(const std::string& s, std::int64_t anchor) {
    auto w = new_window(16);
    w.seq = parse_sequence(s);
    w.probs.assign(w.seq.size(), 0.5);
    w.anchor = anchor;
    return w;
}

// Returns the same probability vector on every call.
class FixedDenoiser final : public Denoiser {
public:
    FixedDenoiser(ProbVector p, std::size_t d) : p_(std::move(p)), d_(d) {}
    [[nodiscard]] std::size_t feature_dim() const override { return d_; }
    [[nodiscard]] ProbVector predict(const PredictorContext& ctx) const override {
        return ProbVector(p_.begin(), p_.begin() + static_cast<std::ptrdiff_t>(ctx.window->size()));
    }

private:
    ProbVector p_;
    std::size_t d_;
};

std::vector<double> zeros(std::size_t rows, std::size_t d) { return std::vector<double>(rows * d, 0.0); }

} // namespace

TEST(Remask, LowValueProbabilityReturnsToMasked) {
    auto w = resolved("110M", 3);
    const auto r = selective_remask(w, {0.9, 0.6, 0.05, 0.5}, 0.75);
    EXPECT_EQ(to_string(r.window.seq), "1M0M");
    EXPECT_EQ(r.n_init, 2u);
    EXPECT_EQ(r.remasked, (std::vector<std::size_t>{1}));
}

TEST(Remask, ZeroTauKeepsAll) {
    const auto r = selective_remask(resolved("110M", 3), {0.9, 0.6, 0.05, 0.5}, 0.0);
    EXPECT_EQ(to_string(r.window.seq), "110M");
    EXPECT_EQ(r.n_init, 1u);
}

TEST(Remask, UnitTauRemasksAll) {
    const auto r = selective_remask(resolved("110M", 3), {0.99, 0.99, 0.01, 0.5}, 1.0);
    EXPECT_EQ(to_string(r.window.seq), "MMMM");
    EXPECT_EQ(r.n_init, 4u);
}

TEST(Denoise, OneAtATimeWhenFewMasked) {
    auto w = resolved("MMMMM0", 5);
    const auto f = zeros(6, 2);
    FixedDenoiser d({0.9, 0.2, 0.7, 0.95, 0.6, 0.1}, 2);
    const auto steps = denoise_k_steps(w, PredictorContext{0, f, 2, nullptr}, d, 8, UnmaskSchedule::UniformCount);
    ASSERT_EQ(steps.size(), 5u);
    for (const auto& s : steps) {
        EXPECT_EQ(s.positions.size(), 1u);
    }
    EXPECT_EQ(steps[0].positions[0], 3u);
    EXPECT_EQ(steps[1].positions[0], 0u);
    EXPECT_EQ(to_string(w.seq), "101110");
}

TEST(Denoise, NothingMaskedIsNoop) {
    auto w = resolved("0110", 3);
    const auto f = zeros(4, 2);
    FixedDenoiser d({0.5, 0.5, 0.5, 0.5}, 2);
    EXPECT_TRUE(denoise_k_steps(w, PredictorContext{0, f, 2, nullptr}, d, 8, UnmaskSchedule::UniformCount).empty());
    EXPECT_EQ(to_string(w.seq), "0110");
}

TEST(Denoise, TiesGoToLowerIndexAndHalfIsActive) {
    auto w = resolved("MMM", 2);
    const auto f = zeros(3, 2);
    FixedDenoiser d({0.5, 0.8, 0.2}, 2);
    const auto steps = denoise_k_steps(w, PredictorContext{0, f, 2, nullptr}, d, 3, UnmaskSchedule::UniformCount);
    ASSERT_EQ(steps.size(), 3u);
    EXPECT_EQ(steps[0].positions[0], 1u);
    EXPECT_EQ(steps[1].positions[0], 2u);
    EXPECT_EQ(steps[2].positions[0], 0u);
    EXPECT_EQ(to_string(w.seq), "110");
}

TEST(Denoise, MatchesBruteForceRanking) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        OracleDenoiser::Params p;
        p.epsilon = 0.3;
        p.jitter = 0.3;
        p.seed = seed;
        OracleDenoiser oracle(parse_sequence("0011100110"), 2, p);
        check::RecordingDenoiser rec(oracle);
        auto w = new_window(6);
        w.seq = parse_sequence(seed % 2 ? "MMMMMM" : "1MM0MM");
        w.probs.assign(6, 0.5);
        w.anchor = 9;
        const auto f = zeros(10, 2);
        StepTrace tr;
        tr.n_init = count_masked(w.seq);
        const auto sched = seed % 3 ? UnmaskSchedule::UniformCount : UnmaskSchedule::FractionOfRemaining;
        tr.steps = denoise_k_steps(w, PredictorContext{0, f, 2, nullptr}, rec, 2, sched);
        EXPECT_EQ(check::check_step_trace(tr, rec.calls, 2, sched), "") << seed;
        EXPECT_TRUE(is_resolved(w.seq));
    }
}

TEST(Denoise, FractionScheduleCounts) {
    auto w = resolved("MMMMMMMMMM", 9);
    const auto f = zeros(10, 2);
    FixedDenoiser d(ProbVector(10, 0.9), 2);
    const auto steps = denoise_k_steps(w, PredictorContext{0, f, 2, nullptr}, d, 4, UnmaskSchedule::FractionOfRemaining);
    std::vector<std::size_t> counts;
    for (const auto& s : steps) {
        counts.push_back(s.positions.size());
    }
    EXPECT_EQ(counts, (std::vector<std::size_t>{3, 3, 2, 2}));
}

TEST(Stream, FirstFrameResolvesInOneStep) {
    EngineConfig cfg;
    OracleDenoiser oracle(parse_sequence("1"), 2, {});
    auto st = start_stream(cfg, 0, 2, &oracle);
    const std::vector<double> row{0.0, 0.0};
    const auto fr = ingest_frame(st, row, oracle);
    EXPECT_EQ(fr.trace.n_init, 1u);
    ASSERT_EQ(fr.trace.steps.size(), 1u);
    EXPECT_EQ(fr.trace.steps[0].positions.size(), 1u);
    EXPECT_TRUE(fr.decision.fired);
    EXPECT_TRUE(fr.issued);
}

TEST(Stream, RejectsWrongFeatureDimension) {
    OracleDenoiser oracle(parse_sequence("1"), 2, {});
    auto st = start_stream(EngineConfig{}, 0, 2, &oracle);
    const std::vector<double> row{0.0, 0.0, 0.0};
    EXPECT_THROW((void)ingest_frame(st, row, oracle), InvalidArgument);
}

TEST(Stream, NoiselessOracleTriggersAtOnsets) {
    SuiteConfig sc;
    sc.streams = 30;
    const auto corpus = generate_suite(sc);
    for (const auto& s : corpus) {
        OracleDenoiser oracle(s.activation_gt, s.features.dim(), {});
        EngineConfig cfg;
        cfg.window = 32;
        auto st = start_stream(cfg, s.spec.query_id, s.features.dim(), &oracle);
        std::vector<std::int64_t> issued;
        for (std::size_t r = 0; r < s.features.rows(); ++r) {
            if (ingest_frame(st, s.features.row(r), oracle).issued) {
                issued.push_back(static_cast<std::int64_t>(r));
            }
        }
        std::vector<std::int64_t> onsets;
        for (const auto& e : s.spec.target_events()) {
            onsets.push_back(e.start_s);
        }
        EXPECT_EQ(issued, onsets) << s.spec.id;
        EXPECT_EQ(finish_stream(st), s.activation_gt) << s.spec.id;
    }
}

TEST(Stream, SeededRepeatGivesSameTraces) {
    SuiteConfig sc;
    sc.streams = 3;
    const auto corpus = generate_suite(sc);
    OracleDenoiser::Params p;
    p.epsilon = 0.3;
    p.jitter = 0.2;
    p.seed = 5;
    for (const auto& s : corpus) {
        OracleDenoiser oracle(s.activation_gt, s.features.dim(), p);
        auto a = start_stream(EngineConfig{}, 0, s.features.dim(), &oracle);
        auto b = start_stream(EngineConfig{}, 0, s.features.dim(), &oracle);
        for (std::size_t r = 0; r < s.features.rows(); ++r) {
            const auto fa = ingest_frame(a, s.features.row(r), oracle);
            const auto fb = ingest_frame(b, s.features.row(r), oracle);
            ASSERT_EQ(fa.trace.n_init, fb.trace.n_init);
            ASSERT_EQ(fa.trace.remask_set, fb.trace.remask_set);
            ASSERT_EQ(fa.trace.steps.size(), fb.trace.steps.size());
            for (std::size_t k = 0; k < fa.trace.steps.size(); ++k) {
                EXPECT_EQ(fa.trace.steps[k].positions, fb.trace.steps[k].positions);
                EXPECT_EQ(fa.trace.steps[k].confidences, fb.trace.steps[k].confidences);
            }
            EXPECT_EQ(fa.issued, fb.issued);
        }
    }
}

TEST(Trigger, HandleClearsState) {
    auto st = start_stream(EngineConfig{}, 0, 2);
    const std::vector<double> row{1.0, 2.0};
    for (int i = 0; i < 5; ++i) {
        st.visual_cache.push_back(row);
    }
    st.now = 42;
    st.window = resolved("0011", 42);
    handle_trigger(st, TriggerDecision{true, 42, 2});
    ASSERT_EQ(st.context_log.size(), 1u);
    EXPECT_EQ(st.context_log[0].time_s, 42);
    EXPECT_EQ(st.context_log[0].window, "0011");
    EXPECT_EQ(st.visual_cache.rows(), 0u);
    EXPECT_TRUE(st.window.empty());

    st.window = resolved("01", 50);
    handle_trigger(st, TriggerDecision{true, 50, 1});
    ASSERT_EQ(st.context_log.size(), 2u);
    EXPECT_EQ(st.context_log[1].time_s, 50);
}

TEST(Trigger, HandleWithoutFireIsViolation) {
    auto st = start_stream(EngineConfig{}, 0, 2);
    EXPECT_THROW(handle_trigger(st, TriggerDecision{false, 3, 0}), ProtocolViolation);
}

TEST(Cap, OverflowTruncatesToRetained) {
    auto st = start_stream(EngineConfig{}, 0, 2);
    const std::vector<double> row{0.0, 1.0};
    for (int i = 0; i < 257; ++i) {
        st.visual_cache.push_back(row);
    }
    st.now = 256;
    st.window = new_window(256);
    st.window.seq.assign(256, ActivationToken::Inactive);
    st.window.probs.assign(256, 0.9);
    st.window.anchor = 255;
    EXPECT_TRUE(enforce_context_cap(st));
    EXPECT_EQ(st.visual_cache.rows(), 128u);
    EXPECT_EQ(st.window.size(), 128u);
    EXPECT_EQ(count_masked(st.window.seq), 128u);
    EXPECT_EQ(*st.window.anchor, 256);
    EXPECT_EQ(st.cap_events, 1u);
}

TEST(Cap, AtOrBelowLimitUnchanged) {
    for (int n : {256, 10}) {
        auto st = start_stream(EngineConfig{}, 0, 2);
        const std::vector<double> row{0.0, 1.0};
        for (int i = 0; i < n; ++i) {
            st.visual_cache.push_back(row);
        }
        EXPECT_FALSE(enforce_context_cap(st));
        EXPECT_EQ(st.visual_cache.rows(), static_cast<std::size_t>(n));
    }
}

TEST(Config, JsonRoundTripAndValidation) {
    EngineConfig c;
    c.window = 32;
    c.tau = 0.5;
    c.schedule = UnmaskSchedule::FractionOfRemaining;
    c.remask = RemaskMode::LastOnly;
    const auto back = engine_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW((void)engine_config_from_json(nlohmann::json{{"tau", 1.5}}), InvalidArgument);
    EXPECT_THROW((void)engine_config_from_json(nlohmann::json{{"schedule", "bogus"}}), ConfigError);
}
