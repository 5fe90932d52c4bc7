#include <gtest/gtest.h>

#include "spanact/baseline_ar.hpp"
#include "spanact/streamgen.hpp"
#include "spanact/training.hpp"

using namespace spanact;

TEST(ArLabels, TrailingFraction) {
    EXPECT_EQ(to_string(label_last_p({0, 9, 0}, 50.0)), "0000011111");
    EXPECT_EQ(to_string(label_last_p({0, 9, 0}, 0.0)), "0000000000");
    EXPECT_EQ(to_string(label_last_p({4, 6, 0}, 50.0)), "011");
    EXPECT_EQ(to_string(label_last_p({4, 6, 0}, 100.0)), "111");
    EXPECT_THROW((void)label_last_p({5, 4, 0}, 50.0), InvalidArgument);
    EXPECT_THROW((void)label_last_p({0, 4, 0}, 101.0), InvalidArgument);
}

TEST(ArLabels, ClippedToWindow) {
    Rng rng(1);
    const auto seq = ar_labels({{2, 11, 0}}, 8, 6, 100.0, rng);
    EXPECT_EQ(seq.size(), 6u);
    // Active positions form a suffix of the event, so no 1 -> 0 inside [8, 11].
    for (std::size_t i = 1; i < 4; ++i) {
        EXPECT_FALSE(seq[i - 1] == ActivationToken::Active && seq[i] == ActivationToken::Inactive);
    }
    EXPECT_EQ(seq[4], ActivationToken::Inactive);
    EXPECT_EQ(seq[5], ActivationToken::Inactive);
}

TEST(ArThreshold, StrictlyAbove) {
    EXPECT_TRUE(ar_fires(0.36));
    EXPECT_FALSE(ar_fires(0.35));
    EXPECT_FALSE(ar_fires(0.1));
}

TEST(ArStream, LabelScoresTriggerInsideLabels) {
    Rng rng(3);
    SuiteConfig sc;
    sc.streams = 20;
    for (const auto& s : generate_suite(sc)) {
        const auto labels = ar_labels(s.spec.target_events(), 0, s.spec.length_s, 100.0, rng);
        std::vector<double> scores;
        for (auto v : labels) {
            scores.push_back(v == ActivationToken::Active ? 1.0 : 0.0);
        }
        FixedScores model(scores, s.features.dim());
        auto st = start_ar_stream(EngineConfig{}, s.spec.query_id, s.features.dim(), &model);
        for (std::size_t r = 0; r < s.features.rows(); ++r) {
            const auto f = ar_step(st, s.features.row(r), model);
            if (f.issued) {
                EXPECT_EQ(labels[r], ActivationToken::Active);
                EXPECT_TRUE(r == 0 || labels[r - 1] == ActivationToken::Inactive);
            }
        }
        EXPECT_EQ(st.decisions, labels);
    }
}

TEST(ArStream, DimensionMismatch) {
    FixedScores model({0.0}, 3);
    auto st = start_ar_stream(EngineConfig{}, 0, 2, &model);
    const std::vector<double> row{0.0, 0.0};
    EXPECT_THROW((void)ar_step(st, row, model), InvalidArgument);
}

TEST(ArStream, CacheCappedWithoutTriggers) {
    FixedScores model(std::vector<double>(600, 0.0), 2);
    auto st = start_ar_stream(EngineConfig{}, 0, 2, &model);
    const std::vector<double> row{0.0, 0.0};
    for (int i = 0; i < 600; ++i) {
        (void)ar_step(st, row, model);
        EXPECT_LE(st.visual_cache.rows(), 256u);
    }
    EXPECT_GT(st.cap_events, 0u);
}

TEST(ArScorer, SessionMatchesUncached) {
    ModelConfig mc;
    mc.feature_dim = 3;
    mc.num_queries = 2;
    mc.trunk.hidden = 8;
    ArScorer<double> ar(mc, 5);
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> f(7 * 3);
    for (auto& x : f) {
        x = n(rng);
    }
    auto sess = ar.new_session();
    for (std::size_t r = 1; r <= 7; ++r) {
        const auto prefix = std::span<const double>(f).first(r * 3);
        EXPECT_NEAR(ar.score_newest(0, prefix, 3, static_cast<std::int64_t>(r - 1), sess.get()),
                    ar.scores(0, prefix).back(), 1e-12);
    }
}

TEST(ArScorer, TrainingLowersLoss) {
    SuiteConfig sc;
    sc.streams = 8;
    sc.feature_dim = 3;
    const auto corpus = generate_suite(sc);
    ModelConfig mc;
    mc.feature_dim = 3;
    mc.trunk.hidden = 8;
    ArScorer<float> ar(mc, 2);
    TrainConfig tc;
    tc.steps = 150;
    tc.batch = 4;
    tc.optimizer = OptimizerKind::Adam;
    tc.lr = 0.01;
    const auto curve = train_ar(ar, corpus, tc);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        head += curve[i].loss;
        tail += curve[curve.size() - 1 - i].loss;
    }
    EXPECT_LT(tail, head);
}
