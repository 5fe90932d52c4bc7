#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "spanact/streamgen.hpp"

using namespace spanact;

namespace {

StreamSpec plain_spec(double snr) {
    StreamSpec s;
    s.id = "t";
    s.length_s = 40;
    s.query_id = 1;
    s.events = {{10, 19, 1}};
    s.feature_dim = 6;
    s.snr = snr;
    s.ramp = 0;
    s.seed = 77;
    return s;
}

double dot(std::span<const double> a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

} // namespace

TEST(Rasterize, Examples) {
    EXPECT_EQ(to_string(rasterize({{2, 4, 0}}, 6)), "001110");
    EXPECT_EQ(to_string(rasterize({}, 6)), "000000");
    EXPECT_EQ(to_string(rasterize({{0, 0, 0}, {5, 5, 0}}, 6)), "100001");
    EXPECT_THROW((void)rasterize({{4, 6, 0}}, 6), InvalidArgument);
}

TEST(Features, NoiselessIsSeparable) {
    const auto s = make_sample(plain_spec(std::numeric_limits<double>::infinity()));
    const auto tmpl = query_template(1, 1, 6);
    for (std::size_t r = 0; r < s.features.rows(); ++r) {
        const double proj = dot(s.features.row(r), tmpl);
        if (s.activation_gt[r] == ActivationToken::Active) {
            EXPECT_GT(proj, 0.5);
        } else {
            EXPECT_LT(std::abs(proj), 1e-12);
        }
    }
}

TEST(Features, ZeroSignalIgnoresEvents) {
    auto with = plain_spec(0.0);
    auto without = with;
    without.events.clear();
    const auto a = emit_features(with);
    const auto b = emit_features(without);
    ASSERT_EQ(a.data().size(), b.data().size());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        EXPECT_EQ(a.data()[i], b.data()[i]);
    }
}

TEST(Features, SeededRepeat) {
    const auto a = emit_features(plain_spec(2.0));
    const auto b = emit_features(plain_spec(2.0));
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(TrainingWindow, LongStream) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto w = sample_training_window(300, rng);
        EXPECT_GE(w.length, 8);
        EXPECT_LE(w.length, 256);
        EXPECT_GE(w.start, 0);
        EXPECT_LE(w.start, 300 - w.length);
    }
}

TEST(TrainingWindow, ShortStreamClamps) {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto w = sample_training_window(5, rng);
        EXPECT_EQ(w.length, 5);
        EXPECT_EQ(w.start, 0);
    }
    Rng a(4), b(4);
    EXPECT_EQ(sample_training_window(100, a).start, sample_training_window(100, b).start);
}

TEST(Cutoff, RangeAndErrors) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const auto c = multi_event_cutoff(10, 20, rng);
        EXPECT_GT(c, 10);
        EXPECT_LE(c, 20);
    }
    EXPECT_EQ(multi_event_cutoff(19, 20, rng), 20);
    EXPECT_THROW((void)multi_event_cutoff(20, 20, rng), InvalidArgument);
}

TEST(Target, WindowedRasterization) {
    EXPECT_EQ(to_string(build_target(10, 10, {{25, 30, 0}})), "0000000000");
    EXPECT_EQ(to_string(build_target(10, 10, {{12, 15, 0}})), "0011110000");
    EXPECT_EQ(to_string(build_target(10, 10, {{5, 40, 0}})), "1111111111");
}

TEST(Suite, DeterministicAndJsonRoundTrip) {
    SuiteConfig sc;
    sc.streams = 12;
    const auto a = generate_suite(sc);
    const auto b = generate_suite(sc);
    const auto path = (std::filesystem::temp_directory_path() / "spanact_corpus_test.jsonl").string();
    write_corpus(path, a);
    const auto back = read_corpus(path);
    ASSERT_EQ(back.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].spec.events, b[i].spec.events);
        EXPECT_EQ(back[i].spec.events, a[i].spec.events);
        EXPECT_EQ(back[i].activation_gt, a[i].activation_gt);
        EXPECT_TRUE(std::equal(back[i].features.data().begin(), back[i].features.data().end(),
                               a[i].features.data().begin()));
    }
    std::filesystem::remove(path);
}

TEST(Suite, TasksAndEventsRespectLayout) {
    SuiteConfig sc;
    sc.streams = 90;
    for (const auto& s : generate_suite(sc)) {
        const auto targets = s.spec.target_events();
        ASSERT_FALSE(targets.empty()) << s.spec.id;
        for (std::size_t i = 1; i < targets.size(); ++i) {
            EXPECT_GT(targets[i].start_s, targets[i - 1].end_s + 8);
        }
        for (const auto& e : s.spec.events) {
            EXPECT_GE(e.start_s, 0);
            EXPECT_LT(e.end_s, s.spec.length_s);
        }
    }
}

TEST(Suite, RejectsBadConfig) {
    SuiteConfig sc;
    sc.tasks = {"bogus"};
    EXPECT_THROW(validate(sc), InvalidArgument);
    sc = {};
    sc.min_length = 10;
    EXPECT_THROW(validate(sc), InvalidArgument);
}
