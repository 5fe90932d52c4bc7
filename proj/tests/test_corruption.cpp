#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "spanact/corruption.hpp"

using namespace spanact;

namespace {

// Adjacent pair (i, i+1) differs somewhere touching i.
bool touches_boundary(const ActivationSequence& s, std::size_t i) {
    return (i > 0 && s[i - 1] != s[i]) || (i + 1 < s.size() && s[i] != s[i + 1]);
}

bool has_boundary(const ActivationSequence& s) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] != s[i + 1]) {
            return true;
        }
    }
    return false;
}

// All outputs a boundary-span masker may legally produce.
std::set<std::string> boundary_span_outputs(const ActivationSequence& s, std::size_t len) {
    std::set<std::string> out;
    for (std::size_t a = 0; a + len <= s.size(); ++a) {
        bool ok = !has_boundary(s);
        for (std::size_t i = a; i < a + len && !ok; ++i) {
            ok = touches_boundary(s, i);
        }
        if (ok) {
            auto m = s;
            for (std::size_t i = a; i < a + len; ++i) {
                m[i] = ActivationToken::Masked;
            }
            out.insert(to_string(m));
        }
    }
    return out;
}

bool legal_reveal_index(const ActivationSequence& s, std::size_t i, std::size_t margin) {
    for (std::size_t b = 0; b + 1 < s.size(); ++b) {
        if (s[b] == s[b + 1]) {
            continue;
        }
        const auto d1 = i > b ? i - b : b - i;
        const auto d2 = i > b + 1 ? i - b - 1 : b + 1 - i;
        if (std::min(d1, d2) < margin) {
            return false;
        }
    }
    return true;
}

// Outputs of span unmasking: longest feasible reveal length, every legal placement.
std::set<std::string> span_unmask_outputs(const ActivationSequence& s, std::size_t reveal, std::size_t margin) {
    for (std::size_t len = reveal; len > 0; --len) {
        std::set<std::string> out;
        for (std::size_t a = 0; a + len <= s.size(); ++a) {
            bool ok = true;
            for (std::size_t i = a; i < a + len; ++i) {
                ok = ok && legal_reveal_index(s, i, margin);
            }
            if (ok) {
                ActivationSequence m(s.size(), ActivationToken::Masked);
                for (std::size_t i = a; i < a + len; ++i) {
                    m[i] = s[i];
                }
                out.insert(to_string(m));
            }
        }
        if (!out.empty()) {
            return out;
        }
    }
    return {std::string(s.size(), 'M')};
}

ActivationSequence random_clean(Rng& rng, std::size_t n) {
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution flip(0.25);
    ActivationSequence s(n);
    bool v = coin(rng);
    for (auto& x : s) {
        if (flip(rng)) {
            v = !v;
        }
        x = v ? ActivationToken::Active : ActivationToken::Inactive;
    }
    return s;
}

} // namespace

TEST(Independent, Extremes) {
    Rng rng(1);
    const auto s = parse_sequence("0110100");
    EXPECT_EQ(to_string(mask_independent(s, 1.0, rng).masked_seq), "MMMMMMM");
    EXPECT_EQ(to_string(mask_independent(s, 0.0, rng).masked_seq), "0110100");
}

TEST(Independent, RateWithinThreeSigma) {
    Rng rng(7);
    const ActivationSequence s(10000, ActivationToken::Inactive);
    const auto rec = mask_independent(s, 0.3, rng);
    const double sigma = std::sqrt(0.3 * 0.7 / 10000.0);
    EXPECT_NEAR(static_cast<double>(rec.masked_count) / 10000.0, 0.3, 3 * sigma);
}

TEST(Independent, RejectsPremasked) {
    Rng rng(1);
    EXPECT_THROW((void)mask_independent(parse_sequence("0M1"), 0.5, rng), InvalidArgument);
    EXPECT_THROW((void)mask_boundary_span(parse_sequence("0M1"), 0.5, rng), InvalidArgument);
    EXPECT_THROW((void)mask_span_unmask(parse_sequence("0M1"), 0.5, rng), InvalidArgument);
}

TEST(BoundarySpan, ExampleInOracleSet) {
    const auto s = parse_sequence("001100");
    const auto legal = boundary_span_outputs(s, 3);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        EXPECT_TRUE(legal.count(to_string(mask_boundary_span(s, 0.5, rng).masked_seq))) << seed;
    }
    EXPECT_TRUE(legal.count("0MMM00"));
}

TEST(BoundarySpan, HomogeneousFallback) {
    const auto s = parse_sequence("0000");
    const auto legal = boundary_span_outputs(s, 2);
    EXPECT_EQ(legal.size(), 3u);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        EXPECT_TRUE(legal.count(to_string(mask_boundary_span(s, 0.5, rng).masked_seq)));
    }
}

TEST(BoundarySpan, FullNoise) {
    Rng rng(3);
    EXPECT_EQ(to_string(mask_boundary_span(parse_sequence("011010"), 1.0, rng).masked_seq), "MMMMMM");
}

TEST(BoundarySpan, RandomCasesMatchOracle) {
    Rng gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const auto s = random_clean(gen, 1 + i % 12);
        const double t = u(gen);
        const auto len = static_cast<std::size_t>(std::clamp<long long>(std::llround(t * s.size()), 1, s.size()));
        const auto legal = boundary_span_outputs(s, len);
        const auto out = mask_boundary_span(s, t, gen);
        EXPECT_TRUE(legal.count(to_string(out.masked_seq))) << to_string(s) << " t=" << t;
    }
}

TEST(SpanUnmask, ShrinksToLegalBlock) {
    const auto s = parse_sequence("00011111");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        EXPECT_EQ(to_string(mask_span_unmask(s, 0.5, rng, 2).masked_seq), "MMMMM111");
    }
    EXPECT_EQ(span_unmask_outputs(s, 4, 2), (std::set<std::string>{"MMMMM111"}));
}

TEST(SpanUnmask, FullNoise) {
    Rng rng(2);
    EXPECT_EQ(to_string(mask_span_unmask(parse_sequence("00011111"), 1.0, rng).masked_seq), "MMMMMMMM");
}

TEST(SpanUnmask, HomogeneousAnyBlock) {
    const auto s = parse_sequence("1111");
    const auto legal = span_unmask_outputs(s, 2, 2);
    EXPECT_EQ(legal.size(), 3u);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        EXPECT_TRUE(legal.count(to_string(mask_span_unmask(s, 0.5, rng).masked_seq)));
    }
}

TEST(SpanUnmask, RandomCasesMatchOracle) {
    Rng gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const auto s = random_clean(gen, 1 + i % 14);
        const double t = u(gen);
        const auto reveal = static_cast<std::size_t>(std::max<long long>(0, std::llround((1.0 - t) * s.size())));
        const auto legal = span_unmask_outputs(s, std::min(reveal, s.size()), 2);
        const auto out = mask_span_unmask(s, t, gen, 2);
        EXPECT_TRUE(legal.count(to_string(out.masked_seq))) << to_string(s) << " t=" << t;
    }
}

TEST(FullMask, Examples) {
    EXPECT_EQ(to_string(mask_full(parse_sequence("010")).masked_seq), "MMM");
    EXPECT_EQ(to_string(mask_full(parse_sequence("1")).masked_seq), "M");
    EXPECT_EQ(to_string(mask_full(parse_sequence("MMM")).masked_seq), "MMM");
}

TEST(Mixture, StrategyFrequencies) {
    Rng rng(2024);
    const auto s = parse_sequence("0001111000");
    std::map<MaskingStrategy, int> counts;
    for (int i = 0; i < 30000; ++i) {
        ++counts[sample_training_corruption(s, rng).strategy];
    }
    ASSERT_EQ(counts.size(), 3u);
    for (auto [k, c] : counts) {
        EXPECT_GE(c / 30000.0, 0.3133) << to_string(k);
        EXPECT_LE(c / 30000.0, 0.3533) << to_string(k);
    }
}

TEST(Mixture, SeededRepeat) {
    const auto s = parse_sequence("00111100110");
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) {
        const auto ra = sample_training_corruption(s, a);
        const auto rb = sample_training_corruption(s, b);
        EXPECT_EQ(ra.masked_seq, rb.masked_seq);
        EXPECT_EQ(ra.t, rb.t);
        EXPECT_EQ(ra.strategy, rb.strategy);
    }
}

TEST(Mixture, FullDrawIsFullyMasked) {
    Rng rng(4);
    const auto s = parse_sequence("0011100");
    for (int i = 0; i < 300; ++i) {
        const auto r = sample_training_corruption(s, rng);
        if (r.strategy == MaskingStrategy::Full) {
            EXPECT_EQ(r.masked_count, s.size());
        }
        EXPECT_GT(r.t, 0.0);
        EXPECT_LE(r.t, 1.0);
    }
}

TEST(Override, Examples) {
    CorruptionRecord rec;
    rec.masked_seq = parse_sequence("MM1M");
    rec.masked_count = 3;
    EXPECT_EQ(to_string(apply_inactive_override(rec, 2).masked_seq), "001M");
    EXPECT_EQ(apply_inactive_override(rec, 2).masked_count, 1u);
    EXPECT_EQ(to_string(apply_inactive_override(rec, 0).masked_seq), "MM1M");
    EXPECT_EQ(to_string(apply_inactive_override(rec, 4).masked_seq), "0000");
    EXPECT_THROW((void)apply_inactive_override(rec, 5), InvalidArgument);
}
