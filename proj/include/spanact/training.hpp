#pragma once

// Training loops for the diffusion denoiser and the point-wise AR scorer.
// Minibatch gradients are summed in a fixed order, so runs are reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "spanact/activation.hpp"
#include "spanact/baseline_ar.hpp"
#include "spanact/corruption.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/error.hpp"
#include "spanact/neural.hpp"
#include "spanact/streamgen.hpp"

namespace spanact {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 8;
    double lr = 0.3;
    double clip = 1.0;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double beta1 = 0.9;
    double beta2 = 0.999;
    MaskingMix mix = MaskingMix::mixture();
    std::size_t margin = 2;
    std::size_t window = 32;   // activation window capacity W
    double p_max = 50.0;       // AR label fraction upper bound, percent
    std::uint64_t seed = 1;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.steps == 0 || cfg.batch == 0 || cfg.window == 0) {
        throw InvalidArgument("train config: steps, batch and window must be positive");
    }
    if (!(cfg.lr > 0.0) || !(cfg.clip > 0.0)) {
        throw InvalidArgument("train config: lr and clip must be positive");
    }
    if (!(cfg.p_max >= 0.0 && cfg.p_max <= 100.0)) {
        throw InvalidArgument("train config: p_max must lie in [0, 100]");
    }
    if (cfg.mix.strategies.empty()) {
        throw InvalidArgument("train config: empty masking mix");
    }
}

struct LossPoint {
    std::size_t step = 0;
    double loss = 0.0;
};
using LossCurve = std::vector<LossPoint>;

inline void write_loss_csv(const std::string& path, const LossCurve& curve) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "step,loss\n";
    out.precision(17);
    for (const auto& p : curve) {
        out << p.step << ',' << p.loss << '\n';
    }
}

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

struct DenoiserExample {
    int query_id = 0;
    std::vector<double> features; // rows x d
    std::size_t feature_dim = 0;
    ActivationWindow window;      // corrupted tokens
    ActivationSequence target;
    CorruptionRecord corruption;

    [[nodiscard]] PredictorContext context() const { return {query_id, features, feature_dim, &window}; }
};

namespace detail {

inline std::vector<double> slice_features(const FeatureBuffer& f, std::int64_t start, std::int64_t len) {
    const auto d = static_cast<std::ptrdiff_t>(f.dim());
    const auto data = f.data();
    return {data.begin() + start * d, data.begin() + (start + len) * d};
}

} // namespace detail

// Window draw, target rasterization, multi-event cutoff, corruption, override.
[[nodiscard]] inline DenoiserExample make_denoiser_example(const StreamSample& sample, const TrainConfig& cfg, Rng& rng) {
    const auto tw = sample_training_window(sample.spec.length_s, rng);
    const auto a = std::min<std::int64_t>(tw.length, static_cast<std::int64_t>(cfg.window));
    const std::int64_t act_start = tw.start + tw.length - a;
    const std::int64_t win_end = tw.start + tw.length - 1;
    const auto targets = sample.spec.target_events();

    DenoiserExample ex;
    ex.query_id = sample.spec.query_id;
    ex.feature_dim = sample.features.dim();
    ex.features = detail::slice_features(sample.features, tw.start, tw.length);
    ex.target = build_target(act_start, a, targets);

    std::size_t cutoff_idx = 0;
    for (std::size_t i = targets.size(); i-- > 1;) {
        if (targets[i].start_s <= win_end) {
            const auto cutoff = multi_event_cutoff(targets[i - 1].end_s, targets[i].start_s, rng);
            cutoff_idx = static_cast<std::size_t>(std::clamp<std::int64_t>(cutoff - act_start, 0, a));
            break;
        }
    }
    std::fill(ex.target.begin(), ex.target.begin() + static_cast<std::ptrdiff_t>(cutoff_idx), ActivationToken::Inactive);
    ex.corruption = apply_inactive_override(sample_training_corruption(ex.target, rng, cfg.mix, cfg.margin), cutoff_idx);

    ex.window = new_window(cfg.window);
    ex.window.seq = ex.corruption.masked_seq;
    ex.window.probs.assign(ex.window.seq.size(), 0.5);
    ex.window.anchor = win_end;
    return ex;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename S>
std::vector<nn::Mat<S>*> parameters_of(NetworkWeights<S>& w) {
    std::vector<nn::Mat<S>*> out;
    w.visit([&](const std::string&, nn::Mat<S>& m) { out.push_back(&m); });
    return out;
}

template <typename S>
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const NetworkWeights<S>& like) : cfg_(cfg) {
        if (cfg_.optimizer == OptimizerKind::Adam) {
            m_ = like.zeros_like();
            v_ = like.zeros_like();
        }
    }

    // Clip the global gradient norm, then update. Returns the pre-clip norm.
    double step(NetworkWeights<S>& w, NetworkWeights<S>& g) {
        auto params = parameters_of(w);
        auto grads = parameters_of(g);
        double sq = 0.0;
        for (auto* m : grads) {
            sq += static_cast<double>(m->squaredNorm());
        }
        const double norm = std::sqrt(sq);
        const S scale = static_cast<S>(norm > cfg_.clip ? cfg_.clip / norm : 1.0);
        ++t_;
        if (cfg_.optimizer == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                *params[i] -= static_cast<S>(cfg_.lr) * scale * *grads[i];
            }
            return norm;
        }
        auto ms = parameters_of(m_);
        auto vs = parameters_of(v_);
        const S b1 = static_cast<S>(cfg_.beta1);
        const S b2 = static_cast<S>(cfg_.beta2);
        const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
        const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
        const S lr = static_cast<S>(cfg_.lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const nn::Mat<S> gi = scale * *grads[i];
            *ms[i] = b1 * *ms[i] + (S(1) - b1) * gi;
            *vs[i] = b2 * *vs[i] + (S(1) - b2) * gi.cwiseProduct(gi);
            const nn::Mat<S> mhat = *ms[i] / c1;
            const nn::Mat<S> vhat = *vs[i] / c2;
            *params[i] -= lr * (mhat.array() / (vhat.array().sqrt() + S(1e-8))).matrix();
        }
        return norm;
    }

private:
    TrainConfig cfg_;
    NetworkWeights<S> m_, v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

using ProgressFn = std::function<void(std::size_t step, double loss)>;

template <typename S>
LossCurve train_denoiser(NeuralDenoiser<S>& model, const std::vector<StreamSample>& corpus, const TrainConfig& cfg,
                         const ProgressFn& progress = {}) {
    validate(cfg);
    if (corpus.empty()) {
        throw InvalidArgument("train: corpus is empty");
    }
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    Optimizer<S> opt(cfg, model.weights());
    LossCurve curve;
    curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        NetworkWeights<S> grads = model.weights().zeros_like();
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto ex = make_denoiser_example(corpus[pick(rng)], cfg, rng);
            loss += static_cast<double>(model.loss_and_grad(ex.context(), ex.target, ex.corruption.t, grads));
        }
        loss /= static_cast<double>(cfg.batch);
        if (!std::isfinite(loss)) {
            throw TrainingFailure(step, "non-finite loss");
        }
        const S inv_b = S(1) / static_cast<S>(cfg.batch);
        for (auto* g : parameters_of(grads)) {
            *g *= inv_b;
        }
        opt.step(model.weights(), grads);
        curve.push_back({step, loss});
        if (progress) {
            progress(step, loss);
        }
    }
    return curve;
}

template <typename S>
LossCurve train_ar(ArScorer<S>& model, const std::vector<StreamSample>& corpus, const TrainConfig& cfg,
                   const ProgressFn& progress = {}) {
    validate(cfg);
    if (corpus.empty()) {
        throw InvalidArgument("train: corpus is empty");
    }
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    Optimizer<S> opt(cfg, model.weights());
    LossCurve curve;
    curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        NetworkWeights<S> grads = model.weights().zeros_like();
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& sample = corpus[pick(rng)];
            const auto tw = sample_training_window(sample.spec.length_s, rng);
            const auto labels = ar_labels(sample.spec.target_events(), tw.start, tw.length, cfg.p_max, rng);
            const auto feats = detail::slice_features(sample.features, tw.start, tw.length);
            loss += static_cast<double>(model.loss_and_grad(sample.spec.query_id, feats, labels, grads));
        }
        loss /= static_cast<double>(cfg.batch);
        if (!std::isfinite(loss)) {
            throw TrainingFailure(step, "non-finite loss");
        }
        const S inv_b = S(1) / static_cast<S>(cfg.batch);
        for (auto* g : parameters_of(grads)) {
            *g *= inv_b;
        }
        opt.step(model.weights(), grads);
        curve.push_back({step, loss});
        if (progress) {
            progress(step, loss);
        }
    }
    return curve;
}

} // namespace spanact
