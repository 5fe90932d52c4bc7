#pragma once

// Shared checks for the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "spanact/engine.hpp"
#include "spanact/neural.hpp"
#include "spanact/training.hpp"

namespace spanact::check {

struct GradCheck {
    double rel_error = 0.0;   // ||fd - analytic|| / max(||fd||, ||analytic||)
    double worst_abs = 0.0;   // largest |fd - analytic| over single parameters
    std::size_t params = 0;
    double loss = 0.0;
};

// Micro denoiser: hidden 8, one block, window 6, central differences at 64 bit.
inline GradCheck micro_gradient_check(std::uint64_t seed, double h = 1e-6) {
    ModelConfig mc;
    mc.feature_dim = 3;
    mc.num_queries = 2;
    mc.trunk.hidden = 8;
    mc.trunk.layers = 1;
    mc.trunk.heads = 2;
    NeuralDenoiser<double> model(mc, seed);

    Rng rng(seed + 1000);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> feats(9 * 3);
    for (auto& x : feats) {
        x = normal(rng);
    }
    const ActivationSequence target = parse_sequence("001101");
    std::bernoulli_distribution coin(0.5);
    ActivationWindow w = new_window(6);
    w.seq = target;
    for (auto& tok : w.seq) {
        if (coin(rng)) {
            tok = ActivationToken::Masked;
        }
    }
    w.seq[1] = ActivationToken::Masked;
    w.probs.assign(6, 0.5);
    w.anchor = 8;
    const double t = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    const PredictorContext ctx{static_cast<int>(seed % 2), feats, 3, &w};

    auto grads = model.weights().zeros_like();
    GradCheck out;
    out.loss = model.loss_and_grad(ctx, target, t, grads);
    auto params = parameters_of(model.weights());
    auto gs = parameters_of(grads);
    double diff_sq = 0.0, fd_sq = 0.0, an_sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (Eigen::Index k = 0; k < params[i]->size(); ++k) {
            double& x = params[i]->data()[k];
            const double old = x;
            auto scratch = model.weights().zeros_like();
            x = old + h;
            const double lp = model.loss_and_grad(ctx, target, t, scratch);
            x = old - h;
            const double lm = model.loss_and_grad(ctx, target, t, scratch);
            x = old;
            const double fd = (lp - lm) / (2 * h);
            const double an = gs[i]->data()[k];
            diff_sq += (fd - an) * (fd - an);
            fd_sq += fd * fd;
            an_sq += an * an;
            out.worst_abs = std::max(out.worst_abs, std::abs(fd - an));
            ++out.params;
        }
    }
    out.rel_error = std::sqrt(diff_sq) / std::max({std::sqrt(fd_sq), std::sqrt(an_sq), 1e-300});
    return out;
}


// Wraps a denoiser and logs every call's input tokens and output probabilities.
class RecordingDenoiser final : public Denoiser {
public:
    struct Call {
        ActivationSequence seq;
        ProbVector p;
    };

    explicit RecordingDenoiser(const Denoiser& inner) : inner_(inner) {}
    [[nodiscard]] std::size_t feature_dim() const override { return inner_.feature_dim(); }
    [[nodiscard]] ProbVector predict(const PredictorContext& ctx) const override {
        auto p = inner_.predict(ctx);
        calls.push_back({ctx.window->seq, p});
        return p;
    }

    mutable std::vector<Call> calls;

private:
    const Denoiser& inner_;
};

inline double confidence(double p) { return std::max(p, 1.0 - p); }

// Re-derives one frame's denoising from the logged calls. Empty string when consistent.
inline std::string check_step_trace(const StepTrace& tr, const std::vector<RecordingDenoiser::Call>& step_calls,
                                    std::size_t K, UnmaskSchedule schedule) {
    std::ostringstream err;
    if (step_calls.size() != tr.steps.size()) {
        return "call count differs from step count";
    }
    std::vector<int> seen;
    std::size_t total = 0;
    for (std::size_t s = 0; s < tr.steps.size(); ++s) {
        const auto& rec = tr.steps[s];
        const auto& call = step_calls[s];
        std::vector<std::size_t> masked;
        for (std::size_t j = 0; j < call.seq.size(); ++j) {
            if (call.seq[j] == ActivationToken::Masked) {
                masked.push_back(j);
            }
        }
        if (s == 0) {
            if (masked.size() != tr.n_init) {
                err << "first step sees " << masked.size() << " masked, n_init " << tr.n_init;
                return err.str();
            }
            seen.assign(call.seq.size(), 0);
        }
        std::size_t k = 0;
        if (rec.step == K) {
            k = masked.size();
        } else if (schedule == UnmaskSchedule::UniformCount) {
            k = (tr.n_init + K - 1) / K;
        } else {
            k = (masked.size() + (K - rec.step)) / (K - rec.step + 1);
        }
        k = std::min(k, masked.size());
        if (rec.positions.size() != k) {
            err << "step " << rec.step << " revealed " << rec.positions.size() << ", expected " << k;
            return err.str();
        }
        // selection by repeated arg-max: highest confidence, lowest index on ties
        std::vector<std::size_t> pool = masked;
        for (std::size_t r = 0; r < k; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < pool.size(); ++c) {
                if (confidence(call.p[pool[c]]) > confidence(call.p[pool[best]])) {
                    best = c;
                }
            }
            if (rec.positions[r] != pool[best]) {
                err << "step " << rec.step << " rank " << r << " revealed " << rec.positions[r] << ", expected "
                    << pool[best];
                return err.str();
            }
            if (std::abs(rec.confidences[r] - confidence(call.p[pool[best]])) > 1e-12) {
                return "recorded confidence differs";
            }
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
        }
        for (auto j : rec.positions) {
            if (call.seq[j] != ActivationToken::Masked || seen[j]++ != 0) {
                err << "position " << j << " revealed twice or was not masked";
                return err.str();
            }
        }
        total += rec.positions.size();
    }
    if (total != tr.n_init) {
        err << "revealed " << total << " of " << tr.n_init;
        return err.str();
    }
    return {};
}

} // namespace spanact::check
