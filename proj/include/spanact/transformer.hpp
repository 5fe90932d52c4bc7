#pragma once

// Tiny causal-attention trunk with hand-written backward pass.
//
// Pre-norm residual blocks: RMSNorm -> multi-head causal attention -> residual,
// RMSNorm -> GELU MLP -> residual, final RMSNorm. Forward can extend a KV cache
// so the query+feature prefix is encoded once per stream; the backward pass is
// only defined for uncached (training) forwards.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "spanact/error.hpp"

namespace spanact::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TrunkShape {
    std::size_t hidden = 16;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ff_mult = 4;
    bool time_bias = true; // per-head linear penalty on |time_i - time_j| in attention scores

    [[nodiscard]] std::size_t head_dim() const { return hidden / heads; }

    // Head 0 is the most local; slopes fall geometrically from 1 to 1/16.
    [[nodiscard]] double slope(std::size_t head) const {
        if (heads == 1) {
            return 0.5;
        }
        return std::pow(2.0, -4.0 * static_cast<double>(head) / static_cast<double>(heads - 1));
    }
};

inline void validate(const TrunkShape& shape) {
    if (shape.hidden == 0 || shape.layers == 0 || shape.heads == 0 || shape.ff_mult == 0) {
        throw InvalidArgument("trunk shape entries must be positive");
    }
    if (shape.hidden % shape.heads != 0) {
        throw InvalidArgument("hidden width must be divisible by head count");
    }
}

template <typename S>
struct BlockWeights {
    Mat<S> norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "norm1", norm1);
        f(prefix + "wq", wq);
        f(prefix + "wk", wk);
        f(prefix + "wv", wv);
        f(prefix + "wo", wo);
        f(prefix + "norm2", norm2);
        f(prefix + "w1", w1);
        f(prefix + "b1", b1);
        f(prefix + "w2", w2);
        f(prefix + "b2", b2);
    }
};

template <typename S>
struct TrunkWeights {
    std::vector<BlockWeights<S>> blocks;
    Mat<S> final_norm;

    template <class F>
    void visit(F&& f) {
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            blocks[l].visit("blocks." + std::to_string(l) + ".", f);
        }
        f("final_norm", final_norm);
    }
};

template <typename S>
TrunkWeights<S> init_trunk(const TrunkShape& shape, std::mt19937_64& rng) {
    validate(shape);
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    const auto ff = static_cast<Eigen::Index>(shape.hidden * shape.ff_mult);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Eigen::Index r, Eigen::Index c, double stddev) {
        Mat<S> m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<S>(stddev * normal(rng));
        }
        return m;
    };
    const double in_std = 1.0 / std::sqrt(static_cast<double>(h));
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(shape.layers));
    TrunkWeights<S> w;
    for (std::size_t l = 0; l < shape.layers; ++l) {
        BlockWeights<S> b;
        b.norm1 = Mat<S>::Ones(1, h);
        b.wq = gaussian(h, h, in_std);
        b.wk = gaussian(h, h, in_std);
        b.wv = gaussian(h, h, in_std);
        b.wo = gaussian(h, h, in_std * out_scale);
        b.norm2 = Mat<S>::Ones(1, h);
        b.w1 = gaussian(h, ff, in_std);
        b.b1 = Mat<S>::Zero(1, ff);
        b.w2 = gaussian(ff, h, out_scale / std::sqrt(static_cast<double>(ff)));
        b.b2 = Mat<S>::Zero(1, h);
        w.blocks.push_back(std::move(b));
    }
    w.final_norm = Mat<S>::Ones(1, h);
    return w;
}

// Cached keys/values per layer for rows already encoded.
template <typename S>
struct KvCache {
    std::vector<Mat<S>> k, v;
    std::vector<double> times;
    Eigen::Index rows = 0;

    void clear() {
        k.clear();
        v.clear();
        times.clear();
        rows = 0;
    }
};

template <typename S>
struct BlockTape {
    Mat<S> x, xhat1, inv1, u, q, k, v, attn, x1, xhat2, inv2, z, h1, g;
    std::vector<Mat<S>> probs;
};

template <typename S>
struct TrunkTape {
    std::vector<BlockTape<S>> blocks;
    Mat<S> x_last, xhat_f, inv_f;
};

namespace detail {

inline constexpr double kRmsEps = 1e-6;

template <typename S>
void rms_forward(const Mat<S>& x, Mat<S>& xhat, Mat<S>& inv) {
    const auto h = static_cast<S>(x.cols());
    inv.resize(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        inv(i, 0) = S(1) / std::sqrt(x.row(i).squaredNorm() / h + static_cast<S>(kRmsEps));
    }
    xhat = (x.array().colwise() * inv.col(0).array()).matrix();
}

template <typename S>
Mat<S> apply_gain(const Mat<S>& xhat, const Mat<S>& gain) {
    return (xhat.array().rowwise() * gain.row(0).array()).matrix();
}

// Returns dx; accumulates dgain.
template <typename S>
Mat<S> rms_backward(const Mat<S>& xhat, const Mat<S>& inv, const Mat<S>& gain, const Mat<S>& dout, Mat<S>& dgain) {
    dgain += (dout.array() * xhat.array()).colwise().sum().matrix();
    Mat<S> dy = apply_gain(dout, gain);
    const auto h = static_cast<S>(xhat.cols());
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const S proj = dy.row(i).dot(xhat.row(i)) / h;
        dx.row(i) = (dy.row(i) - proj * xhat.row(i)) * inv(i, 0);
    }
    return dx;
}

inline constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
    return x.unaryExpr([](S v) {
        const S t = std::tanh(static_cast<S>(kGeluC) * (v + static_cast<S>(kGeluA) * v * v * v));
        return S(0.5) * v * (S(1) + t);
    });
}

template <typename S>
Mat<S> gelu_grad(const Mat<S>& x) {
    return x.unaryExpr([](S v) {
        const S c = static_cast<S>(kGeluC);
        const S a = static_cast<S>(kGeluA);
        const S t = std::tanh(c * (v + a * v * v * v));
        return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * c * (S(1) + S(3) * a * v * v);
    });
}

template <typename S>
Mat<S> vstack(const Mat<S>& top, const Mat<S>& bottom) {
    if (top.rows() == 0) {
        return bottom;
    }
    Mat<S> out(top.rows() + bottom.rows(), bottom.cols());
    out << top, bottom;
    return out;
}

} // namespace detail

// Encode `x` (new rows) on top of `cache`. Row i may attend to every cached row
// and to new rows 0..i. With `commit`, the new rows' keys/values are appended to
// the cache. A tape may only be recorded when the cache is null or empty.
// `times` gives each new row's stream position (NaN for rows without one).
template <typename S>
Mat<S> trunk_forward(const TrunkWeights<S>& w, const TrunkShape& shape, Mat<S> x,
                     std::type_identity_t<KvCache<S>>* cache, bool commit,
                     std::type_identity_t<TrunkTape<S>>* tape, const std::vector<double>& times) {
    const Eigen::Index n = x.rows();
    if (times.size() != static_cast<std::size_t>(n)) {
        throw InvalidArgument("trunk_forward: one time per row required");
    }
    const Eigen::Index c = cache != nullptr ? cache->rows : 0;
    if (tape != nullptr && c != 0) {
        throw InvalidArgument("trunk_forward: tape requires an empty cache");
    }
    if (cache != nullptr && cache->k.empty()) {
        cache->k.assign(w.blocks.size(), Mat<S>(0, x.cols()));
        cache->v.assign(w.blocks.size(), Mat<S>(0, x.cols()));
    }
    const auto hd = static_cast<Eigen::Index>(shape.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    if (tape != nullptr) {
        tape->blocks.assign(w.blocks.size(), BlockTape<S>{});
    }
    std::vector<double> key_times = c > 0 ? cache->times : std::vector<double>{};
    key_times.insert(key_times.end(), times.begin(), times.end());
    // |t_i - t_j| for timed pairs, -1 otherwise
    Mat<S> dist;
    if (shape.time_bias) {
        dist = Mat<S>::Constant(n, c + n, S(-1));
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::isnan(times[static_cast<std::size_t>(i)])) {
                continue;
            }
            for (Eigen::Index j = 0; j < c + i + 1; ++j) {
                const double tj = key_times[static_cast<std::size_t>(j)];
                if (!std::isnan(tj)) {
                    dist(i, j) = static_cast<S>(std::abs(times[static_cast<std::size_t>(i)] - tj));
                }
            }
        }
    }

    for (std::size_t l = 0; l < w.blocks.size(); ++l) {
        const auto& b = w.blocks[l];
        Mat<S> xhat1, inv1;
        detail::rms_forward(x, xhat1, inv1);
        Mat<S> u = detail::apply_gain(xhat1, b.norm1);
        Mat<S> q = u * b.wq;
        Mat<S> k = u * b.wk;
        Mat<S> v = u * b.wv;
        const Mat<S> keys = c > 0 ? detail::vstack(cache->k[l], k) : k;
        const Mat<S> vals = c > 0 ? detail::vstack(cache->v[l], v) : v;

        Mat<S> attn = Mat<S>::Zero(n, x.cols());
        std::vector<Mat<S>> probs;
        for (std::size_t head = 0; head < shape.heads; ++head) {
            const Eigen::Index off = static_cast<Eigen::Index>(head) * hd;
            Mat<S> s = (q.middleCols(off, hd) * keys.middleCols(off, hd).transpose()) * scale;
            if (shape.time_bias) {
                const S slope = static_cast<S>(shape.slope(head));
                s.array() -= slope * dist.array().max(S(0));
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::Index visible = c + i + 1;
                auto row = s.row(i);
                const S mx = row.head(visible).maxCoeff();
                S denom = 0;
                for (Eigen::Index j = 0; j < visible; ++j) {
                    row(j) = std::exp(row(j) - mx);
                    denom += row(j);
                }
                row.head(visible) /= denom;
                row.tail(s.cols() - visible).setZero();
            }
            attn.middleCols(off, hd) = s * vals.middleCols(off, hd);
            if (tape != nullptr) {
                probs.push_back(std::move(s));
            }
        }
        Mat<S> x1 = x + attn * b.wo;

        Mat<S> xhat2, inv2;
        detail::rms_forward(x1, xhat2, inv2);
        Mat<S> z = detail::apply_gain(xhat2, b.norm2);
        Mat<S> h1 = z * b.w1;
        h1.rowwise() += b.b1.row(0);
        Mat<S> g = detail::gelu(h1);
        Mat<S> x2 = x1 + g * b.w2;
        x2.rowwise() += b.b2.row(0);

        if (commit && cache != nullptr) {
            cache->k[l] = detail::vstack(cache->k[l], k);
            cache->v[l] = detail::vstack(cache->v[l], v);
        }
        if (tape != nullptr) {
            auto& bt = tape->blocks[l];
            bt.x = std::move(x);
            bt.xhat1 = std::move(xhat1);
            bt.inv1 = std::move(inv1);
            bt.u = std::move(u);
            bt.q = std::move(q);
            bt.k = std::move(k);
            bt.v = std::move(v);
            bt.probs = std::move(probs);
            bt.attn = std::move(attn);
            bt.x1 = x1;
            bt.xhat2 = std::move(xhat2);
            bt.inv2 = std::move(inv2);
            bt.z = std::move(z);
            bt.h1 = std::move(h1);
            bt.g = std::move(g);
        }
        x = std::move(x2);
    }
    if (commit && cache != nullptr) {
        cache->rows += n;
        cache->times = std::move(key_times);
    }

    Mat<S> xhat_f, inv_f;
    detail::rms_forward(x, xhat_f, inv_f);
    Mat<S> out = detail::apply_gain(xhat_f, w.final_norm);
    if (tape != nullptr) {
        tape->x_last = std::move(x);
        tape->xhat_f = std::move(xhat_f);
        tape->inv_f = std::move(inv_f);
    }
    return out;
}

// Backpropagate `dout` (gradient w.r.t. trunk output) through a recorded
// forward. Accumulates into `grads` and returns the gradient w.r.t. the input.
template <typename S>
Mat<S> trunk_backward(const TrunkWeights<S>& w, const TrunkShape& shape, const TrunkTape<S>& tape, const Mat<S>& dout,
                      TrunkWeights<S>& grads) {
    const auto hd = static_cast<Eigen::Index>(shape.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    Mat<S> dx = detail::rms_backward(tape.xhat_f, tape.inv_f, w.final_norm, dout, grads.final_norm);

    for (std::size_t li = w.blocks.size(); li-- > 0;) {
        const auto& b = w.blocks[li];
        auto& gb = grads.blocks[li];
        const auto& t = tape.blocks[li];

        // MLP branch.
        const Mat<S>& dm = dx;
        gb.w2.noalias() += t.g.transpose() * dm;
        gb.b2 += dm.colwise().sum();
        Mat<S> dh1 = ((dm * b.w2.transpose()).array() * detail::gelu_grad(t.h1).array()).matrix();
        gb.w1.noalias() += t.z.transpose() * dh1;
        gb.b1 += dh1.colwise().sum();
        Mat<S> dz = dh1 * b.w1.transpose();
        Mat<S> dx1 = dx + detail::rms_backward(t.xhat2, t.inv2, b.norm2, dz, gb.norm2);

        // Attention branch.
        gb.wo.noalias() += t.attn.transpose() * dx1;
        Mat<S> dattn = dx1 * b.wo.transpose();
        Mat<S> dq = Mat<S>::Zero(t.q.rows(), t.q.cols());
        Mat<S> dk = Mat<S>::Zero(t.k.rows(), t.k.cols());
        Mat<S> dv = Mat<S>::Zero(t.v.rows(), t.v.cols());
        for (std::size_t head = 0; head < shape.heads; ++head) {
            const Eigen::Index off = static_cast<Eigen::Index>(head) * hd;
            const Mat<S>& p = t.probs[head];
            const Mat<S> da = dattn.middleCols(off, hd);
            Mat<S> dp = da * t.v.middleCols(off, hd).transpose();
            dv.middleCols(off, hd) += p.transpose() * da;
            Mat<S> ds = (p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum())).matrix();
            ds *= scale;
            dq.middleCols(off, hd) += ds * t.k.middleCols(off, hd);
            dk.middleCols(off, hd) += ds.transpose() * t.q.middleCols(off, hd);
        }
        gb.wq.noalias() += t.u.transpose() * dq;
        gb.wk.noalias() += t.u.transpose() * dk;
        gb.wv.noalias() += t.u.transpose() * dv;
        Mat<S> du = dq * b.wq.transpose() + dk * b.wk.transpose() + dv * b.wv.transpose();
        dx = dx1 + detail::rms_backward(t.xhat1, t.inv1, b.norm1, du, gb.norm1);
    }
    return dx;
}

// Fixed sinusoidal encoding of an integer position into `row`.
template <typename S, typename Row>
void add_position_encoding(Row&& row, std::size_t position) {
    const auto h = static_cast<std::size_t>(row.size());
    for (std::size_t i = 0; i < h; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(h));
        const double angle = static_cast<double>(position) * freq;
        row(static_cast<Eigen::Index>(i)) += static_cast<S>(std::sin(angle));
        if (i + 1 < h) {
            row(static_cast<Eigen::Index>(i + 1)) += static_cast<S>(std::cos(angle));
        }
    }
}

} // namespace spanact::nn
