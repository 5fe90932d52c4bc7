#pragma once

// Learned predictors built on the causal trunk:
//   NeuralDenoiser - masked-diffusion predictor over the duplicated layout
//                    [query, features, a, sep, a'], 2-class head read at a'.
//   ArScorer       - point-wise baseline, 1-logit head read at every feature slot.
// Both share the same embedding and trunk structure so comparisons are
// parameter-matched.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanact/activation.hpp"
#include "spanact/denoiser.hpp"
#include "spanact/error.hpp"
#include "spanact/transformer.hpp"

namespace spanact {

struct ModelConfig {
    std::size_t feature_dim = 8;
    std::size_t num_queries = 4;
    nn::TrunkShape trunk{};
    DuplicationMode duplication = DuplicationMode::Duplicate;
};

inline void validate(const ModelConfig& cfg) {
    if (cfg.feature_dim == 0 || cfg.num_queries == 0) {
        throw InvalidArgument("model config: feature_dim and num_queries must be positive");
    }
    nn::validate(cfg.trunk);
}

inline constexpr std::size_t kSeparatorToken = 3;

template <typename S>
struct NetworkWeights {
    nn::Mat<S> token_emb;    // {0, 1, M, sep} x h
    nn::Mat<S> query_emb;    // queries x h
    nn::Mat<S> feature_proj; // d x h, feature slots
    nn::Mat<S> feature_bias; // 1 x h
    nn::Mat<S> slot_proj;    // d x h, aligned feature added to activation slots
    nn::Mat<S> role_emb;     // roles x h
    nn::TrunkWeights<S> trunk;
    nn::Mat<S> head_w;       // h x classes
    nn::Mat<S> head_b;       // 1 x classes

    template <class F>
    void visit(F&& f) {
        f("token_emb", token_emb);
        f("query_emb", query_emb);
        f("feature_proj", feature_proj);
        f("feature_bias", feature_bias);
        f("slot_proj", slot_proj);
        f("role_emb", role_emb);
        trunk.visit(f);
        f("head_w", head_w);
        f("head_b", head_b);
    }

    [[nodiscard]] NetworkWeights zeros_like() const {
        NetworkWeights z = *this;
        z.visit([](const std::string&, nn::Mat<S>& m) { m.setZero(); });
        return z;
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        const_cast<NetworkWeights*>(this)->visit(
            [&](const std::string&, nn::Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }
};

namespace detail {

template <typename S>
NetworkWeights<S> init_network(const ModelConfig& cfg, std::size_t classes, std::uint64_t seed) {
    validate(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto h = static_cast<Eigen::Index>(cfg.trunk.hidden);
    const auto d = static_cast<Eigen::Index>(cfg.feature_dim);
    auto gaussian = [&](Eigen::Index r, Eigen::Index c, double stddev) {
        nn::Mat<S> m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<S>(stddev * normal(rng));
        }
        return m;
    };
    NetworkWeights<S> w;
    w.token_emb = gaussian(4, h, 0.5);
    w.query_emb = gaussian(static_cast<Eigen::Index>(cfg.num_queries), h, 0.5);
    w.feature_proj = gaussian(d, h, 1.0 / std::sqrt(static_cast<double>(d)));
    w.feature_bias = nn::Mat<S>::Zero(1, h);
    w.slot_proj = gaussian(d, h, 1.0 / std::sqrt(static_cast<double>(d)));
    w.role_emb = gaussian(static_cast<Eigen::Index>(kNumRoles), h, 0.5);
    w.trunk = nn::init_trunk<S>(cfg.trunk, rng);
    w.head_w = gaussian(h, static_cast<Eigen::Index>(classes), 0.05);
    w.head_b = nn::Mat<S>::Zero(1, static_cast<Eigen::Index>(classes));
    return w;
}

template <typename S>
nn::Mat<S> feature_row_as(const PredictorContext& ctx, std::size_t row) {
    const auto f = ctx.feature_row(row);
    nn::Mat<S> m(1, static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) {
        m(0, static_cast<Eigen::Index>(i)) = static_cast<S>(f[i]);
    }
    return m;
}

inline std::size_t token_index(ActivationToken t) { return static_cast<std::size_t>(t); }

// Input embeddings for layout slots [begin, end).
template <typename S>
nn::Mat<S> embed_slots(const NetworkWeights<S>& w, const PredictorContext& ctx, const ModelInputLayout& layout,
                       std::size_t begin, std::size_t end) {
    const auto h = w.token_emb.cols();
    nn::Mat<S> x = nn::Mat<S>::Zero(static_cast<Eigen::Index>(end - begin), h);
    for (std::size_t s = begin; s < end; ++s) {
        const auto& slot = layout.slots[s];
        auto row = x.row(static_cast<Eigen::Index>(s - begin));
        row += w.role_emb.row(static_cast<Eigen::Index>(slot.role));
        switch (slot.role) {
        case SlotRole::Query:
            row += w.query_emb.row(ctx.query_id);
            break;
        case SlotRole::Feature:
            row += feature_row_as<S>(ctx, slot.feature_row) * w.feature_proj + w.feature_bias;
            nn::add_position_encoding<S>(row, slot.feature_row);
            break;
        case SlotRole::Prefix:
        case SlotRole::Prediction:
            row += w.token_emb.row(static_cast<Eigen::Index>(token_index(slot.token)));
            row += feature_row_as<S>(ctx, slot.feature_row) * w.slot_proj;
            nn::add_position_encoding<S>(row, slot.feature_row);
            break;
        case SlotRole::Separator:
            row += w.token_emb.row(static_cast<Eigen::Index>(kSeparatorToken));
            break;
        }
    }
    return x;
}

// Stream position of each slot in [begin, end); NaN for query and separator.
inline std::vector<double> slot_times(const ModelInputLayout& layout, std::size_t begin, std::size_t end) {
    std::vector<double> t;
    t.reserve(end - begin);
    for (std::size_t s = begin; s < end; ++s) {
        const auto& slot = layout.slots[s];
        const bool timed = slot.role == SlotRole::Feature || slot.role == SlotRole::Prefix ||
                           slot.role == SlotRole::Prediction;
        t.push_back(timed ? static_cast<double>(slot.feature_row) : std::nan(""));
    }
    return t;
}

template <typename S>
void embed_backward(const PredictorContext& ctx, const ModelInputLayout& layout, const nn::Mat<S>& dx,
                    NetworkWeights<S>& g) {
    for (std::size_t s = 0; s < layout.slots.size(); ++s) {
        const auto& slot = layout.slots[s];
        const auto drow = dx.row(static_cast<Eigen::Index>(s));
        g.role_emb.row(static_cast<Eigen::Index>(slot.role)) += drow;
        switch (slot.role) {
        case SlotRole::Query:
            g.query_emb.row(ctx.query_id) += drow;
            break;
        case SlotRole::Feature:
            g.feature_proj.noalias() += feature_row_as<S>(ctx, slot.feature_row).transpose() * drow;
            g.feature_bias += drow;
            break;
        case SlotRole::Prefix:
        case SlotRole::Prediction:
            g.token_emb.row(static_cast<Eigen::Index>(token_index(slot.token))) += drow;
            g.slot_proj.noalias() += feature_row_as<S>(ctx, slot.feature_row).transpose() * drow;
            break;
        case SlotRole::Separator:
            g.token_emb.row(static_cast<Eigen::Index>(kSeparatorToken)) += drow;
            break;
        }
    }
}

template <typename S>
S log_sigmoid(S x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename S>
S sigmoid(S x) {
    return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

// KV-cached prefix for one stream.
template <typename S>
class PrefixSession final : public InferenceSession {
public:
    void invalidate() override {
        cache.clear();
        rows = 0;
        query = -1;
        first_row.clear();
    }

    // Bring the cache up to date with `ctx` (append-only); rebuild when stale.
    void sync(const NetworkWeights<S>& w, const nn::TrunkShape& shape, const PredictorContext& ctx,
              const ModelInputLayout& layout) {
        const std::size_t ctx_rows = ctx.feature_rows();
        const bool stale = query != ctx.query_id || ctx_rows < rows ||
                           (rows > 0 && !std::equal(first_row.begin(), first_row.end(), ctx.feature_row(0).begin()));
        if (stale) {
            invalidate();
        }
        const std::size_t have = cache.rows == 0 ? 0 : rows + 1; // +1 for the query slot
        if (have < layout.prefix_len) {
            nn::Mat<S> x = embed_slots(w, ctx, layout, have, layout.prefix_len);
            (void)nn::trunk_forward(w.trunk, shape, std::move(x), &cache, true, nullptr,
                                    slot_times(layout, have, layout.prefix_len));
            rows = ctx_rows;
            query = ctx.query_id;
            const auto r0 = ctx.feature_row(0);
            first_row.assign(r0.begin(), r0.end());
        }
    }

    nn::KvCache<S> cache;
    std::size_t rows = 0;
    int query = -1;
    std::vector<double> first_row;
};

} // namespace detail

template <typename S>
class NeuralDenoiser final : public Denoiser {
public:
    static constexpr std::size_t kClasses = 2;

    NeuralDenoiser(ModelConfig cfg, std::uint64_t seed)
        : cfg_(cfg), w_(detail::init_network<S>(cfg, kClasses, seed)) {}
    NeuralDenoiser(ModelConfig cfg, NetworkWeights<S> weights) : cfg_(cfg), w_(std::move(weights)) { validate(cfg_); }

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t feature_dim() const override { return cfg_.feature_dim; }
    [[nodiscard]] NetworkWeights<S>& weights() noexcept { return w_; }
    [[nodiscard]] const NetworkWeights<S>& weights() const noexcept { return w_; }

    [[nodiscard]] ModelInputLayout layout(const PredictorContext& ctx) const {
        check(ctx);
        return duplicate_input(ctx, cfg_.duplication);
    }

    [[nodiscard]] ProbVector predict(const PredictorContext& ctx) const override {
        const auto lay = layout(ctx);
        if (lay.window_len == 0) {
            return {};
        }
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, 0, lay.slots.size());
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), nullptr, false, nullptr,
                                                 detail::slot_times(lay, 0, lay.slots.size()));
        return read_probs(out, lay.prediction_begin, lay.window_len);
    }

    [[nodiscard]] std::unique_ptr<InferenceSession> new_session() const override {
        return std::make_unique<detail::PrefixSession<S>>();
    }

    [[nodiscard]] ProbVector predict(const PredictorContext& ctx, InferenceSession* session) const override {
        auto* prefix = dynamic_cast<detail::PrefixSession<S>*>(session);
        if (prefix == nullptr) {
            return predict(ctx);
        }
        const auto lay = layout(ctx);
        if (lay.window_len == 0) {
            return {};
        }
        prefix->sync(w_, cfg_.trunk, ctx, lay);
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, lay.prefix_len, lay.slots.size());
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), &prefix->cache, false, nullptr,
                                                 detail::slot_times(lay, lay.prefix_len, lay.slots.size()));
        return read_probs(out, lay.prediction_begin - lay.prefix_len, lay.window_len);
    }

    // Masked cross-entropy (1/t weighted) over the prediction copy; accumulates
    // parameter gradients into `grads`. The context's window holds the corrupted tokens.
    S loss_and_grad(const PredictorContext& ctx, const ActivationSequence& target, double t,
                    NetworkWeights<S>& grads) const {
        const auto lay = layout(ctx);
        const std::size_t w = lay.window_len;
        if (target.size() != w) {
            throw InvalidArgument("loss_and_grad: target length differs from window");
        }
        const auto& seq = ctx.window->seq;
        const bool any_masked = count_masked(seq) > 0;
        if (!any_masked) {
            return S(0);
        }
        if (!(t > 0.0)) {
            throw InvalidArgument("loss_and_grad: t must be > 0");
        }
        nn::TrunkTape<S> tape;
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, 0, lay.slots.size());
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), nullptr, false, &tape,
                                                 detail::slot_times(lay, 0, lay.slots.size()));
        const auto pb = static_cast<Eigen::Index>(lay.prediction_begin);
        const nn::Mat<S> hidden = out.middleRows(pb, static_cast<Eigen::Index>(w));
        nn::Mat<S> logits = hidden * w_.head_w;
        logits.rowwise() += w_.head_b.row(0);

        const S inv_t = static_cast<S>(1.0 / t);
        nn::Mat<S> dlogits = nn::Mat<S>::Zero(logits.rows(), logits.cols());
        S loss = 0;
        for (std::size_t j = 0; j < w; ++j) {
            if (seq[j] != ActivationToken::Masked) {
                continue;
            }
            if (target[j] == ActivationToken::Masked) {
                throw InvalidArgument("loss_and_grad: target contains Masked token");
            }
            const auto r = static_cast<Eigen::Index>(j);
            const S margin = logits(r, 1) - logits(r, 0);
            const bool active = target[j] == ActivationToken::Active;
            loss -= active ? detail::log_sigmoid(margin) : detail::log_sigmoid(-margin);
            const S p1 = detail::sigmoid(margin);
            const S y1 = active ? S(1) : S(0);
            dlogits(r, 1) = (p1 - y1) * inv_t;
            dlogits(r, 0) = (y1 - p1) * inv_t;
        }
        loss *= inv_t;

        grads.head_w.noalias() += hidden.transpose() * dlogits;
        grads.head_b += dlogits.colwise().sum();
        nn::Mat<S> dout = nn::Mat<S>::Zero(out.rows(), out.cols());
        dout.middleRows(pb, static_cast<Eigen::Index>(w)) = dlogits * w_.head_w.transpose();
        const nn::Mat<S> dx = nn::trunk_backward(w_.trunk, cfg_.trunk, tape, dout, grads.trunk);
        detail::embed_backward(ctx, lay, dx, grads);
        return loss;
    }

private:
    void check(const PredictorContext& ctx) const {
        validate(ctx);
        if (ctx.feature_dim != cfg_.feature_dim) {
            throw InvalidArgument("neural denoiser: feature dimension mismatch (expected " +
                                  std::to_string(cfg_.feature_dim) + ", got " + std::to_string(ctx.feature_dim) + ")");
        }
        if (ctx.query_id < 0 || static_cast<std::size_t>(ctx.query_id) >= cfg_.num_queries) {
            throw InvalidArgument("neural denoiser: query id out of range");
        }
    }

    ProbVector read_probs(const nn::Mat<S>& out, std::size_t begin, std::size_t w) const {
        nn::Mat<S> logits = out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(w)) * w_.head_w;
        logits.rowwise() += w_.head_b.row(0);
        ProbVector p(w);
        for (std::size_t j = 0; j < w; ++j) {
            const auto r = static_cast<Eigen::Index>(j);
            p[j] = static_cast<double>(detail::sigmoid(logits(r, 1) - logits(r, 0)));
        }
        return p;
    }

    ModelConfig cfg_;
    NetworkWeights<S> w_;
};

// Per-frame score model for the point-wise baseline. Reads one logit at every
// feature slot of [query, features...]; causal attention keeps frame T's score a
// function of frames <= T only.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;
    [[nodiscard]] virtual std::size_t feature_dim() const = 0;
    [[nodiscard]] virtual std::unique_ptr<InferenceSession> new_session() const { return nullptr; }
    // Score of the newest frame. `newest_time` is its stream second.
    [[nodiscard]] virtual double score_newest(int query_id, std::span<const double> features, std::size_t feature_dim,
                                              std::int64_t newest_time, InferenceSession* session) const = 0;
};

template <typename S>
class ArScorer final : public ScoreModel {
public:
    ArScorer(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), w_(detail::init_network<S>(cfg, 1, seed)) {}
    ArScorer(ModelConfig cfg, NetworkWeights<S> weights) : cfg_(cfg), w_(std::move(weights)) { validate(cfg_); }

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t feature_dim() const override { return cfg_.feature_dim; }
    [[nodiscard]] NetworkWeights<S>& weights() noexcept { return w_; }
    [[nodiscard]] const NetworkWeights<S>& weights() const noexcept { return w_; }

    // Scores for every frame (uncached).
    [[nodiscard]] std::vector<double> scores(int query_id, std::span<const double> features) const {
        const auto [ctx, lay] = context(query_id, features);
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, 0, lay.slots.size());
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), nullptr, false, nullptr,
                                                 detail::slot_times(lay, 0, lay.slots.size()));
        std::vector<double> s(ctx.feature_rows());
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = static_cast<double>(detail::sigmoid(logit(out, 1 + i)));
        }
        return s;
    }

    [[nodiscard]] std::unique_ptr<InferenceSession> new_session() const override {
        return std::make_unique<detail::PrefixSession<S>>();
    }

    [[nodiscard]] double score_newest(int query_id, std::span<const double> features, std::size_t feature_dim,
                                      std::int64_t /*newest_time*/, InferenceSession* session) const override {
        if (feature_dim != cfg_.feature_dim) {
            throw InvalidArgument("ar scorer: feature dimension mismatch");
        }
        auto* prefix = dynamic_cast<detail::PrefixSession<S>*>(session);
        if (prefix == nullptr) {
            return scores(query_id, features).back();
        }
        const auto [ctx, lay] = context(query_id, features);
        // Sync everything except the newest frame, then encode it and commit.
        const std::size_t rows = ctx.feature_rows();
        ModelInputLayout head = lay;
        head.slots.resize(lay.prefix_len - 1);
        head.prefix_len = head.slots.size();
        PredictorContext older = ctx;
        older.features = features.first((rows - 1) * cfg_.feature_dim);
        if (rows > 1) {
            prefix->sync(w_, cfg_.trunk, older, head);
        } else {
            prefix->invalidate();
        }
        const std::size_t have = prefix->cache.rows;
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, have, lay.prefix_len);
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), &prefix->cache, true, nullptr,
                                                 detail::slot_times(lay, have, lay.prefix_len));
        prefix->rows = rows;
        prefix->query = query_id;
        const auto r0 = ctx.feature_row(0);
        prefix->first_row.assign(r0.begin(), r0.end());
        return static_cast<double>(detail::sigmoid(logit(out, static_cast<std::size_t>(out.rows()) - 1)));
    }

    // Mean per-frame binary cross-entropy against `labels` (one per feature row).
    S loss_and_grad(int query_id, std::span<const double> features, const ActivationSequence& labels,
                    NetworkWeights<S>& grads) const {
        const auto [ctx, lay] = context(query_id, features);
        const std::size_t rows = ctx.feature_rows();
        if (labels.size() != rows) {
            throw InvalidArgument("ar loss: one label per frame required");
        }
        nn::TrunkTape<S> tape;
        nn::Mat<S> x = detail::embed_slots(w_, ctx, lay, 0, lay.slots.size());
        const nn::Mat<S> out = nn::trunk_forward(w_.trunk, cfg_.trunk, std::move(x), nullptr, false, &tape,
                                                 detail::slot_times(lay, 0, lay.slots.size()));
        const nn::Mat<S> hidden = out.middleRows(1, static_cast<Eigen::Index>(rows));
        nn::Mat<S> logits = hidden * w_.head_w;
        logits.rowwise() += w_.head_b.row(0);
        const S inv_n = S(1) / static_cast<S>(rows);
        nn::Mat<S> dlogits(logits.rows(), 1);
        S loss = 0;
        for (std::size_t i = 0; i < rows; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const S z = logits(r, 0);
            const bool active = labels[i] == ActivationToken::Active;
            loss -= active ? detail::log_sigmoid(z) : detail::log_sigmoid(-z);
            dlogits(r, 0) = (detail::sigmoid(z) - (active ? S(1) : S(0))) * inv_n;
        }
        loss *= inv_n;
        grads.head_w.noalias() += hidden.transpose() * dlogits;
        grads.head_b += dlogits.colwise().sum();
        nn::Mat<S> dout = nn::Mat<S>::Zero(out.rows(), out.cols());
        dout.middleRows(1, static_cast<Eigen::Index>(rows)) = dlogits * w_.head_w.transpose();
        const nn::Mat<S> dx = nn::trunk_backward(w_.trunk, cfg_.trunk, tape, dout, grads.trunk);
        detail::embed_backward(ctx, lay, dx, grads);
        return loss;
    }

private:
    struct Ctx {
        PredictorContext ctx;
        ModelInputLayout lay;
    };

    Ctx context(int query_id, std::span<const double> features) const {
        if (query_id < 0 || static_cast<std::size_t>(query_id) >= cfg_.num_queries) {
            throw InvalidArgument("ar scorer: query id out of range");
        }
        if (features.empty() || features.size() % cfg_.feature_dim != 0) {
            throw InvalidArgument("ar scorer: features must be a nonempty whole number of rows");
        }
        Ctx c{PredictorContext{query_id, features, cfg_.feature_dim, &empty_window_}, {}};
        c.lay = duplicate_input(c.ctx);
        return c;
    }

    S logit(const nn::Mat<S>& out, std::size_t row) const {
        return (out.row(static_cast<Eigen::Index>(row)) * w_.head_w)(0, 0) + w_.head_b(0, 0);
    }

    ModelConfig cfg_;
    NetworkWeights<S> w_;
    ActivationWindow empty_window_{};
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON with a shape header and flat row-major tensors.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"feature_dim", cfg.feature_dim},
            {"num_queries", cfg.num_queries},
            {"hidden", cfg.trunk.hidden},
            {"layers", cfg.trunk.layers},
            {"heads", cfg.trunk.heads},
            {"ff_mult", cfg.trunk.ff_mult},
            {"time_bias", cfg.trunk.time_bias},
            {"duplicate", cfg.duplication == DuplicationMode::Duplicate}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.num_queries = j.value("num_queries", cfg.num_queries);
    cfg.trunk.hidden = j.value("hidden", cfg.trunk.hidden);
    cfg.trunk.layers = j.value("layers", cfg.trunk.layers);
    cfg.trunk.heads = j.value("heads", cfg.trunk.heads);
    cfg.trunk.ff_mult = j.value("ff_mult", cfg.trunk.ff_mult);
    cfg.trunk.time_bias = j.value("time_bias", cfg.trunk.time_bias);
    cfg.duplication = j.value("duplicate", true) ? DuplicationMode::Duplicate : DuplicationMode::MaskedPrefix;
    validate(cfg);
    return cfg;
}

template <typename S>
nlohmann::json checkpoint_json(const std::string& kind, const ModelConfig& cfg, const NetworkWeights<S>& weights) {
    nlohmann::json tensors = nlohmann::json::array();
    const_cast<NetworkWeights<S>&>(weights).visit([&](const std::string& name, nn::Mat<S>& m) {
        std::vector<double> data(m.data(), m.data() + m.size());
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
    });
    return {{"format", "spanact.checkpoint"},
            {"version", kCheckpointVersion},
            {"kind", kind},
            {"config", to_json(cfg)},
            {"tensors", tensors}};
}

template <typename S>
NetworkWeights<S> weights_from_checkpoint(const nlohmann::json& j, const ModelConfig& cfg, std::size_t classes) {
    if (j.value("format", "") != "spanact.checkpoint" || j.value("version", 0) != kCheckpointVersion) {
        throw ConfigError("not a spanact checkpoint (or unsupported version)");
    }
    NetworkWeights<S> w = detail::init_network<S>(cfg, classes, 0);
    const auto& tensors = j.at("tensors");
    std::size_t idx = 0;
    w.visit([&](const std::string& name, nn::Mat<S>& m) {
        if (idx >= tensors.size()) {
            throw ConfigError("checkpoint is missing tensor " + name);
        }
        const auto& t = tensors[idx++];
        if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != m.rows() ||
            t.at("cols").get<Eigen::Index>() != m.cols()) {
            throw ConfigError("checkpoint tensor mismatch at " + name);
        }
        const auto data = t.at("data").get<std::vector<double>>();
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<S>(data[static_cast<std::size_t>(i)]);
        }
    });
    return w;
}

template <typename S>
void save_checkpoint(const std::string& path, const NeuralDenoiser<S>& model) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path);
    }
    out << checkpoint_json("denoiser", model.config(), model.weights()).dump() << '\n';
}

template <typename S>
void save_checkpoint(const std::string& path, const ArScorer<S>& model) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path);
    }
    out << checkpoint_json("ar", model.config(), model.weights()).dump() << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path);
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

template <typename S>
NeuralDenoiser<S> load_denoiser(const std::string& path) {
    const auto j = read_json_file(path);
    if (j.value("kind", "") != "denoiser") {
        throw ConfigError(path + " is not a denoiser checkpoint");
    }
    const auto cfg = model_config_from_json(j.at("config"));
    return NeuralDenoiser<S>(cfg, weights_from_checkpoint<S>(j, cfg, 2));
}

template <typename S>
ArScorer<S> load_ar_scorer(const std::string& path) {
    const auto j = read_json_file(path);
    if (j.value("kind", "") != "ar") {
        throw ConfigError(path + " is not an AR checkpoint");
    }
    const auto cfg = model_config_from_json(j.at("config"));
    return ArScorer<S>(cfg, weights_from_checkpoint<S>(j, cfg, 1));
}

} // namespace spanact
