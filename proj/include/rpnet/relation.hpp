#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rpnet/nn.hpp"
#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

namespace rpnet {

// ---------------------------------------------------------------------------
// Geometric relation: which predefined components enter the relation vector.
// Layout order is fixed: [l2, l1, p_i, p_ij, p_i - p_ij], restricted to the
// enabled flags.
// ---------------------------------------------------------------------------

struct GeoSpec {
    bool use_l2 = true;
    bool use_l1 = true;
    bool use_diff = true;
    bool use_abs = true;  // absolute positions [p_i, p_ij]

    std::size_t dim() const {
        return (use_l2 ? 1 : 0) + (use_l1 ? 1 : 0) + (use_diff ? 3 : 0) + (use_abs ? 6 : 0);
    }
    bool any() const { return use_l2 || use_l1 || use_diff || use_abs; }
};

enum class SemanticKind { summation, subtraction, concatenation, hadamard, none };
enum class AggKind { max, mean, sum };

inline const char* to_string(SemanticKind k) {
    switch (k) {
        case SemanticKind::summation: return "sum";
        case SemanticKind::subtraction: return "sub";
        case SemanticKind::concatenation: return "cat";
        case SemanticKind::hadamard: return "had";
        case SemanticKind::none: return "none";
    }
    return "?";
}

inline const char* to_string(AggKind k) {
    switch (k) {
        case AggKind::max: return "max";
        case AggKind::mean: return "mean";
        case AggKind::sum: return "sum";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Aggregator block configuration. C' = C/r1 feeds the relation branch,
// C'' = C/r2 is the value width; K attention maps each cover C''/K channels.
// ---------------------------------------------------------------------------

struct GraConfig {
    std::size_t channels = 64;      // C, input feature width
    std::size_t out_channels = 64;  // width after the output linear
    std::size_t group_size = 32;    // G
    std::size_t attention_maps = 4; // K
    std::size_t r1 = 16;
    std::size_t r2 = 4;
    std::size_t m_hidden = 0;       // weight-MLP hidden width; 0 = 2x input
    GeoSpec geo;
    SemanticKind sem = SemanticKind::summation;
    AggKind agg = AggKind::max;
    bool normalize_attention = false;  // optional softmax over the group
    bool all_ones_attention = false;   // degenerate mode: no relation branch

    std::size_t c_prime() const { return channels / r1; }
    std::size_t c_dprime() const { return channels / r2; }

    std::size_t theta_width() const {
        switch (sem) {
            case SemanticKind::concatenation: return 2 * c_prime();
            case SemanticKind::none: return 0;
            default: return c_prime();
        }
    }
    std::size_t relation_width() const { return c_prime() + theta_width(); }
    std::size_t weight_mlp_hidden() const { return m_hidden ? m_hidden : 2 * relation_width(); }

    void validate() const {
        if (group_size == 0) throw EmptyGroupError("aggregator group size is zero");
        if (r1 == 0 || r2 == 0) throw ConfigError("bottleneck ratios must be positive");
        if (channels % r1 != 0 || channels / r1 < 1)
            throw ConfigError("channels " + std::to_string(channels) + " not divisible by r1=" +
                              std::to_string(r1));
        if (channels % r2 != 0 || channels / r2 < 1)
            throw ConfigError("channels " + std::to_string(channels) + " not divisible by r2=" +
                              std::to_string(r2));
        if (attention_maps == 0 || c_dprime() % attention_maps != 0)
            throw ConfigError("attention maps K=" + std::to_string(attention_maps) +
                              " must divide value width " + std::to_string(c_dprime()));
        if (!all_ones_attention && !geo.any())
            throw ConfigError("geometric relation needs at least one component");
    }
};

// ---------------------------------------------------------------------------
// Geometric relation vector per (centroid, neighbor) pair.
// ---------------------------------------------------------------------------

// Cost model for the profiler: diff 3 ops when any distance/offset component
// is on, l2 = 3 mul + 2 add + 1 sqrt, l1 = 3 abs + 2 add.
inline std::uint64_t alpha_macs_per_pair(const GeoSpec& geo) {
    const bool need_diff = geo.use_l2 || geo.use_l1 || geo.use_diff;
    return (need_diff ? 3 : 0) + (geo.use_l2 ? 6 : 0) + (geo.use_l1 ? 5 : 0);
}

inline Tensor geometric_relation_alpha(const Tensor& p_i, const Tensor& p_ij, const GeoSpec& geo) {
    if (!geo.any()) throw ConfigError("geometric relation needs at least one component");
    if (p_i.rank() != 2 || p_i.extent(1) != 3 || p_ij.rank() != 3 || p_ij.extent(2) != 3 ||
        p_ij.extent(0) != p_i.extent(0))
        throw ShapeError("geometric_relation_alpha expects p_i [M,3], p_ij [M,G,3]");
    const std::size_t m = p_i.extent(0), g = p_ij.extent(1);
    const std::size_t dg = geo.dim();
    Tensor out({m, g, dg});
    for (std::size_t i = 0; i < m; ++i) {
        const double ax = p_i.at(i, 0), ay = p_i.at(i, 1), az = p_i.at(i, 2);
        for (std::size_t j = 0; j < g; ++j) {
            const double bx = p_ij.at(i, j, 0), by = p_ij.at(i, j, 1), bz = p_ij.at(i, j, 2);
            const double dx = ax - bx, dy = ay - by, dz = az - bz;
            std::size_t c = 0;
            double* row = out.data() + (i * g + j) * dg;
            if (geo.use_l2) row[c++] = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (geo.use_l1) row[c++] = std::abs(dx) + std::abs(dy) + std::abs(dz);
            if (geo.use_abs) {
                row[c++] = ax;
                row[c++] = ay;
                row[c++] = az;
                row[c++] = bx;
                row[c++] = by;
                row[c++] = bz;
            }
            if (geo.use_diff) {
                row[c++] = dx;
                row[c++] = dy;
                row[c++] = dz;
            }
        }
    }
    MacCounter::add(static_cast<std::uint64_t>(m) * g * alpha_macs_per_pair(geo));
    return out;
}

// ---------------------------------------------------------------------------
// Broadcast of per-centroid rows across the group axis, and its adjoint.
// ---------------------------------------------------------------------------

inline Tensor expand_group(const Tensor& x, std::size_t g) {
    if (x.rank() != 2) throw ShapeError("expand_group expects [M,C]");
    const std::size_t m = x.extent(0), c = x.extent(1);
    Tensor out({m, g, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < g; ++j)
            std::copy(x.data() + i * c, x.data() + (i + 1) * c, out.data() + (i * g + j) * c);
    return out;
}

inline Tensor collapse_group(const Tensor& d) {  // sum over the group axis
    const std::size_t m = d.extent(0), g = d.extent(1), c = d.extent(2);
    Tensor out({m, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < g; ++j)
            for (std::size_t k = 0; k < c; ++k) out.at(i, k) += d.at(i, j, k);
    return out;
}

// ---------------------------------------------------------------------------
// Semantic relation: combine the mapped centroid and neighbor features.
// eta_g is eta(f_i) already broadcast to [M,G,C'].
// ---------------------------------------------------------------------------

inline Tensor theta_combine(const Tensor& eta_g, const Tensor& mu_out, SemanticKind kind) {
    switch (kind) {
        case SemanticKind::summation: return add(eta_g, mu_out);
        case SemanticKind::subtraction: return sub(eta_g, mu_out);
        case SemanticKind::hadamard: return mul(eta_g, mu_out);
        case SemanticKind::concatenation: return concat_last({&eta_g, &mu_out});
        case SemanticKind::none:
            throw ConfigError("semantic relation 'none' has no combination");
    }
    throw ConfigError("unknown semantic kind");
}

inline Tensor semantic_relation_theta(const Tensor& f_i, const Tensor& f_ij, const Linear& eta,
                                      const Linear& mu, SemanticKind kind) {
    if (kind == SemanticKind::none)
        throw ConfigError("semantic relation 'none' has no combination");
    Tensor eta_g = expand_group(eta.forward(f_i), f_ij.extent(1));
    Tensor mu_out = mu.forward(f_ij);
    return theta_combine(eta_g, mu_out, kind);
}

// ---------------------------------------------------------------------------
// Cross-channel attention: K weight maps, each multiplying a contiguous
// block of C''/K value channels. K=1 is vanilla attention.
// ---------------------------------------------------------------------------

inline Tensor cross_channel_apply(const Tensor& weights, const Tensor& values) {
    if (weights.rank() != 3 || values.rank() != 3 || weights.extent(0) != values.extent(0) ||
        weights.extent(1) != values.extent(1))
        throw ShapeError("cross_channel_apply expects [M,G,K] weights and [M,G,C''] values");
    const std::size_t k = weights.extent(2), c = values.extent(2);
    if (c % k != 0)
        throw ConfigError("attention maps K=" + std::to_string(k) + " must divide value width " +
                          std::to_string(c));
    const std::size_t block = c / k;
    const std::size_t rows = values.extent(0) * values.extent(1);
    Tensor out(values.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* w = weights.data() + r * k;
        const double* v = values.data() + r * c;
        double* o = out.data() + r * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] = w[ch / block] * v[ch];
    }
    MacCounter::add(static_cast<std::uint64_t>(rows) * c);
    return out;
}

inline void cross_channel_backward(const Tensor& weights, const Tensor& values, const Tensor& d_out,
                                   Tensor* d_weights, Tensor* d_values) {
    const std::size_t k = weights.extent(2), c = values.extent(2);
    const std::size_t block = c / k;
    const std::size_t rows = values.extent(0) * values.extent(1);
    if (d_weights) *d_weights = Tensor(weights.shape());
    if (d_values) *d_values = Tensor(values.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* w = weights.data() + r * k;
        const double* v = values.data() + r * c;
        const double* do_ = d_out.data() + r * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (d_values) d_values->data()[r * c + ch] = w[ch / block] * do_[ch];
            if (d_weights) d_weights->data()[r * k + ch / block] += do_[ch] * v[ch];
        }
    }
}

// Softmax over the group axis of [M,G,K] logits, per (centroid, map).
inline Tensor group_softmax(const Tensor& logits) {
    const std::size_t m = logits.extent(0), g = logits.extent(1), k = logits.extent(2);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < k; ++a) {
            double mx = logits.at(i, 0, a);
            for (std::size_t j = 1; j < g; ++j) mx = std::max(mx, logits.at(i, j, a));
            double z = 0.0;
            for (std::size_t j = 0; j < g; ++j) z += std::exp(logits.at(i, j, a) - mx);
            for (std::size_t j = 0; j < g; ++j) out.at(i, j, a) = std::exp(logits.at(i, j, a) - mx) / z;
        }
    MacCounter::add(3 * static_cast<std::uint64_t>(m) * g * k);
    return out;
}

inline Tensor group_softmax_backward(const Tensor& softmaxed, const Tensor& d_out) {
    const std::size_t m = softmaxed.extent(0), g = softmaxed.extent(1), k = softmaxed.extent(2);
    Tensor dx(softmaxed.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < k; ++a) {
            double inner = 0.0;
            for (std::size_t j = 0; j < g; ++j) inner += softmaxed.at(i, j, a) * d_out.at(i, j, a);
            for (std::size_t j = 0; j < g; ++j)
                dx.at(i, j, a) = softmaxed.at(i, j, a) * (d_out.at(i, j, a) - inner);
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Group relation aggregator. Forward: values = gamma(f_ij); attention weights
// from the two-layer MLP over [omega(alpha), theta]; cross-channel product;
// aggregation over the group; output linear.
// ---------------------------------------------------------------------------

struct GraBlock {
    GraConfig cfg;
    Linear eta, mu;     // semantic branch (absent for sem=none / all-ones)
    Linear omega;       // geometric mapping
    Linear gamma;       // value transform
    Linear m1, m2;      // weight MLP
    Linear out_linear;  // the final linear after aggregation

    GraBlock() = default;

    GraBlock(const std::string& name, const GraConfig& config, Rng& rng) : cfg(config) {
        cfg.validate();
        const std::size_t c = cfg.channels, cp = cfg.c_prime(), cpp = cfg.c_dprime();
        gamma = Linear(name + ".gamma", c, cpp, rng);
        if (!cfg.all_ones_attention) {
            omega = Linear(name + ".omega", cfg.geo.dim(), cp, rng);
            if (cfg.sem != SemanticKind::none) {
                eta = Linear(name + ".eta", c, cp, rng);
                mu = Linear(name + ".mu", c, cp, rng);
            }
            m1 = Linear(name + ".m1", cfg.relation_width(), cfg.weight_mlp_hidden(), rng);
            m2 = Linear(name + ".m2", cfg.weight_mlp_hidden(), cfg.attention_maps, rng);
        }
        out_linear = Linear(name + ".out", cpp, cfg.out_channels, rng);
    }

    bool has_semantic() const { return !cfg.all_ones_attention && cfg.sem != SemanticKind::none; }
    bool has_relation() const { return !cfg.all_ones_attention; }

    struct Cache {
        bool valid = false;
        Tensor f_i, f_ij;
        Tensor values;          // gamma output
        Tensor alpha, omega_out;
        Tensor eta_out, eta_g, mu_out, theta;
        Tensor relation;        // [omega(alpha), theta]
        Tensor m_pre, m_act, logits;
        Tensor weights;         // post-normalization attention
        Tensor attended;        // cross-channel output
        std::vector<std::size_t> argmax;  // for max aggregation
        Tensor agg_out;
    };

    // f_i: [M,C], f_ij: [M,G,C], p_i: [M,3], p_ij: [M,G,3] -> [M, C_out]
    Tensor forward(const Tensor& f_i, const Tensor& f_ij, const Tensor& p_i, const Tensor& p_ij,
                   Cache* cache = nullptr) const {
        if (f_ij.rank() != 3 || f_ij.extent(2) != cfg.channels)
            throw ShapeError("gra: grouped features " + shape_str(f_ij.shape()) +
                             " do not end in C=" + std::to_string(cfg.channels));
        if (f_ij.extent(1) < 1) throw EmptyGroupError("gra: empty neighbor group");
        const std::size_t m = f_ij.extent(0), g = f_ij.extent(1);

        Tensor values = gamma.forward(f_ij);  // [M,G,C'']

        Tensor weights;
        Tensor alpha, omega_out, eta_out, eta_g, mu_out, theta, relation, m_pre, m_act, logits;
        if (has_relation()) {
            alpha = geometric_relation_alpha(p_i, p_ij, cfg.geo);
            omega_out = omega.forward(alpha);  // [M,G,C']
            if (has_semantic()) {
                eta_out = eta.forward(f_i);    // [M,C']
                eta_g = expand_group(eta_out, g);
                mu_out = mu.forward(f_ij);     // [M,G,C']
                theta = theta_combine(eta_g, mu_out, cfg.sem);
                relation = concat_last({&omega_out, &theta});
            } else {
                relation = omega_out;
            }
            m_pre = m1.forward(relation);
            m_act = relu(m_pre);
            logits = m2.forward(m_act);  // [M,G,K]
            weights = cfg.normalize_attention ? group_softmax(logits) : logits;
        }

        Tensor attended = has_relation() ? cross_channel_apply(weights, values) : values;

        Tensor agg_out;
        std::vector<std::size_t> argmax;
        switch (cfg.agg) {
            case AggKind::max: {
                MaxReduce r = reduce_max(attended, 1);
                agg_out = std::move(r.values);
                argmax = std::move(r.argmax);
                break;
            }
            case AggKind::mean: agg_out = reduce_mean(attended, 1); break;
            case AggKind::sum: agg_out = reduce_sum(attended, 1); break;
        }

        Tensor y = out_linear.forward(agg_out);  // [M, C_out]

        if (cache) {
            cache->valid = true;
            cache->f_i = f_i;
            cache->f_ij = f_ij;
            cache->values = std::move(values);
            cache->alpha = std::move(alpha);
            cache->omega_out = std::move(omega_out);
            cache->eta_out = std::move(eta_out);
            cache->eta_g = std::move(eta_g);
            cache->mu_out = std::move(mu_out);
            cache->theta = std::move(theta);
            cache->relation = std::move(relation);
            cache->m_pre = std::move(m_pre);
            cache->m_act = std::move(m_act);
            cache->logits = std::move(logits);
            cache->weights = std::move(weights);
            cache->attended = std::move(attended);
            cache->argmax = std::move(argmax);
            cache->agg_out = std::move(agg_out);
        }
        (void)m;
        return y;
    }

    // Gradients for all parameters plus the input features. Coordinates are
    // treated as constants. d_f_i/d_f_ij may be null when not needed.
    void backward(const Cache& cache, const Tensor& d_out, Tensor* d_f_i, Tensor* d_f_ij) {
        if (!cache.valid) throw StateError("gra backward without cached forward");
        const std::size_t g = cache.f_ij.extent(1);

        Tensor d_agg = out_linear.backward(cache.agg_out, d_out);

        Tensor d_attended;
        switch (cfg.agg) {
            case AggKind::max:
                d_attended = reduce_max_backward(d_agg, cache.attended.shape(), 1, cache.argmax);
                break;
            case AggKind::mean:
                d_attended = reduce_mean_backward(d_agg, cache.attended.shape(), 1);
                break;
            case AggKind::sum:
                d_attended = reduce_sum_backward(d_agg, cache.attended.shape(), 1);
                break;
        }

        Tensor d_values;
        Tensor d_fij_total;
        Tensor d_fi_total;
        if (has_relation()) {
            Tensor d_weights;
            cross_channel_backward(cache.weights, cache.values, d_attended, &d_weights, &d_values);
            Tensor d_logits = cfg.normalize_attention
                                  ? group_softmax_backward(cache.weights, d_weights)
                                  : std::move(d_weights);
            Tensor d_m_act = m2.backward(cache.m_act, d_logits);
            Tensor d_m_pre = relu_backward(cache.m_pre, d_m_act);
            Tensor d_relation = m1.backward(cache.relation, d_m_pre);

            Tensor d_omega_out;
            if (has_semantic()) {
                auto parts = split_last(d_relation, {cfg.c_prime(), cfg.theta_width()});
                d_omega_out = std::move(parts[0]);
                Tensor d_theta = std::move(parts[1]);

                Tensor d_eta_g, d_mu_out;
                switch (cfg.sem) {
                    case SemanticKind::summation:
                        d_eta_g = d_theta;
                        d_mu_out = d_theta;
                        break;
                    case SemanticKind::subtraction:
                        d_eta_g = d_theta;
                        d_mu_out = scale(d_theta, -1.0);
                        break;
                    case SemanticKind::hadamard:
                        d_eta_g = mul(d_theta, cache.mu_out);
                        d_mu_out = mul(d_theta, cache.eta_g);
                        break;
                    case SemanticKind::concatenation: {
                        auto tparts = split_last(d_theta, {cfg.c_prime(), cfg.c_prime()});
                        d_eta_g = std::move(tparts[0]);
                        d_mu_out = std::move(tparts[1]);
                        break;
                    }
                    case SemanticKind::none: break;
                }
                Tensor d_eta_out = collapse_group(d_eta_g);
                d_fi_total = eta.backward(cache.f_i, d_eta_out);
                d_fij_total = mu.backward(cache.f_ij, d_mu_out);
            } else {
                d_omega_out = std::move(d_relation);
            }
            // accumulate omega's weight gradients; alpha gets no gradient
            omega.backward(cache.alpha, d_omega_out);
        } else {
            d_values = std::move(d_attended);
        }

        Tensor d_fij_gamma = gamma.backward(cache.f_ij, d_values);
        if (d_f_ij) {
            *d_f_ij = d_fij_total.empty() ? std::move(d_fij_gamma)
                                          : add(d_fij_total, d_fij_gamma);
        }
        if (d_f_i) {
            *d_f_i = d_fi_total.empty() ? Tensor(cache.f_i.shape()) : std::move(d_fi_total);
        }
        (void)g;
    }

    void collect(std::vector<Parameter*>& out) {
        if (has_semantic()) {
            eta.collect(out);
            mu.collect(out);
        }
        if (has_relation()) {
            omega.collect(out);
            m1.collect(out);
            m2.collect(out);
        }
        gamma.collect(out);
        out_linear.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Set-abstraction baseline: shared pointwise MLP per neighbor, max-pool over
// the group, optional linear after pooling.
// ---------------------------------------------------------------------------

struct SaConfig {
    std::size_t channels = 64;
    std::size_t out_channels = 64;
    std::vector<std::size_t> mlp;  // empty: default {out, out}
    bool relu_on_last = true;
    bool post_linear = false;  // apply a linear after pooling

    std::vector<std::size_t> mlp_widths() const {
        return mlp.empty() ? std::vector<std::size_t>{out_channels, out_channels} : mlp;
    }
};

struct SaBlock {
    SaConfig cfg;
    SharedMlp mlp;
    Linear post;  // used only when cfg.post_linear

    SaBlock() = default;
    SaBlock(const std::string& name, const SaConfig& config, Rng& rng) : cfg(config) {
        mlp = SharedMlp(name + ".mlp", cfg.channels, cfg.mlp_widths(), rng, cfg.relu_on_last);
        if (cfg.post_linear) post = Linear(name + ".post", mlp.out_dim(), cfg.out_channels, rng);
        else if (mlp.out_dim() != cfg.out_channels)
            throw ConfigError("sa block mlp must end in out_channels when post_linear is off");
    }

    struct Cache {
        bool valid = false;
        Tensor f_ij;
        SharedMlp::Cache mlp_cache;
        Tensor mapped;
        std::vector<std::size_t> argmax;
        Tensor pooled;
    };

    Tensor forward(const Tensor& f_ij, Cache* cache = nullptr) const {
        if (f_ij.rank() != 3) throw ShapeError("sa: expected grouped features [M,G,C]");
        if (f_ij.extent(1) < 1) throw EmptyGroupError("sa: empty neighbor group");
        Tensor mapped = mlp.forward(f_ij, cache ? &cache->mlp_cache : nullptr);
        MaxReduce r = reduce_max(mapped, 1);
        Tensor y = cfg.post_linear ? post.forward(r.values) : r.values;
        if (cache) {
            cache->valid = true;
            cache->f_ij = f_ij;
            cache->mapped = std::move(mapped);
            cache->argmax = std::move(r.argmax);
            cache->pooled = std::move(r.values);
        }
        return y;
    }

    Tensor backward(const Cache& cache, const Tensor& d_out) {
        if (!cache.valid) throw StateError("sa backward without cached forward");
        Tensor d_pool = cfg.post_linear ? post.backward(cache.pooled, d_out) : d_out;
        Tensor d_mapped = reduce_max_backward(d_pool, cache.mapped.shape(), 1, cache.argmax);
        return mlp.backward(cache.mlp_cache, d_mapped);
    }

    void collect(std::vector<Parameter*>& out) {
        mlp.collect(out);
        if (cfg.post_linear) post.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Relation-shape convolution baseline: per-pair weights from an MLP over the
// geometric relation only, elementwise product with neighbor features,
// max-pool, then a channel-raising linear.
// ---------------------------------------------------------------------------

struct RsConvConfig {
    std::size_t channels = 64;
    std::size_t out_channels = 64;
    std::size_t hidden = 0;  // 0 = 2 * geo dim
    GeoSpec geo{true, false, true, false};  // relative components by default

    std::size_t hidden_width() const { return hidden ? hidden : 2 * geo.dim(); }
};

struct RsConvBlock {
    RsConvConfig cfg;
    Linear w1, w2;  // geo -> hidden -> C, relu after each
    Linear cr;      // channel raising after pooling

    RsConvBlock() = default;
    RsConvBlock(const std::string& name, const RsConvConfig& config, Rng& rng) : cfg(config) {
        if (!cfg.geo.any()) throw ConfigError("rsconv needs at least one geometric component");
        w1 = Linear(name + ".w1", cfg.geo.dim(), cfg.hidden_width(), rng);
        w2 = Linear(name + ".w2", cfg.hidden_width(), cfg.channels, rng);
        cr = Linear(name + ".cr", cfg.channels, cfg.out_channels, rng);
    }

    struct Cache {
        bool valid = false;
        Tensor f_ij, alpha;
        Tensor h1_pre, h1, h2_pre, wgt;
        Tensor weighted;
        std::vector<std::size_t> argmax;
        Tensor pooled;
    };

    Tensor forward(const Tensor& f_ij, const Tensor& p_i, const Tensor& p_ij,
                   Cache* cache = nullptr) const {
        if (f_ij.extent(1) < 1) throw EmptyGroupError("rsconv: empty neighbor group");
        Tensor alpha = geometric_relation_alpha(p_i, p_ij, cfg.geo);
        Tensor h1_pre = w1.forward(alpha);
        Tensor h1 = relu(h1_pre);
        Tensor h2_pre = w2.forward(h1);
        Tensor wgt = relu(h2_pre);           // [M,G,C] nonnegative weights
        Tensor weighted = mul(wgt, f_ij);
        MaxReduce r = reduce_max(weighted, 1);
        Tensor y = cr.forward(r.values);
        if (cache) {
            cache->valid = true;
            cache->f_ij = f_ij;
            cache->alpha = std::move(alpha);
            cache->h1_pre = std::move(h1_pre);
            cache->h1 = std::move(h1);
            cache->h2_pre = std::move(h2_pre);
            cache->wgt = std::move(wgt);
            cache->weighted = std::move(weighted);
            cache->argmax = std::move(r.argmax);
            cache->pooled = std::move(r.values);
        }
        return y;
    }

    Tensor backward(const Cache& cache, const Tensor& d_out) {
        if (!cache.valid) throw StateError("rsconv backward without cached forward");
        Tensor d_pool = cr.backward(cache.pooled, d_out);
        Tensor d_weighted = reduce_max_backward(d_pool, cache.weighted.shape(), 1, cache.argmax);
        Tensor d_wgt = mul(d_weighted, cache.f_ij);
        Tensor d_fij = mul(d_weighted, cache.wgt);
        Tensor d_h2_pre = relu_backward(cache.h2_pre, d_wgt);
        Tensor d_h1 = w2.backward(cache.h1, d_h2_pre);
        Tensor d_h1_pre = relu_backward(cache.h1_pre, d_h1);
        w1.backward(cache.alpha, d_h1_pre);  // alpha gradient discarded
        return d_fij;
    }

    void collect(std::vector<Parameter*>& out) {
        w1.collect(out);
        w2.collect(out);
        cr.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Analytic parameter and multiply-accumulate counts. The MAC model matches
// the instrumented forward exactly: a linear on R rows costs R*in*out + R*out
// (bias), every elementwise op costs its element count, reductions cost
// their input element count, gathers are free.
// ---------------------------------------------------------------------------

inline std::uint64_t linear_param_count(std::size_t in, std::size_t out) {
    return static_cast<std::uint64_t>(in) * out + out;
}

inline std::uint64_t linear_macs(std::uint64_t rows, std::size_t in, std::size_t out) {
    return rows * in * out + rows * out;
}

inline std::uint64_t gra_param_count(const GraConfig& cfg) {
    cfg.validate();
    std::uint64_t n = 0;
    if (!cfg.all_ones_attention) {
        if (cfg.sem != SemanticKind::none) {
            n += linear_param_count(cfg.channels, cfg.c_prime());  // eta
            n += linear_param_count(cfg.channels, cfg.c_prime());  // mu
        }
        n += linear_param_count(cfg.geo.dim(), cfg.c_prime());                       // omega
        n += linear_param_count(cfg.relation_width(), cfg.weight_mlp_hidden());      // m1
        n += linear_param_count(cfg.weight_mlp_hidden(), cfg.attention_maps);        // m2
    }
    n += linear_param_count(cfg.channels, cfg.c_dprime());       // gamma
    n += linear_param_count(cfg.c_dprime(), cfg.out_channels);   // out
    return n;
}

inline std::uint64_t gra_forward_macs(const GraConfig& cfg, std::size_t m, std::size_t g) {
    cfg.validate();
    const std::uint64_t rows = static_cast<std::uint64_t>(m) * g;
    std::uint64_t n = 0;
    n += linear_macs(rows, cfg.channels, cfg.c_dprime());  // gamma
    if (!cfg.all_ones_attention) {
        n += rows * alpha_macs_per_pair(cfg.geo);
        n += linear_macs(rows, cfg.geo.dim(), cfg.c_prime());  // omega
        if (cfg.sem != SemanticKind::none) {
            n += linear_macs(m, cfg.channels, cfg.c_prime());   // eta (per centroid)
            n += linear_macs(rows, cfg.channels, cfg.c_prime());  // mu
            if (cfg.sem != SemanticKind::concatenation) n += rows * cfg.c_prime();  // combine
        }
        n += linear_macs(rows, cfg.relation_width(), cfg.weight_mlp_hidden());  // m1
        n += rows * cfg.weight_mlp_hidden();                                    // relu
        n += linear_macs(rows, cfg.weight_mlp_hidden(), cfg.attention_maps);    // m2
        if (cfg.normalize_attention) n += 3 * rows * cfg.attention_maps;
        n += rows * cfg.c_dprime();  // cross-channel product
    }
    n += rows * cfg.c_dprime();                                // aggregation
    n += linear_macs(m, cfg.c_dprime(), cfg.out_channels);     // output linear
    return n;
}

inline std::uint64_t sa_param_count(const SaConfig& cfg) {
    std::uint64_t n = 0;
    std::size_t prev = cfg.channels;
    for (std::size_t w : cfg.mlp_widths()) {
        n += linear_param_count(prev, w);
        prev = w;
    }
    if (cfg.post_linear) n += linear_param_count(prev, cfg.out_channels);
    return n;
}

inline std::uint64_t sa_forward_macs(const SaConfig& cfg, std::size_t m, std::size_t g) {
    const std::uint64_t rows = static_cast<std::uint64_t>(m) * g;
    std::uint64_t n = 0;
    std::size_t prev = cfg.channels;
    const auto widths = cfg.mlp_widths();
    for (std::size_t i = 0; i < widths.size(); ++i) {
        n += linear_macs(rows, prev, widths[i]);
        const bool relu_here = (i + 1 < widths.size()) || cfg.relu_on_last;
        if (relu_here) n += rows * widths[i];
        prev = widths[i];
    }
    n += rows * prev;  // max pool
    if (cfg.post_linear) n += linear_macs(m, prev, cfg.out_channels);
    return n;
}

inline std::uint64_t rsconv_param_count(const RsConvConfig& cfg) {
    return linear_param_count(cfg.geo.dim(), cfg.hidden_width()) +
           linear_param_count(cfg.hidden_width(), cfg.channels) +
           linear_param_count(cfg.channels, cfg.out_channels);
}

inline std::uint64_t rsconv_forward_macs(const RsConvConfig& cfg, std::size_t m, std::size_t g) {
    const std::uint64_t rows = static_cast<std::uint64_t>(m) * g;
    std::uint64_t n = rows * alpha_macs_per_pair(cfg.geo);
    n += linear_macs(rows, cfg.geo.dim(), cfg.hidden_width());
    n += rows * cfg.hidden_width();  // relu
    n += linear_macs(rows, cfg.hidden_width(), cfg.channels);
    n += rows * cfg.channels;  // relu
    n += rows * cfg.channels;  // weight product
    n += rows * cfg.channels;  // max pool
    n += linear_macs(m, cfg.channels, cfg.out_channels);
    return n;
}

// Parameter count from a live layer list: the sum of value sizes.
inline std::uint64_t count_params(const std::vector<Parameter*>& params) {
    std::uint64_t n = 0;
    for (const Parameter* p : params) n += p->value.size();
    return n;
}

}  // namespace rpnet
