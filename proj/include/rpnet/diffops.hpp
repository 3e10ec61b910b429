#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rpnet/gradcheck.hpp"
#include "rpnet/nn.hpp"
#include "rpnet/relation.hpp"

namespace rpnet {

// DiffOp wrappers for the composite layers. Inputs are [features..., every
// parameter tensor]; coordinates are redrawn per sample but kept out of the
// checked inputs since they carry no gradient.

namespace detail {

inline void assign_params(std::vector<Parameter*>& params, const std::vector<Tensor>& inputs,
                          std::size_t offset) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = inputs[offset + i];
}

inline void zero_params(std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace detail

// Full aggregator block: checks d(f_i), d(f_ij) and every parameter gradient.
inline DiffOp make_gra_diffop(const GraConfig& cfg, std::size_t m, std::size_t g) {
    struct State {
        GraBlock block;
        Tensor p_i, p_ij;
        std::vector<Parameter*> params;
    };
    auto state = std::make_shared<State>();
    Rng init(7);
    state->block = GraBlock("check", cfg, init);
    state->block.collect(state->params);

    const std::size_t n_params = state->params.size();
    const std::size_t c = cfg.channels;

    DiffOp op;
    op.name = "gra_block_" + std::string(to_string(cfg.sem)) + "_" + to_string(cfg.agg) +
              (cfg.normalize_attention ? "_softmax" : "") + (cfg.all_ones_attention ? "_ones" : "");
    op.sample_inputs = [state, m, g, c, n_params](Rng& rng) {
        state->p_i = random_tensor(rng, {m, 3});
        state->p_ij = random_tensor(rng, {m, g, 3});
        std::vector<Tensor> inputs;
        inputs.push_back(random_tensor(rng, {m, c}));
        inputs.push_back(random_tensor(rng, {m, g, c}));
        for (std::size_t i = 0; i < n_params; ++i)
            inputs.push_back(random_tensor(rng, state->params[i]->value.shape()));
        return inputs;
    };
    op.forward = [state](const std::vector<Tensor>& in) {
        detail::assign_params(state->params, in, 2);
        return state->block.forward(in[0], in[1], state->p_i, state->p_ij, nullptr);
    };
    op.backward = [state](const std::vector<Tensor>& in, const Tensor& dy) {
        detail::assign_params(state->params, in, 2);
        detail::zero_params(state->params);
        GraBlock::Cache cache;
        state->block.forward(in[0], in[1], state->p_i, state->p_ij, &cache);
        Tensor d_fi, d_fij;
        state->block.backward(cache, dy, &d_fi, &d_fij);
        std::vector<Tensor> grads{d_fi, d_fij};
        for (Parameter* p : state->params) grads.push_back(p->grad);
        return grads;
    };
    op.smooth_at = [state](const std::vector<Tensor>& in, double step) {
        detail::assign_params(state->params, in, 2);
        GraBlock::Cache cache;
        state->block.forward(in[0], in[1], state->p_i, state->p_ij, &cache);
        const double margin = 8.0 * step;
        if (state->block.has_relation() && !away_from_zero(cache.m_pre, margin)) return false;
        if (state->block.cfg.agg == AggKind::max && !max_gap_at_least(cache.attended, 1, margin))
            return false;
        return true;
    };
    return op;
}

inline DiffOp make_sa_diffop(const SaConfig& cfg, std::size_t m, std::size_t g) {
    struct State {
        SaBlock block;
        std::vector<Parameter*> params;
    };
    auto state = std::make_shared<State>();
    Rng init(11);
    state->block = SaBlock("check", cfg, init);
    state->block.collect(state->params);
    const std::size_t n_params = state->params.size();
    const std::size_t c = cfg.channels;

    DiffOp op;
    op.name = "sa_block";
    op.sample_inputs = [state, m, g, c, n_params](Rng& rng) {
        std::vector<Tensor> inputs{random_tensor(rng, {m, g, c})};
        for (std::size_t i = 0; i < n_params; ++i)
            inputs.push_back(random_tensor(rng, state->params[i]->value.shape()));
        return inputs;
    };
    op.forward = [state](const std::vector<Tensor>& in) {
        detail::assign_params(state->params, in, 1);
        return state->block.forward(in[0], nullptr);
    };
    op.backward = [state](const std::vector<Tensor>& in, const Tensor& dy) {
        detail::assign_params(state->params, in, 1);
        detail::zero_params(state->params);
        SaBlock::Cache cache;
        state->block.forward(in[0], &cache);
        std::vector<Tensor> grads{state->block.backward(cache, dy)};
        for (Parameter* p : state->params) grads.push_back(p->grad);
        return grads;
    };
    op.smooth_at = [state](const std::vector<Tensor>& in, double step) {
        detail::assign_params(state->params, in, 1);
        SaBlock::Cache cache;
        state->block.forward(in[0], &cache);
        const double margin = 8.0 * step;
        for (std::size_t i = 0; i < cache.mlp_cache.pre.size(); ++i) {
            if (!state->block.mlp.relu_after[i]) continue;
            if (!away_from_zero(cache.mlp_cache.pre[i], margin)) return false;
        }
        return max_gap_at_least(cache.mapped, 1, margin);
    };
    return op;
}

inline DiffOp make_rsconv_diffop(const RsConvConfig& cfg, std::size_t m, std::size_t g) {
    struct State {
        RsConvBlock block;
        Tensor p_i, p_ij;
        std::vector<Parameter*> params;
    };
    auto state = std::make_shared<State>();
    Rng init(13);
    state->block = RsConvBlock("check", cfg, init);
    state->block.collect(state->params);
    const std::size_t n_params = state->params.size();
    const std::size_t c = cfg.channels;

    DiffOp op;
    op.name = "rsconv_block";
    op.sample_inputs = [state, m, g, c, n_params](Rng& rng) {
        state->p_i = random_tensor(rng, {m, 3});
        state->p_ij = random_tensor(rng, {m, g, 3});
        std::vector<Tensor> inputs{random_tensor(rng, {m, g, c})};
        for (std::size_t i = 0; i < n_params; ++i)
            inputs.push_back(random_tensor(rng, state->params[i]->value.shape()));
        return inputs;
    };
    op.forward = [state](const std::vector<Tensor>& in) {
        detail::assign_params(state->params, in, 1);
        return state->block.forward(in[0], state->p_i, state->p_ij, nullptr);
    };
    op.backward = [state](const std::vector<Tensor>& in, const Tensor& dy) {
        detail::assign_params(state->params, in, 1);
        detail::zero_params(state->params);
        RsConvBlock::Cache cache;
        state->block.forward(in[0], state->p_i, state->p_ij, &cache);
        std::vector<Tensor> grads{state->block.backward(cache, dy)};
        for (Parameter* p : state->params) grads.push_back(p->grad);
        return grads;
    };
    op.smooth_at = [state](const std::vector<Tensor>& in, double step) {
        detail::assign_params(state->params, in, 1);
        RsConvBlock::Cache cache;
        state->block.forward(in[0], state->p_i, state->p_ij, &cache);
        const double margin = 8.0 * step;
        return away_from_zero(cache.h1_pre, margin) && away_from_zero(cache.h2_pre, margin) &&
               max_gap_at_least(cache.weighted, 1, margin);
    };
    return op;
}

inline DiffOp make_shared_mlp_diffop(std::size_t in, const std::vector<std::size_t>& widths,
                                     std::size_t rows) {
    struct State {
        SharedMlp mlp;
        std::vector<Parameter*> params;
    };
    auto state = std::make_shared<State>();
    Rng init(17);
    state->mlp = SharedMlp("check", in, widths, init);
    state->mlp.collect(state->params);
    const std::size_t n_params = state->params.size();

    DiffOp op;
    op.name = "shared_mlp";
    op.sample_inputs = [state, rows, in, n_params](Rng& rng) {
        std::vector<Tensor> inputs{random_tensor(rng, {rows, in})};
        for (std::size_t i = 0; i < n_params; ++i)
            inputs.push_back(random_tensor(rng, state->params[i]->value.shape()));
        return inputs;
    };
    op.forward = [state](const std::vector<Tensor>& in_v) {
        detail::assign_params(state->params, in_v, 1);
        return state->mlp.forward(in_v[0], nullptr);
    };
    op.backward = [state](const std::vector<Tensor>& in_v, const Tensor& dy) {
        detail::assign_params(state->params, in_v, 1);
        detail::zero_params(state->params);
        SharedMlp::Cache cache;
        state->mlp.forward(in_v[0], &cache);
        std::vector<Tensor> grads{state->mlp.backward(cache, dy)};
        for (Parameter* p : state->params) grads.push_back(p->grad);
        return grads;
    };
    op.smooth_at = [state](const std::vector<Tensor>& in_v, double step) {
        detail::assign_params(state->params, in_v, 1);
        SharedMlp::Cache cache;
        state->mlp.forward(in_v[0], &cache);
        for (std::size_t i = 0; i < cache.pre.size(); ++i) {
            if (!state->mlp.relu_after[i]) continue;
            if (!away_from_zero(cache.pre[i], 8.0 * step)) return false;
        }
        return true;
    };
    return op;
}

// Weight MLP in isolation: two linears with a relu between, raw logits out.
inline DiffOp make_weight_mlp_diffop(std::size_t w_in, std::size_t hidden, std::size_t k,
                                     std::size_t m, std::size_t g) {
    struct State {
        Linear l1, l2;
        std::vector<Parameter*> params;
    };
    auto state = std::make_shared<State>();
    Rng init(19);
    state->l1 = Linear("check.m1", w_in, hidden, init);
    state->l2 = Linear("check.m2", hidden, k, init);
    state->l1.collect(state->params);
    state->l2.collect(state->params);
    const std::size_t n_params = state->params.size();

    DiffOp op;
    op.name = "weight_mlp";
    op.sample_inputs = [state, m, g, w_in, n_params](Rng& rng) {
        std::vector<Tensor> inputs{random_tensor(rng, {m, g, w_in})};
        for (std::size_t i = 0; i < n_params; ++i)
            inputs.push_back(random_tensor(rng, state->params[i]->value.shape()));
        return inputs;
    };
    op.forward = [state](const std::vector<Tensor>& in) {
        detail::assign_params(state->params, in, 1);
        return state->l2.forward(relu(state->l1.forward(in[0])));
    };
    op.backward = [state](const std::vector<Tensor>& in, const Tensor& dy) {
        detail::assign_params(state->params, in, 1);
        detail::zero_params(state->params);
        Tensor pre = state->l1.forward(in[0]);
        Tensor act = relu(pre);
        Tensor d_act = state->l2.backward(act, dy);
        Tensor d_pre = relu_backward(pre, d_act);
        std::vector<Tensor> grads{state->l1.backward(in[0], d_pre)};
        for (Parameter* p : state->params) grads.push_back(p->grad);
        return grads;
    };
    op.smooth_at = [state](const std::vector<Tensor>& in, double step) {
        detail::assign_params(state->params, in, 1);
        return away_from_zero(state->l1.forward(in[0]), 8.0 * step);
    };
    return op;
}

// Softmax cross entropy as a DiffOp (scalar output tensor).
inline DiffOp make_cross_entropy_diffop(std::size_t b, std::size_t k) {
    auto labels = std::make_shared<std::vector<int>>();
    DiffOp op;
    op.name = "softmax_cross_entropy";
    op.sample_inputs = [labels, b, k](Rng& rng) {
        labels->clear();
        for (std::size_t i = 0; i < b; ++i)
            labels->push_back(static_cast<int>(rng.uniform_index(k)));
        return std::vector<Tensor>{random_tensor(rng, {b, k})};
    };
    op.forward = [labels](const std::vector<Tensor>& in) {
        Tensor out({1});
        out[0] = softmax_cross_entropy(in[0], *labels).loss;
        return out;
    };
    op.backward = [labels](const std::vector<Tensor>& in, const Tensor& dy) {
        CrossEntropy ce = softmax_cross_entropy(in[0], *labels);
        return std::vector<Tensor>{scale(ce.dlogits, dy[0])};
    };
    op.smooth_at = nullptr;
    return op;
}

// Feature interpolation: source features differentiable, geometry fixed.
inline DiffOp make_interpolation_diffop(std::size_t ns, std::size_t nd, std::size_t c) {
    auto plan = std::make_shared<InterpPlan>();
    DiffOp op;
    op.name = "feature_interpolation";
    op.sample_inputs = [plan, ns, nd, c](Rng& rng) {
        Tensor src_pts = random_tensor(rng, {ns, 3});
        Tensor dst_pts = random_tensor(rng, {nd, 3});
        *plan = interpolation_plan(src_pts, dst_pts);
        return std::vector<Tensor>{random_tensor(rng, {ns, c})};
    };
    op.forward = [plan](const std::vector<Tensor>& in) {
        return interpolate_features(*plan, in[0]);
    };
    op.backward = [plan, ns](const std::vector<Tensor>& in, const Tensor& dy) {
        (void)in;
        return std::vector<Tensor>{interpolate_features_backward(*plan, dy, ns)};
    };
    op.smooth_at = nullptr;
    return op;
}

// The composite checks cmd gradcheck runs beyond the raw primitives.
inline std::vector<DiffOp> composite_diffops() {
    std::vector<DiffOp> ops;
    GraConfig small;
    small.channels = 16;
    small.out_channels = 8;
    small.group_size = 4;
    small.attention_maps = 2;
    small.r1 = 16;
    small.r2 = 4;
    ops.push_back(make_gra_diffop(small, 3, 4));
    GraConfig softmaxed = small;
    softmaxed.normalize_attention = true;
    ops.push_back(make_gra_diffop(softmaxed, 3, 4));
    SaConfig sa;
    sa.channels = 8;
    sa.out_channels = 6;
    sa.mlp = {6, 6};
    ops.push_back(make_sa_diffop(sa, 3, 4));
    RsConvConfig rs;
    rs.channels = 8;
    rs.out_channels = 6;
    ops.push_back(make_rsconv_diffop(rs, 3, 4));
    ops.push_back(make_shared_mlp_diffop(5, {7, 4}, 6));
    ops.push_back(make_weight_mlp_diffop(6, 8, 2, 3, 4));
    ops.push_back(make_cross_entropy_diffop(4, 5));
    ops.push_back(make_interpolation_diffop(6, 9, 4));
    return ops;
}

}  // namespace rpnet
