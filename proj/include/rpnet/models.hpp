#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rpnet/data.hpp"
#include "rpnet/geometry.hpp"
#include "rpnet/nn.hpp"
#include "rpnet/relation.hpp"
#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

namespace rpnet {

enum class Task { classify, segment };
enum class InputFeatures { coords, ones };
enum class BlockKind { gra, sa_compare, sa_degenerate };
enum class GrouperKind { knn, ball };

inline const char* to_string(Task t) { return t == Task::classify ? "classify" : "segment"; }

// ---------------------------------------------------------------------------
// Declarative model description.
// ---------------------------------------------------------------------------

struct StageSpec {
    std::size_t sample_to = 1;
    std::vector<std::size_t> scales;  // neighbor counts; 0 = group every remaining point
    std::vector<double> radii;        // per-scale ball radii (ball grouper only)
    std::size_t out_channels = 64;    // per-scale aggregator output width
    std::size_t residual_blocks = 0;
    std::size_t residual_scale = 16;
};

struct HeadSpec {
    Task kind = Task::classify;
    std::vector<std::size_t> hidden;  // classify: two hidden widths
    double dropout_ratio = 0.5;
};

struct ModelSpec {
    Task task = Task::classify;
    std::string preset;
    std::size_t input_points = 256;
    std::size_t num_classes = 3;
    InputFeatures input_features = InputFeatures::coords;
    std::size_t stem_channels = 32;
    std::vector<StageSpec> stages;
    std::vector<std::size_t> decoder_channels;  // segment only, coarse-to-fine
    HeadSpec head;
    GraConfig gra;  // template: relation/attention/bottleneck settings per block
    BlockKind block_kind = BlockKind::gra;
    GrouperKind grouper = GrouperKind::knn;

    std::size_t block_count() const {
        std::size_t n = 0;
        for (const auto& s : stages) n += s.scales.size() + s.residual_blocks;
        return n;
    }

    void validate() const {
        if (stages.empty()) throw ConfigError("model has no stages");
        std::size_t n = input_points;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const auto& st = stages[s];
            if (st.scales.empty()) throw ConfigError("stage " + std::to_string(s) + " has no scales");
            if (st.sample_to < 1 || st.sample_to > n)
                throw ConfigError("stage " + std::to_string(s) + " samples to " +
                                  std::to_string(st.sample_to) + " from " + std::to_string(n));
            if (task == Task::segment && st.sample_to >= n)
                throw ConfigError("segment resolution chain must be strictly decreasing");
            for (std::size_t k : st.scales)
                if (k > n)
                    throw ConfigError("stage " + std::to_string(s) + " scale " + std::to_string(k) +
                                      " exceeds " + std::to_string(n) + " source points");
            if (st.residual_blocks && st.residual_scale > st.sample_to)
                throw ConfigError("stage " + std::to_string(s) + " residual scale exceeds point count");
            n = st.sample_to;
        }
        if (task == Task::classify && stages.back().sample_to != 1)
            throw ConfigError("classification model must end in a single centroid");
        if (task == Task::classify && head.hidden.size() != 2)
            throw ConfigError("classification head needs exactly two hidden widths");
        if (task == Task::segment && decoder_channels.size() != stages.size())
            throw ConfigError("segment decoder must mirror the encoder stages");
    }
};

// ---------------------------------------------------------------------------
// Presets.
//
// Classification (RPNet-W): three stages, multi-scale grouping in the first
// two, the last stage grouping every remaining point. W1/W3 are reduced
// desk-scale presets with a single 32-neighbor scale per stage.
//
// Segmentation (RPNet-D): four downsampling (skip) stages; residual blocks
// distributed evenly across stages (D8: 1 per stage, D14: 3,3,2,2). The
// default resolution chain is {N/8, N/32, N/64, N/128}.
// ---------------------------------------------------------------------------

inline ModelSpec rpnet_w_spec(const std::string& preset, std::size_t num_classes,
                              std::size_t input_points) {
    ModelSpec spec;
    spec.task = Task::classify;
    spec.preset = preset;
    spec.input_points = input_points;
    spec.num_classes = num_classes;
    spec.head.kind = Task::classify;
    const std::size_t n = input_points;
    if (preset == "W1") {
        spec.stem_channels = 32;
        spec.stages = {{1, {32}, {}, 256, 0, 16}};
        spec.head.hidden = {256, 128};
    } else if (preset == "W3") {
        spec.stem_channels = 32;
        spec.stages = {{n / 2, {32}, {}, 64, 0, 16},
                       {n / 8, {32}, {}, 128, 0, 16},
                       {1, {32}, {}, 256, 0, 16}};
        spec.head.hidden = {256, 128};
    } else if (preset == "W7") {
        spec.stem_channels = 64;
        spec.stages = {{n / 2, {16, 32, 128}, {}, 128, 0, 16},
                       {n / 8, {32, 64, 128}, {}, 256, 0, 16},
                       {1, {0}, {}, 512, 0, 16}};
        spec.head.hidden = {512, 256};
    } else if (preset == "W9") {
        spec.stem_channels = 64;
        spec.stages = {{n / 2, {16, 32, 64, 128}, {}, 128, 0, 16},
                       {n / 8, {32, 64, 96, 128}, {}, 256, 0, 16},
                       {1, {0}, {}, 512, 0, 16}};
        spec.head.hidden = {512, 256};
    } else {
        throw ConfigError("unknown classification preset '" + preset + "'");
    }
    return spec;
}

inline ModelSpec rpnet_d_spec(const std::string& preset, std::size_t num_classes,
                              std::size_t input_points) {
    ModelSpec spec;
    spec.task = Task::segment;
    spec.preset = preset;
    spec.input_points = input_points;
    spec.num_classes = num_classes;
    spec.stem_channels = 32;
    spec.head.kind = Task::segment;

    std::vector<std::size_t> res;
    if (preset == "D4") res = {0, 0, 0, 0};
    else if (preset == "D8") res = {1, 1, 1, 1};
    else if (preset == "D14") res = {3, 3, 2, 2};
    else throw ConfigError("unknown segmentation preset '" + preset + "'");

    const std::size_t n = input_points;
    const std::vector<std::size_t> chain = {n / 8, n / 32, n / 64, n / 128};
    const std::vector<std::size_t> group = {32, 32, 16, 16};
    const std::vector<std::size_t> width = {64, 128, 256, 512};
    for (std::size_t s = 0; s < 4; ++s)
        spec.stages.push_back({chain[s], {group[s]}, {}, width[s], res[s], 16});
    spec.decoder_channels = {256, 128, 64, 64};  // coarse-to-fine, decoder traversal order
    return spec;
}

// ---------------------------------------------------------------------------
// The network. Stages hold one aggregator per scale plus optional residual
// aggregators; segmentation adds interpolation + mixing decoder stages and
// a per-point head, classification a three-linear head.
// ---------------------------------------------------------------------------

class Model {
public:
    using Block = std::variant<GraBlock, SaBlock>;

    ModelSpec spec;
    SharedMlp stem;
    struct Stage {
        std::vector<Block> blocks;       // one per scale
        std::vector<Block> residuals;
    };
    std::vector<Stage> stages;
    std::vector<Linear> decoder_mix;     // segment, coarse-to-fine
    SharedMlp head_hidden;               // classify: two linear+relu layers
    Linear head_out;

    Model() = default;

    Model(ModelSpec s, std::uint64_t param_seed) : spec(std::move(s)) {
        spec.validate();
        Rng rng = Rng(param_seed).split("params");
        const std::size_t in_dim = spec.input_features == InputFeatures::coords ? 3 : 1;
        stem = SharedMlp("stem", in_dim, {spec.stem_channels}, rng);

        std::size_t points = spec.input_points;
        std::size_t channels = spec.stem_channels;
        for (std::size_t si = 0; si < spec.stages.size(); ++si) {
            const StageSpec& st = spec.stages[si];
            Stage stage;
            for (std::size_t sc = 0; sc < st.scales.size(); ++sc) {
                const std::size_t g = st.scales[sc] == 0 ? points : st.scales[sc];
                const std::string name =
                    "stage" + std::to_string(si) + ".scale" + std::to_string(sc);
                stage.blocks.push_back(make_block(name, channels, st.out_channels, g, rng));
            }
            const std::size_t stage_out = st.out_channels * st.scales.size();
            for (std::size_t r = 0; r < st.residual_blocks; ++r) {
                const std::string name = "stage" + std::to_string(si) + ".res" + std::to_string(r);
                stage.residuals.push_back(
                    make_block(name, stage_out, stage_out, st.residual_scale, rng));
            }
            stages.push_back(std::move(stage));
            points = st.sample_to;
            channels = stage_out;
        }

        if (spec.task == Task::segment) {
            // decoder runs coarse-to-fine; stage i upsamples to the output of
            // encoder stage (S-2-i), the last one back to the stem features
            std::size_t cur = channels;
            for (std::size_t d = 0; d < spec.stages.size(); ++d) {
                const std::size_t level = spec.stages.size() - 1 - d;  // destination level
                const std::size_t skip_c = level == 0
                                               ? spec.stem_channels
                                               : spec.stages[level - 1].out_channels *
                                                     spec.stages[level - 1].scales.size();
                decoder_mix.emplace_back("decoder" + std::to_string(d),
                                         cur + skip_c, spec.decoder_channels[d], rng);
                cur = spec.decoder_channels[d];
            }
            head_out = Linear("head.out", cur, spec.num_classes, rng);
        } else {
            head_hidden = SharedMlp("head.hidden", channels, spec.head.hidden, rng);
            head_out = Linear("head.out", spec.head.hidden.back(), spec.num_classes, rng);
        }
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        stem.collect(out);
        for (auto& st : stages) {
            for (auto& b : st.blocks) std::visit([&](auto& block) { block.collect(out); }, b);
            for (auto& b : st.residuals) std::visit([&](auto& block) { block.collect(out); }, b);
        }
        for (auto& l : decoder_mix) l.collect(out);
        if (spec.task == Task::classify) head_hidden.collect(out);
        head_out.collect(out);
        return out;
    }

    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }

    std::size_t gra_block_count() const { return spec.block_count(); }

    // -----------------------------------------------------------------------
    // Forward / backward.
    // -----------------------------------------------------------------------

    struct ScaleCache {
        IndexArray nbr;
        Tensor f_ij, p_ij;
        GraBlock::Cache gra;
        SaBlock::Cache sa;
    };
    struct ResCache {
        IndexArray nbr;
        Tensor f_in, f_ij, p_ij;
        GraBlock::Cache gra;
        SaBlock::Cache sa;
    };
    struct StageCache {
        Tensor points_in, feats_in;
        IndexArray centroid_rows;
        Tensor points_out, f_i;
        std::vector<ScaleCache> scales;
        std::vector<ResCache> residuals;
        Tensor feats_out;
    };
    struct DecoderCache {
        InterpPlan plan;
        std::size_t src_points = 0;
        Tensor cat;
        Tensor mix_pre;
        std::size_t up_width = 0, skip_width = 0;
    };
    struct ForwardCache {
        bool valid = false;
        Tensor stem_in;
        SharedMlp::Cache stem_mlp;
        std::vector<StageCache> stages;
        std::vector<DecoderCache> decoder;
        Tensor head_in;
        SharedMlp::Cache head_hidden_mlp;
        Tensor head_hidden_out;
        DropoutMask head_mask;
        Tensor head_dropped;
    };

    // Returns logits: classify [1, K]; segment [N, K].
    Tensor forward(const PointCloud& cloud, Mode mode, Rng* dropout_rng = nullptr,
                   ForwardCache* cache = nullptr, std::size_t fps_seed = 0) const {
        if (cloud.n_points() != spec.input_points)
            throw ShapeError("model expects " + std::to_string(spec.input_points) + " points, got " +
                             std::to_string(cloud.n_points()));
        if (mode == Mode::train && (!cache || !dropout_rng))
            throw StateError("training forward needs a cache and a dropout stream");

        Tensor feats0 = featurize(cloud);
        if (cache) {
            cache->valid = true;
            cache->stem_in = feats0;
            cache->stages.clear();
            cache->decoder.clear();
        }
        Tensor feats = stem.forward(feats0, cache ? &cache->stem_mlp : nullptr);
        Tensor points = cloud.coords;

        std::vector<Tensor> level_points{points};
        std::vector<Tensor> level_feats{feats};

        for (std::size_t si = 0; si < stages.size(); ++si) {
            StageCache* sc = nullptr;
            if (cache) {
                cache->stages.emplace_back();
                sc = &cache->stages.back();
            }
            auto [p_next, f_next] =
                run_stage(si, points, feats, si == 0 ? fps_seed : 0, sc);
            points = std::move(p_next);
            feats = std::move(f_next);
            level_points.push_back(points);
            level_feats.push_back(feats);
        }

        if (spec.task == Task::classify) {
            Tensor h = head_hidden.forward(feats, cache ? &cache->head_hidden_mlp : nullptr);
            if (cache) cache->head_hidden_out = h;
            Rng null_rng(0);
            Tensor hd = dropout(h, spec.head.dropout_ratio, mode,
                                dropout_rng ? *dropout_rng : null_rng,
                                cache ? &cache->head_mask : nullptr);
            if (cache) cache->head_dropped = hd;
            return head_out.forward(hd);
        }

        // segmentation decoder, coarse to fine
        Tensor cur = feats;
        for (std::size_t d = 0; d < decoder_mix.size(); ++d) {
            const std::size_t level = stages.size() - 1 - d;  // destination level index
            const Tensor& dst_pts = level_points[level];
            const Tensor& src_pts = level_points[level + 1];
            const Tensor& skip = level_feats[level];
            InterpPlan plan = interpolation_plan(src_pts, dst_pts);
            Tensor up = interpolate_features(plan, cur);
            Tensor cat = concat_last({&up, &skip});
            Tensor pre = decoder_mix[d].forward(cat);
            Tensor mixed = relu(pre);
            if (cache) {
                cache->decoder.emplace_back();
                DecoderCache& dc = cache->decoder.back();
                dc.plan = std::move(plan);
                dc.src_points = src_pts.extent(0);
                dc.cat = cat;
                dc.mix_pre = std::move(pre);
                dc.up_width = up.extent(1);
                dc.skip_width = skip.extent(1);
            }
            cur = std::move(mixed);
        }

        if (cache) cache->head_in = cur;
        Rng null_rng(0);
        Tensor hd = dropout(cur, spec.head.dropout_ratio, mode,
                            dropout_rng ? *dropout_rng : null_rng,
                            cache ? &cache->head_mask : nullptr);
        if (cache) cache->head_dropped = hd;
        return head_out.forward(hd);
    }

    // Accumulates parameter gradients from d_logits. Input features get no
    // receiver (the cloud is data), but gradients flow through every layer.
    //
    // Feature levels: F_0 is the stem output, F_{i+1} the output of encoder
    // stage i. In segmentation, F_L (L < S) is also consumed as decoder skip
    // at destination level L, so those gradients are summed before each
    // stage's backward runs.
    void backward(ForwardCache& cache, const Tensor& d_logits) {
        if (!cache.valid) throw StateError("model backward without cached forward");
        const std::size_t s_count = stages.size();

        Tensor d_top;  // gradient w.r.t. F_S
        std::vector<Tensor> skip_grad(s_count);  // gradient w.r.t. F_L, L = 0..S-1

        if (spec.task == Task::classify) {
            Tensor d = head_out.backward(cache.head_dropped, d_logits);
            d = dropout_backward(d, cache.head_mask);
            d_top = head_hidden.backward(cache.head_hidden_mlp, d);
        } else {
            Tensor d = head_out.backward(cache.head_dropped, d_logits);
            d = dropout_backward(d, cache.head_mask);
            for (std::size_t d_i = decoder_mix.size(); d_i-- > 0;) {
                DecoderCache& dc = cache.decoder[d_i];
                Tensor d_pre = relu_backward(dc.mix_pre, d);
                Tensor d_cat = decoder_mix[d_i].backward(dc.cat, d_pre);
                auto parts = split_last(d_cat, {dc.up_width, dc.skip_width});
                const std::size_t level = s_count - 1 - d_i;  // skip destination level
                skip_grad[level] = std::move(parts[1]);
                d = interpolate_features_backward(dc.plan, parts[0], dc.src_points);
            }
            d_top = std::move(d);
        }

        Tensor d_level = std::move(d_top);  // gradient w.r.t. F_{si+1} inside the loop
        for (std::size_t si = s_count; si-- > 0;) {
            Tensor d_below = stage_backward(cache.stages[si], si, d_level);
            if (si > 0 && !skip_grad[si].empty()) d_below = add(d_below, skip_grad[si]);
            d_level = std::move(d_below);
        }
        if (!skip_grad.empty() && !skip_grad[0].empty()) d_level = add(d_level, skip_grad[0]);
        stem.backward(cache.stem_mlp, d_level);
    }

    // -----------------------------------------------------------------------
    // Analytic forward cost (multiply-accumulates) for the profiler. Matches
    // the instrumented eval-mode forward exactly; neighbor search and
    // interpolation-weight preparation are index work and excluded.
    // -----------------------------------------------------------------------

    std::uint64_t analytic_forward_macs() const {
        std::uint64_t n = 0;
        const std::size_t in_dim = spec.input_features == InputFeatures::coords ? 3 : 1;
        std::size_t points = spec.input_points;
        n += linear_macs(points, in_dim, spec.stem_channels) + points * spec.stem_channels;  // stem+relu
        std::size_t channels = spec.stem_channels;
        for (std::size_t si = 0; si < spec.stages.size(); ++si) {
            const StageSpec& st = spec.stages[si];
            const std::size_t m = st.sample_to;
            for (std::size_t sc = 0; sc < st.scales.size(); ++sc) {
                const std::size_t g = st.scales[sc] == 0 ? points : st.scales[sc];
                n += block_macs(channels, st.out_channels, g, m);
            }
            const std::size_t stage_out = st.out_channels * st.scales.size();
            for (std::size_t r = 0; r < st.residual_blocks; ++r) {
                n += block_macs(stage_out, stage_out, st.residual_scale, m);
                n += static_cast<std::uint64_t>(m) * stage_out;  // residual add
            }
            points = m;
            channels = stage_out;
        }
        if (spec.task == Task::classify) {
            std::size_t prev = channels;
            for (std::size_t h : spec.head.hidden) {
                n += linear_macs(1, prev, h) + h;  // linear + relu
                prev = h;
            }
            n += linear_macs(1, prev, spec.num_classes);
        } else {
            std::size_t cur = channels;
            for (std::size_t d = 0; d < spec.decoder_channels.size(); ++d) {
                const std::size_t level = spec.stages.size() - 1 - d;
                const std::size_t dst = level == 0 ? spec.input_points : spec.stages[level - 1].sample_to;
                const std::size_t src = spec.stages[level].sample_to;
                const std::size_t skip_c = level == 0
                                               ? spec.stem_channels
                                               : spec.stages[level - 1].out_channels *
                                                     spec.stages[level - 1].scales.size();
                const std::size_t k = std::min<std::size_t>(3, src);
                n += static_cast<std::uint64_t>(dst) * k * cur;  // interpolation
                n += linear_macs(dst, cur + skip_c, spec.decoder_channels[d]);
                n += static_cast<std::uint64_t>(dst) * spec.decoder_channels[d];  // relu
                cur = spec.decoder_channels[d];
            }
            n += linear_macs(spec.input_points, cur, spec.num_classes);
        }
        return n;
    }

    std::uint64_t analytic_param_count() const {
        std::uint64_t n = 0;
        const std::size_t in_dim = spec.input_features == InputFeatures::coords ? 3 : 1;
        n += linear_param_count(in_dim, spec.stem_channels);
        std::size_t channels = spec.stem_channels;
        for (const StageSpec& st : spec.stages) {
            for (std::size_t sc = 0; sc < st.scales.size(); ++sc)
                n += block_params(channels, st.out_channels);
            const std::size_t stage_out = st.out_channels * st.scales.size();
            for (std::size_t r = 0; r < st.residual_blocks; ++r)
                n += block_params(stage_out, stage_out);
            channels = stage_out;
        }
        if (spec.task == Task::classify) {
            std::size_t prev = channels;
            for (std::size_t h : spec.head.hidden) {
                n += linear_param_count(prev, h);
                prev = h;
            }
            n += linear_param_count(prev, spec.num_classes);
        } else {
            std::size_t cur = channels;
            for (std::size_t d = 0; d < spec.decoder_channels.size(); ++d) {
                const std::size_t level = spec.stages.size() - 1 - d;
                const std::size_t skip_c = level == 0
                                               ? spec.stem_channels
                                               : spec.stages[level - 1].out_channels *
                                                     spec.stages[level - 1].scales.size();
                n += linear_param_count(cur + skip_c, spec.decoder_channels[d]);
                cur = spec.decoder_channels[d];
            }
            n += linear_param_count(cur, spec.num_classes);
        }
        return n;
    }

private:
    Tensor featurize(const PointCloud& cloud) const {
        if (spec.input_features == InputFeatures::coords) return cloud.coords;
        return Tensor::full({cloud.n_points(), 1}, 1.0);
    }

    Block make_block(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t g,
                     Rng& rng) const {
        if (spec.block_kind == BlockKind::gra) {
            GraConfig cfg = spec.gra;
            cfg.channels = c_in;
            cfg.out_channels = c_out;
            cfg.group_size = g;
            return GraBlock(name + ".gra", cfg, rng);
        }
        if (spec.block_kind == BlockKind::sa_compare) {
            SaConfig cfg;
            cfg.channels = c_in;
            cfg.out_channels = c_out;
            cfg.mlp = {c_out, c_out};
            cfg.relu_on_last = true;
            cfg.post_linear = false;
            return SaBlock(name + ".sa", cfg, rng);
        }
        GraConfig probe = spec.gra;
        probe.channels = c_in;
        SaConfig cfg;
        cfg.channels = c_in;
        cfg.out_channels = c_out;
        cfg.mlp = {probe.c_dprime()};
        cfg.relu_on_last = false;
        cfg.post_linear = true;
        return SaBlock(name + ".sa", cfg, rng);
    }

    std::uint64_t block_params(std::size_t c_in, std::size_t c_out) const {
        if (spec.block_kind == BlockKind::gra) {
            GraConfig cfg = spec.gra;
            cfg.channels = c_in;
            cfg.out_channels = c_out;
            cfg.group_size = 1;
            return gra_param_count(cfg);
        }
        SaConfig cfg = sa_config_for(c_in, c_out);
        return sa_param_count(cfg);
    }

    std::uint64_t block_macs(std::size_t c_in, std::size_t c_out, std::size_t g,
                             std::size_t m) const {
        if (spec.block_kind == BlockKind::gra) {
            GraConfig cfg = spec.gra;
            cfg.channels = c_in;
            cfg.out_channels = c_out;
            cfg.group_size = g;
            return gra_forward_macs(cfg, m, g);
        }
        return sa_forward_macs(sa_config_for(c_in, c_out), m, g);
    }

    SaConfig sa_config_for(std::size_t c_in, std::size_t c_out) const {
        SaConfig cfg;
        cfg.channels = c_in;
        cfg.out_channels = c_out;
        if (spec.block_kind == BlockKind::sa_compare) {
            cfg.mlp = {c_out, c_out};
            cfg.relu_on_last = true;
            cfg.post_linear = false;
        } else {
            GraConfig probe = spec.gra;
            probe.channels = c_in;
            cfg.mlp = {probe.c_dprime()};
            cfg.relu_on_last = false;
            cfg.post_linear = true;
        }
        return cfg;
    }

    static Tensor block_forward(const Block& b, const Tensor& f_i, const Tensor& f_ij,
                                const Tensor& p_i, const Tensor& p_ij, ScaleCache* sc) {
        if (std::holds_alternative<GraBlock>(b))
            return std::get<GraBlock>(b).forward(f_i, f_ij, p_i, p_ij, sc ? &sc->gra : nullptr);
        return std::get<SaBlock>(b).forward(f_ij, sc ? &sc->sa : nullptr);
    }

    std::pair<Tensor, Tensor> run_stage(std::size_t si, const Tensor& points, const Tensor& feats,
                                        std::size_t fps_seed, StageCache* sc) const {
        const StageSpec& st = spec.stages[si];
        const std::size_t n = points.extent(0);
        std::vector<std::size_t> centroid_idx = farthest_point_sample(points, st.sample_to, fps_seed);
        IndexArray centroid_rows({st.sample_to}, centroid_idx);
        Tensor p_i = gather_rows(points, centroid_rows);
        Tensor f_i = gather_rows(feats, centroid_rows);

        if (sc) {
            sc->points_in = points;
            sc->feats_in = feats;
            sc->centroid_rows = centroid_rows;
            sc->points_out = p_i;
            sc->f_i = f_i;
        }

        std::vector<Tensor> outs;
        for (std::size_t k = 0; k < st.scales.size(); ++k) {
            const std::size_t g = st.scales[k] == 0 ? n : st.scales[k];
            IndexArray nbr;
            if (spec.grouper == GrouperKind::knn) {
                nbr = knn(p_i, points, g);
            } else {
                const double radius = k < st.radii.size() ? st.radii[k] : 0.2;
                nbr = ball_query(p_i, points, radius, g);
            }
            enforce_self_first(nbr, centroid_idx);
            Tensor p_ij = gather_rows(points, nbr);
            Tensor f_ij = gather_rows(feats, nbr);
            ScaleCache* scale_cache = nullptr;
            if (sc) {
                sc->scales.emplace_back();
                scale_cache = &sc->scales.back();
                scale_cache->nbr = nbr;
                scale_cache->f_ij = f_ij;
                scale_cache->p_ij = p_ij;
            }
            outs.push_back(block_forward(stages[si].blocks[k], f_i, f_ij, p_i, p_ij, scale_cache));
        }
        std::vector<const Tensor*> ptrs;
        for (const Tensor& t : outs) ptrs.push_back(&t);
        Tensor stage_feats = outs.size() == 1 ? std::move(outs[0]) : concat_last(ptrs);

        // residual refinement on the downsampled set
        std::vector<std::size_t> self_idx(st.sample_to);
        for (std::size_t i = 0; i < st.sample_to; ++i) self_idx[i] = i;
        for (std::size_t r = 0; r < stages[si].residuals.size(); ++r) {
            IndexArray nbr = knn(p_i, p_i, st.residual_scale);
            enforce_self_first(nbr, self_idx);
            Tensor p_ij = gather_rows(p_i, nbr);
            Tensor f_ij = gather_rows(stage_feats, nbr);
            ResCache* rc = nullptr;
            if (sc) {
                sc->residuals.emplace_back();
                rc = &sc->residuals.back();
                rc->nbr = nbr;
                rc->f_in = stage_feats;
                rc->f_ij = f_ij;
                rc->p_ij = p_ij;
            }
            Tensor delta;
            const Block& blk = stages[si].residuals[r];
            if (std::holds_alternative<GraBlock>(blk))
                delta = std::get<GraBlock>(blk).forward(stage_feats, f_ij, p_i, p_ij,
                                                        rc ? &rc->gra : nullptr);
            else
                delta = std::get<SaBlock>(blk).forward(f_ij, rc ? &rc->sa : nullptr);
            stage_feats = add(stage_feats, delta);
        }
        if (sc) sc->feats_out = stage_feats;
        return {std::move(p_i), std::move(stage_feats)};
    }

    // Backward through stage si; returns gradient w.r.t. the stage input feats.
    Tensor stage_backward(StageCache& sc, std::size_t si, const Tensor& d_out_in) {
        const StageSpec& st = spec.stages[si];
        const std::size_t n = sc.feats_in.extent(0);
        const std::size_t c_in = sc.feats_in.extent(1);
        Tensor d_stage = d_out_in;

        // residuals in reverse
        for (std::size_t r = stages[si].residuals.size(); r-- > 0;) {
            ResCache& rc = sc.residuals[r];
            Tensor d_fi, d_fij;
            Block& blk = stages[si].residuals[r];
            if (std::holds_alternative<GraBlock>(blk)) {
                std::get<GraBlock>(blk).backward(rc.gra, d_stage, &d_fi, &d_fij);
            } else {
                d_fij = std::get<SaBlock>(blk).backward(rc.sa, d_stage);
                d_fi = Tensor(rc.f_in.shape());
            }
            // identity branch + centroid-feature branch + scattered neighbors
            Tensor d_prev = add(d_stage, d_fi);
            Tensor scattered = scatter_add_rows(d_fij, rc.nbr, st.sample_to);
            d_stage = add(d_prev, scattered);
        }

        // split across scales
        std::vector<std::size_t> widths(st.scales.size(), st.out_channels);
        std::vector<Tensor> parts = st.scales.size() == 1
                                        ? std::vector<Tensor>{d_stage}
                                        : split_last(d_stage, widths);
        Tensor d_feats_in({n, c_in});
        Tensor d_f_i_total({st.sample_to, c_in});
        for (std::size_t k = 0; k < st.scales.size(); ++k) {
            ScaleCache& scale_cache = sc.scales[k];
            Tensor d_fi, d_fij;
            Block& blk = stages[si].blocks[k];
            if (std::holds_alternative<GraBlock>(blk)) {
                std::get<GraBlock>(blk).backward(scale_cache.gra, parts[k], &d_fi, &d_fij);
            } else {
                d_fij = std::get<SaBlock>(blk).backward(scale_cache.sa, parts[k]);
                d_fi = Tensor({st.sample_to, c_in});
            }
            Tensor scattered = scatter_add_rows(d_fij, scale_cache.nbr, n);
            for (std::size_t i = 0; i < d_feats_in.size(); ++i) d_feats_in[i] += scattered[i];
            for (std::size_t i = 0; i < d_f_i_total.size(); ++i) d_f_i_total[i] += d_fi[i];
        }
        Tensor centroid_scatter = scatter_add_rows(d_f_i_total, sc.centroid_rows, n);
        for (std::size_t i = 0; i < d_feats_in.size(); ++i) d_feats_in[i] += centroid_scatter[i];
        return d_feats_in;
    }
};

// ---------------------------------------------------------------------------
// Residual-style forward exposed for contract tests: out = feats + gra(...).
// The blocks inside Model already follow this composition.
// ---------------------------------------------------------------------------

inline Tensor residual_block_forward(GraBlock& block, const Tensor& feats, const Tensor& f_ij,
                                     const Tensor& p_i, const Tensor& p_ij,
                                     GraBlock::Cache* cache = nullptr) {
    if (block.cfg.out_channels != block.cfg.channels)
        throw ConfigError("residual block needs matching input/output widths");
    return add(feats, block.forward(feats, f_ij, p_i, p_ij, cache));
}

// ---------------------------------------------------------------------------
// Voting: average softmax outputs over randomly rescaled inputs. One vote
// uses scale 1.0 exactly.
// ---------------------------------------------------------------------------

inline Tensor vote_probabilities(const Model& model, const PointCloud& cloud, std::size_t votes,
                                 Rng& rng, std::size_t fps_seed = 0) {
    if (votes < 1) throw ConfigError("votes must be >= 1");
    Tensor acc;
    for (std::size_t v = 0; v < votes; ++v) {
        PointCloud scaled = cloud;
        if (votes > 1) {
            const double s = rng.uniform(0.8, 1.25);
            for (std::size_t i = 0; i < scaled.coords.size(); ++i) scaled.coords[i] *= s;
        }
        Tensor logits = model.forward(scaled, Mode::eval, nullptr, nullptr, fps_seed);
        Tensor probs = softmax_rows(logits);
        acc = acc.empty() ? std::move(probs) : add(acc, probs);
    }
    return scale(acc, 1.0 / static_cast<double>(votes));
}

inline int vote_predict(const Model& model, const PointCloud& cloud, std::size_t votes, Rng& rng,
                        std::size_t fps_seed = 0) {
    Tensor probs = vote_probabilities(model, cloud, votes, rng, fps_seed);
    int best = 0;
    for (std::size_t j = 1; j < probs.extent(1); ++j)
        if (probs.at(0, j) > probs.at(0, best)) best = static_cast<int>(j);
    return best;
}

}  // namespace rpnet
