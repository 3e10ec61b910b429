#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rpnet/geometry.hpp"
#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

namespace rpnet {

// Uniform init in +-sqrt(1/fan_in); biases use the owning layer's fan-in bound.
inline Parameter make_param(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor v(std::move(shape));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
    return Parameter(std::move(name), std::move(v));
}

// ---------------------------------------------------------------------------
// Linear map over the trailing dimension: y = x W + b, W: [in, out].
// Leading dimensions are treated as a flat row batch.
// ---------------------------------------------------------------------------

struct Linear {
    Parameter weight;  // [in, out]
    Parameter bias;    // [out]

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(make_param(name + ".weight", {in, out}, in, rng)),
          bias(make_param(name + ".bias", {out}, in, rng)) {}

    std::size_t in_dim() const { return weight.value.extent(0); }
    std::size_t out_dim() const { return weight.value.extent(1); }

    Tensor forward(const Tensor& x) const {
        const std::size_t in = in_dim();
        if (x.extent(x.rank() - 1) != in)
            throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                             std::to_string(in));
        Shape out_shape = x.shape();
        out_shape.back() = out_dim();
        Tensor flat = x.reshaped({x.size() / in, in});
        Tensor y = add_bias(matmul(flat, weight.value), bias.value);
        y.set_shape(std::move(out_shape));
        return y;
    }

    // Accumulates parameter gradients; returns dx with x's shape.
    Tensor backward(const Tensor& x, const Tensor& dy) {
        const std::size_t in = in_dim(), out = out_dim();
        Tensor flat_x = x.reshaped({x.size() / in, in});
        Tensor flat_dy = dy.reshaped({dy.size() / out, out});
        Tensor db = add_bias_backward(flat_dy, out);
        for (std::size_t i = 0; i < db.size(); ++i) bias.grad[i] += db[i];
        Tensor dx(flat_x.shape());
        matmul_backward(flat_x, weight.value, flat_dy, &dx, &weight.grad);
        dx.set_shape(x.shape());
        return dx;
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// ---------------------------------------------------------------------------
// Shared pointwise MLP: the same linear(+relu) stack applied to every point
// position independently.
// ---------------------------------------------------------------------------

struct SharedMlp {
    std::vector<Linear> layers;
    std::vector<bool> relu_after;

    SharedMlp() = default;
    SharedMlp(const std::string& name, std::size_t in, const std::vector<std::size_t>& widths,
              Rng& rng, bool relu_on_last = true) {
        std::size_t prev = in;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            layers.emplace_back(name + ".l" + std::to_string(i), prev, widths[i], rng);
            relu_after.push_back(i + 1 < widths.size() ? true : relu_on_last);
            prev = widths[i];
        }
    }

    std::size_t out_dim() const { return layers.back().out_dim(); }

    struct Cache {
        std::vector<Tensor> inputs;  // input to each layer
        std::vector<Tensor> pre;     // pre-relu output where relu applies
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
        Tensor h = x;
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (cache) cache->inputs.push_back(h);
            h = layers[i].forward(h);
            if (relu_after[i]) {
                if (cache) cache->pre.push_back(h);
                h = relu(h);
            } else if (cache) {
                cache->pre.push_back(Tensor());
            }
        }
        return h;
    }

    Tensor backward(const Cache& cache, const Tensor& dy) {
        Tensor d = dy;
        for (std::size_t i = layers.size(); i-- > 0;) {
            if (relu_after[i]) d = relu_backward(cache.pre[i], d);
            d = layers[i].backward(cache.inputs[i], d);
        }
        return d;
    }

    void collect(std::vector<Parameter*>& out) {
        for (auto& l : layers) l.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Dropout: train mode zeroes each element with probability `ratio` and
// scales survivors by 1/(1-ratio); eval mode is the identity.
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

struct DropoutMask {
    std::vector<bool> keep;
    double inv_keep = 1.0;
};

inline Tensor dropout(const Tensor& x, double ratio, Mode mode, Rng& rng, DropoutMask* mask = nullptr) {
    if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("dropout ratio must be in [0, 1)");
    if (mode == Mode::eval || ratio == 0.0) {
        if (mask) {
            mask->keep.assign(x.size(), true);
            mask->inv_keep = 1.0;
        }
        return x;
    }
    const double inv_keep = 1.0 / (1.0 - ratio);
    Tensor y = x;
    if (mask) {
        mask->keep.assign(x.size(), true);
        mask->inv_keep = inv_keep;
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (rng.uniform() < ratio) {
            y[i] = 0.0;
            if (mask) mask->keep[i] = false;
        } else {
            y[i] *= inv_keep;
        }
    }
    return y;
}

inline Tensor dropout_backward(const Tensor& dy, const DropoutMask& mask) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask.keep[i] ? dx[i] * mask.inv_keep : 0.0;
    return dx;
}

// ---------------------------------------------------------------------------
// Softmax cross entropy, stabilized by max subtraction. Returns the mean
// negative log-likelihood and the logits gradient (softmax - onehot) / B.
// ---------------------------------------------------------------------------

struct CrossEntropy {
    double loss;
    Tensor dlogits;
};

inline CrossEntropy softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.extent(0) != labels.size())
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.extent(0), k = logits.extent(1);
    CrossEntropy out{0.0, Tensor(logits.shape())};
    for (std::size_t i = 0; i < b; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= k)
            throw LabelError("label " + std::to_string(label) + " out of range [0, " +
                             std::to_string(k) + ")");
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - mx);
        const double log_z = std::log(z) + mx;
        out.loss += (log_z - logits.at(i, static_cast<std::size_t>(label))) / static_cast<double>(b);
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::exp(logits.at(i, j) - log_z);
            out.dlogits.at(i, j) = (p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) /
                                   static_cast<double>(b);
        }
    }
    return out;
}

inline Tensor softmax_rows(const Tensor& logits) {
    const std::size_t b = logits.extent(0), k = logits.extent(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - mx);
        for (std::size_t j = 0; j < k; ++j) p.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Feature propagation: upsample coarse features to a finer point set by
// inverse-squared-distance interpolation of the 3 nearest sources. A
// destination coincident with a source copies that source's feature.
// ---------------------------------------------------------------------------

struct InterpPlan {
    IndexArray idx;   // [Nd, k] source indices
    Tensor weights;   // [Nd, k] normalized weights
};

inline InterpPlan interpolation_plan(const Tensor& src_coords, const Tensor& dst_coords) {
    const std::size_t ns = src_coords.extent(0);
    const std::size_t k = std::min<std::size_t>(3, ns);  // fewer than 3 sources: use all
    InterpPlan plan;
    plan.idx = knn(dst_coords, src_coords, k);
    const std::size_t nd = dst_coords.extent(0);
    plan.weights = Tensor({nd, k});
    constexpr double kEps = 1e-8;
    for (std::size_t i = 0; i < nd; ++i) {
        bool exact = false;
        for (std::size_t j = 0; j < k && !exact; ++j) {
            const std::size_t s = plan.idx.at(i, j);
            double d2 = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double diff = dst_coords.at(i, d) - src_coords.at(s, d);
                d2 += diff * diff;
            }
            if (d2 == 0.0) {
                for (std::size_t jj = 0; jj < k; ++jj) plan.weights.at(i, jj) = 0.0;
                plan.weights.at(i, j) = 1.0;
                exact = true;
            }
        }
        if (exact) continue;
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t s = plan.idx.at(i, j);
            double d2 = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double diff = dst_coords.at(i, d) - src_coords.at(s, d);
                d2 += diff * diff;
            }
            const double w = 1.0 / (d2 + kEps);
            plan.weights.at(i, j) = w;
            total += w;
        }
        for (std::size_t j = 0; j < k; ++j) plan.weights.at(i, j) /= total;
    }
    return plan;
}

inline Tensor interpolate_features(const InterpPlan& plan, const Tensor& src_feats) {
    const std::size_t nd = plan.weights.extent(0), k = plan.weights.extent(1);
    const std::size_t c = src_feats.extent(1);
    Tensor out({nd, c});
    for (std::size_t i = 0; i < nd; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double w = plan.weights.at(i, j);
            if (w == 0.0) continue;
            const std::size_t s = plan.idx.at(i, j);
            for (std::size_t d = 0; d < c; ++d) out.at(i, d) += w * src_feats.at(s, d);
        }
    MacCounter::add(static_cast<std::uint64_t>(nd) * k * c);
    return out;
}

inline Tensor interpolate_features_backward(const InterpPlan& plan, const Tensor& d_out,
                                            std::size_t ns) {
    const std::size_t nd = plan.weights.extent(0), k = plan.weights.extent(1);
    const std::size_t c = d_out.extent(1);
    Tensor d_src({ns, c});
    for (std::size_t i = 0; i < nd; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double w = plan.weights.at(i, j);
            if (w == 0.0) continue;
            const std::size_t s = plan.idx.at(i, j);
            for (std::size_t d = 0; d < c; ++d) d_src.at(s, d) += w * d_out.at(i, d);
        }
    return d_src;
}

// Convenience form matching the operator contract: interpolate and
// optionally concatenate skip features.
inline Tensor feature_propagation(const Tensor& src_coords, const Tensor& src_feats,
                                  const Tensor& dst_coords, const Tensor* skip_feats = nullptr) {
    InterpPlan plan = interpolation_plan(src_coords, dst_coords);
    Tensor up = interpolate_features(plan, src_feats);
    if (skip_feats && !skip_feats->empty()) return concat_last({&up, skip_feats});
    return up;
}

// ---------------------------------------------------------------------------
// Adam with a stepped learning-rate schedule:
// lr(epoch) = initial * decay^floor(epoch / decay_every).
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double initial_lr = 0.001;
    double decay_factor = 0.7;
    std::size_t decay_every = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline double scheduled_lr(const OptimizerConfig& cfg, std::size_t epoch) {
    return cfg.initial_lr * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

struct AdamState {
    Tensor m;
    Tensor v;
};

class Adam {
public:
    explicit Adam(OptimizerConfig cfg = {}) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }
    void set_epoch(std::size_t epoch) { epoch_ = epoch; }
    double learning_rate() const { return scheduled_lr(cfg_, epoch_); }

    void step(std::vector<Parameter*>& params) {
        ++t_;
        const double lr = learning_rate();
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (Parameter* p : params) {
            AdamState& s = state_[p->name];
            if (s.m.empty()) {
                s.m = Tensor::zeros(p->value.shape());
                s.v = Tensor::zeros(p->value.shape());
            }
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad[i];
                if (!std::isfinite(g))
                    throw StateError("non-finite gradient in parameter '" + p->name + "'");
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::size_t epoch_ = 0;
    std::uint64_t t_ = 0;
    std::map<std::string, AdamState> state_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: magic "RPNT", version u32, parameter count u64, then per
// parameter: name length u64, name bytes, rank u64, extents u64 each, raw
// little-endian f64 data. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& is) {
    std::uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'R', 'P', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u64(os, params.size());
    for (const Parameter* p : params) {
        detail::write_u64(os, p->name.size());
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_u64(os, p->value.rank());
        for (std::size_t d = 0; d < p->value.rank(); ++d) detail::write_u64(os, p->value.extent(d));
        for (std::size_t i = 0; i < p->value.size(); ++i) detail::write_f64(os, p->value[i]);
    }
    if (!os) throw IoError("write failure on checkpoint: " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("bad checkpoint magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t count = detail::read_u64(is);
    std::map<std::string, Tensor> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = detail::read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw IoError("unexpected end of file");
        const std::uint64_t rank = detail::read_u64(is);
        Shape shape(rank);
        for (std::uint64_t d = 0; d < rank; ++d) shape[d] = detail::read_u64(is);
        Tensor t(shape);
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = detail::read_f64(is);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// Assign checkpoint tensors into live parameters by name; every parameter
// must be present with a matching shape.
inline void restore_parameters(const std::map<std::string, Tensor>& ckpt,
                               std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        auto it = ckpt.find(p->name);
        if (it == ckpt.end()) throw ConfigError("checkpoint missing parameter '" + p->name + "'");
        if (!(it->second.shape() == p->value.shape()))
            throw ConfigError("checkpoint shape mismatch for '" + p->name + "': " +
                              shape_str(it->second.shape()) + " vs " + shape_str(p->value.shape()));
        p->value = it->second;
    }
}

}  // namespace rpnet
