#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

namespace rpnet {

// A differentiable operation under test: forward maps inputs to one output,
// backward maps (inputs, output gradient) to one gradient per input.
struct DiffOp {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> sample_inputs;
    std::function<Tensor(const std::vector<Tensor>&)> forward;
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> backward;
    // FD safety predicate: false when any sampled point sits too close to a
    // kink (relu zero, max tie) for the given step. The checker resamples.
    std::function<bool(const std::vector<Tensor>&, double step)> smooth_at;
};

struct GradCheckReport {
    std::string op;
    bool pass = false;
    double max_rel_error = 0.0;
    std::size_t resamples = 0;
    std::string detail;
};

// Central finite differences on the scalar loss sum(seed * forward(x)).
// Relative error per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport gradient_check(const DiffOp& op, Rng& rng, double step = 1e-3,
                                      double tol = 1e-4) {
    GradCheckReport report;
    report.op = op.name;

    std::vector<Tensor> inputs;
    constexpr std::size_t kMaxResample = 256;
    for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == kMaxResample) {
            report.detail = "could not sample a smooth point in " + std::to_string(kMaxResample) +
                            " attempts";
            return report;
        }
        inputs = op.sample_inputs(rng);
        if (!op.smooth_at || op.smooth_at(inputs, step)) break;
        ++report.resamples;
    }

    Tensor y = op.forward(inputs);
    if (!y.all_finite()) {
        report.detail = "non-finite forward output";
        return report;
    }

    Tensor seed(y.shape());
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = rng.uniform(-1.0, 1.0);

    const std::vector<Tensor> analytic = op.backward(inputs, seed);
    if (analytic.size() != inputs.size()) {
        report.detail = "backward returned " + std::to_string(analytic.size()) + " gradients for " +
                        std::to_string(inputs.size()) + " inputs";
        return report;
    }

    auto loss = [&](const std::vector<Tensor>& x) { return dot(seed, op.forward(x)); };

    double max_rel = 0.0;
    std::string worst;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!analytic[t].same_shape(inputs[t])) {
            report.detail = "gradient shape mismatch on input " + std::to_string(t);
            return report;
        }
        std::vector<Tensor> probe = inputs;
        for (std::size_t c = 0; c < inputs[t].size(); ++c) {
            const double saved = probe[t][c];
            probe[t][c] = saved + step;
            const double up = loss(probe);
            probe[t][c] = saved - step;
            const double down = loss(probe);
            probe[t][c] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                report.detail = "non-finite perturbed output at input " + std::to_string(t) +
                                " coord " + std::to_string(c);
                return report;
            }
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[t][c];
            const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > max_rel) {
                max_rel = rel;
                std::ostringstream os;
                os << "input " << t << " coord " << c << ": analytic " << a << " numeric " << numeric;
                worst = os.str();
            }
        }
    }

    report.max_rel_error = max_rel;
    report.pass = max_rel <= tol;
    report.detail = worst;
    return report;
}

// ---------------------------------------------------------------------------
// Helpers shared by the registered checks.
// ---------------------------------------------------------------------------

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline bool away_from_zero(const Tensor& t, double margin) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::abs(t[i]) < margin) return false;
    return true;
}

// Along-axis top-1 vs top-2 gap, for max-reduction FD safety.
inline bool max_gap_at_least(const Tensor& x, std::size_t axis, double margin) {
    AxisSplit s = split_axis(x.shape(), axis);
    if (s.extent < 2) return true;
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            double best = -1e300, second = -1e300;
            for (std::size_t e = 0; e < s.extent; ++e) {
                double v = x[(o * s.extent + e) * s.inner + in];
                if (v > best) {
                    second = best;
                    best = v;
                } else if (v > second) {
                    second = v;
                }
            }
            if (best - second < margin) return false;
        }
    return true;
}

// Every differentiable primitive in the library, with samplers and FD-safety
// predicates. cmd gradcheck's "primitives" scope walks this list.
inline std::vector<DiffOp> primitive_diffops() {
    std::vector<DiffOp> ops;

    ops.push_back(DiffOp{
        "matmul",
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor(rng, {4, 3}), random_tensor(rng, {3, 5})};
        },
        [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            Tensor da(in[0].shape()), db(in[1].shape());
            matmul_backward(in[0], in[1], dy, &da, &db);
            return std::vector<Tensor>{da, db};
        },
        nullptr});

    ops.push_back(DiffOp{
        "add",
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
        },
        [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            (void)in;
            return std::vector<Tensor>{dy, dy};
        },
        nullptr});

    ops.push_back(DiffOp{
        "sub",
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
        },
        [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            (void)in;
            return std::vector<Tensor>{dy, scale(dy, -1.0)};
        },
        nullptr});

    ops.push_back(DiffOp{
        "mul",
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
        },
        [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            return std::vector<Tensor>{mul(dy, in[1]), mul(dy, in[0])};
        },
        nullptr});

    ops.push_back(DiffOp{
        "scale",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {2, 5})}; },
        [](const std::vector<Tensor>& in) { return scale(in[0], 1.75); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            (void)in;
            return std::vector<Tensor>{scale(dy, 1.75)};
        },
        nullptr});

    ops.push_back(DiffOp{
        "relu",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {4, 6})}; },
        [](const std::vector<Tensor>& in) { return relu(in[0]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            return std::vector<Tensor>{relu_backward(in[0], dy)};
        },
        [](const std::vector<Tensor>& in, double step) { return away_from_zero(in[0], 20.0 * step); }});

    ops.push_back(DiffOp{
        "add_bias",
        [](Rng& rng) {
            return std::vector<Tensor>{random_tensor(rng, {5, 3}), random_tensor(rng, {3})};
        },
        [](const std::vector<Tensor>& in) { return add_bias(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            return std::vector<Tensor>{dy, add_bias_backward(dy, in[1].extent(0))};
        },
        nullptr});

    ops.push_back(DiffOp{
        "reduce_max",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {3, 7, 2})}; },
        [](const std::vector<Tensor>& in) { return reduce_max(in[0], 1).values; },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            MaxReduce r = reduce_max(in[0], 1);
            return std::vector<Tensor>{reduce_max_backward(dy, in[0].shape(), 1, r.argmax)};
        },
        [](const std::vector<Tensor>& in, double step) { return max_gap_at_least(in[0], 1, 20.0 * step); }});

    ops.push_back(DiffOp{
        "reduce_mean",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {3, 7, 2})}; },
        [](const std::vector<Tensor>& in) { return reduce_mean(in[0], 1); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            return std::vector<Tensor>{reduce_mean_backward(dy, in[0].shape(), 1)};
        },
        nullptr});

    ops.push_back(DiffOp{
        "reduce_sum",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {3, 7, 2})}; },
        [](const std::vector<Tensor>& in) { return reduce_sum(in[0], 1); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            return std::vector<Tensor>{reduce_sum_backward(dy, in[0].shape(), 1)};
        },
        nullptr});

    ops.push_back(DiffOp{
        "gather",
        [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {6, 4})}; },
        [](const std::vector<Tensor>& in) {
            IndexArray idx({3, 2}, {0, 5, 2, 2, 1, 4});
            return gather_rows(in[0], idx);
        },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            IndexArray idx({3, 2}, {0, 5, 2, 2, 1, 4});
            return std::vector<Tensor>{scatter_add_rows(dy, idx, in[0].extent(0))};
        },
        nullptr});

    return ops;
}

}  // namespace rpnet
