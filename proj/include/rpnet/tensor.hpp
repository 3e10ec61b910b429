#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rpnet {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
    using Error::Error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};
class IndexError : public Error {
public:
    using Error::Error;
};
class CountError : public Error {
public:
    using Error::Error;
};
class EmptyGroupError : public Error {
public:
    using Error::Error;
};
class StateError : public Error {
public:
    using Error::Error;
};
class LabelError : public Error {
public:
    using Error::Error;
};
class IoError : public Error {
public:
    using Error::Error;
};
class ParseError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

// ---------------------------------------------------------------------------
// Multiply-accumulate counter used by the efficiency profiler. Disabled by
// default; forward passes report their cost through it when enabled.
// ---------------------------------------------------------------------------

struct MacCounter {
    inline static thread_local bool enabled = false;
    inline static thread_local std::uint64_t count = 0;

    static void reset() { count = 0; }
    static void add(std::uint64_t n) {
        if (enabled) count += n;
    }
    static std::uint64_t value() { return count; }
};

struct MacCounterScope {
    MacCounterScope() {
        MacCounter::enabled = true;
        MacCounter::reset();
    }
    ~MacCounterScope() { MacCounter::enabled = false; }
    std::uint64_t value() const { return MacCounter::value(); }
};

// ---------------------------------------------------------------------------
// Tensor: dense row-major 64-bit float array with explicit shape.
// ---------------------------------------------------------------------------

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_extents();
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

    static Tensor vector(std::initializer_list<double> v) {
        return Tensor({v.size()}, std::vector<double>(v));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged matrix initializer");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t d) const { return shape_.at(d); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& buffer() { return data_; }
    const std::vector<double>& buffer() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // In-place reinterpretation of the flat buffer; element count must match.
    void set_shape(Shape shape) {
        if (shape_numel(shape) != data_.size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        shape_ = std::move(shape);
    }

    Tensor reshaped(Shape shape) const {
        Tensor t = *this;
        t.set_shape(std::move(shape));
        return t;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    void check_extents() const {
        for (std::size_t e : shape_)
            if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

// Index arrays produced by sampling/grouping and consumed by gather.
struct IndexArray {
    Shape shape;
    std::vector<std::size_t> data;

    IndexArray() = default;
    IndexArray(Shape s, std::vector<std::size_t> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size()) throw ShapeError("index array shape/data mismatch");
    }

    std::size_t size() const { return data.size(); }
    std::size_t extent(std::size_t d) const { return shape.at(d); }
    std::size_t at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    std::size_t& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
};

// ---------------------------------------------------------------------------
// Trainable parameter: value plus an accumulated gradient of the same shape.
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

    void zero_grad() { std::fill(grad.buffer().begin(), grad.buffer().end(), 0.0); }
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Each forward has a hand-written backward;
// composite layers chain these pairs explicitly.
// ---------------------------------------------------------------------------

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor y({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* py = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        double* yrow = py + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
    MacCounter::add(static_cast<std::uint64_t>(m) * k * n);
    return y;
}

// dA += dY * B^T, dB += A^T * dY. Null destinations are skipped.
inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dy, Tensor* da, Tensor* db) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (dy.rank() != 2 || dy.extent(0) != m || dy.extent(1) != n)
        throw ShapeError("matmul_backward: bad dy shape " + shape_str(dy.shape()));
    if (da) {
        if (!da->same_shape(a)) throw ShapeError("matmul_backward: dA shape mismatch");
        double* pda = da->data();
        const double* pdy = dy.data();
        const double* pb = b.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                const double* dyrow = pdy + i * n;
                const double* brow = pb + kk * n;
                for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
                pda[i * k + kk] += acc;
            }
    }
    if (db) {
        if (!db->same_shape(b)) throw ShapeError("matmul_backward: dB shape mismatch");
        double* pdb = db->data();
        const double* pa = a.data();
        const double* pdy = dy.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa + i * k;
            const double* dyrow = pdy + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                double* dbrow = pdb + kk * n;
                for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dyrow[j];
            }
        }
    }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    MacCounter::add(y.size());
    return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
    MacCounter::add(y.size());
    return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
    MacCounter::add(y.size());
    return y;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
    MacCounter::add(y.size());
    return y;
}

// Subgradient at 0 is 0: gradient passes only where the input is strictly positive.
inline Tensor relu(const Tensor& a) {
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    MacCounter::add(y.size());
    return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    require_same_shape(x, dy, "relu_backward");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(x[i] > 0.0)) dx[i] = 0.0;
    return dx;
}

// Broadcast add of a [C] bias over the trailing dimension of x.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (b.rank() != 1 || x.rank() == 0 || x.extent(x.rank() - 1) != b.extent(0))
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                         shape_str(x.shape()));
    const std::size_t c = b.extent(0);
    const std::size_t rows = x.size() / c;
    Tensor y = x;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) y[r * c + j] += b[j];
    MacCounter::add(x.size());
    return y;
}

inline Tensor add_bias_backward(const Tensor& dy, std::size_t c) {
    Tensor db({c});
    const std::size_t rows = dy.size() / c;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
    return db;
}

// ---------------------------------------------------------------------------
// Reductions along one axis. Max reports argmax (first occurrence on ties)
// so its backward can route gradient to exactly one element per slot.
// ---------------------------------------------------------------------------

struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

inline Shape reduced_shape(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t d = 0; d < shape.size(); ++d)
        if (d != axis) out.push_back(shape[d]);
    if (out.empty()) out.push_back(1);
    return out;
}

struct MaxReduce {
    Tensor values;
    std::vector<std::size_t> argmax;  // along-axis index per output slot
};

inline MaxReduce reduce_max(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis);
    if (s.extent == 0) throw EmptyGroupError("reduce_max over empty axis");
    MaxReduce r{Tensor(reduced_shape(x.shape(), axis)), std::vector<std::size_t>(s.outer * s.inner, 0)};
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            double best = x[(o * s.extent) * s.inner + in];
            std::size_t bi = 0;
            for (std::size_t e = 1; e < s.extent; ++e) {
                double v = x[(o * s.extent + e) * s.inner + in];
                if (v > best) {
                    best = v;
                    bi = e;
                }
            }
            r.values[o * s.inner + in] = best;
            r.argmax[o * s.inner + in] = bi;
        }
    MacCounter::add(x.size());
    return r;
}

inline Tensor reduce_max_backward(const Tensor& dy, const Shape& x_shape, std::size_t axis,
                                  const std::vector<std::size_t>& argmax) {
    AxisSplit s = split_axis(x_shape, axis);
    Tensor dx(x_shape);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            std::size_t e = argmax[o * s.inner + in];
            dx[(o * s.extent + e) * s.inner + in] = dy[o * s.inner + in];
        }
    return dx;
}

inline Tensor reduce_sum(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis);
    if (s.extent == 0) throw EmptyGroupError("reduce_sum over empty axis");
    Tensor y(reduced_shape(x.shape(), axis));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
                y[o * s.inner + in] += x[(o * s.extent + e) * s.inner + in];
    MacCounter::add(x.size());
    return y;
}

inline Tensor reduce_sum_backward(const Tensor& dy, const Shape& x_shape, std::size_t axis) {
    AxisSplit s = split_axis(x_shape, axis);
    Tensor dx(x_shape);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
                dx[(o * s.extent + e) * s.inner + in] = dy[o * s.inner + in];
    return dx;
}

inline Tensor reduce_mean(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis);
    Tensor y = reduce_sum(x, axis);
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= inv;
    return y;
}

inline Tensor reduce_mean_backward(const Tensor& dy, const Shape& x_shape, std::size_t axis) {
    AxisSplit s = split_axis(x_shape, axis);
    Tensor dx = reduce_sum_backward(dy, x_shape, axis);
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= inv;
    return dx;
}

// ---------------------------------------------------------------------------
// Row gather / scatter-add. gather(x[N,C], idx[...]) -> [idx.shape..., C];
// the backward scatter-adds, so duplicated indices accumulate.
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& x, const IndexArray& idx) {
    if (x.rank() != 2) throw ShapeError("gather_rows: source must be rank 2, got " + shape_str(x.shape()));
    const std::size_t n = x.extent(0), c = x.extent(1);
    Shape out_shape = idx.shape;
    out_shape.push_back(c);
    Tensor y(out_shape);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::size_t src = idx.data[r];
        if (src >= n)
            throw IndexError("gather_rows: index " + std::to_string(src) + " out of range [0, " +
                             std::to_string(n) + ")");
        std::copy(x.data() + src * c, x.data() + (src + 1) * c, y.data() + r * c);
    }
    return y;
}

inline Tensor scatter_add_rows(const Tensor& dy, const IndexArray& idx, std::size_t n) {
    const std::size_t c = dy.extent(dy.rank() - 1);
    if (dy.size() != idx.size() * c) throw ShapeError("scatter_add_rows: dy/index mismatch");
    Tensor dx({n, c});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::size_t dst = idx.data[r];
        if (dst >= n)
            throw IndexError("scatter_add_rows: index " + std::to_string(dst) + " out of range [0, " +
                             std::to_string(n) + ")");
        for (std::size_t j = 0; j < c; ++j) dx[dst * c + j] += dy[r * c + j];
    }
    return dx;
}

// Concatenate along the trailing dimension; all leading extents must agree.
inline Tensor concat_last(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    Shape lead(parts[0]->shape().begin(), parts[0]->shape().end() - 1);
    std::size_t total_c = 0;
    for (const Tensor* p : parts) {
        Shape l(p->shape().begin(), p->shape().end() - 1);
        if (l != lead) throw ShapeError("concat_last: leading shape mismatch");
        total_c += p->extent(p->rank() - 1);
    }
    Shape out_shape = lead;
    out_shape.push_back(total_c);
    Tensor y(out_shape);
    const std::size_t rows = shape_numel(lead);
    std::size_t off = 0;
    for (const Tensor* p : parts) {
        const std::size_t c = p->extent(p->rank() - 1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(p->data() + r * c, p->data() + (r + 1) * c, y.data() + r * total_c + off);
        off += c;
    }
    return y;
}

inline std::vector<Tensor> split_last(const Tensor& y, const std::vector<std::size_t>& widths) {
    const std::size_t total_c = y.extent(y.rank() - 1);
    std::size_t sum = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
    if (sum != total_c) throw ShapeError("split_last: widths do not sum to trailing extent");
    Shape lead(y.shape().begin(), y.shape().end() - 1);
    const std::size_t rows = shape_numel(lead);
    std::vector<Tensor> parts;
    std::size_t off = 0;
    for (std::size_t c : widths) {
        Shape ps = lead;
        ps.push_back(c);
        Tensor p(ps);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(y.data() + r * total_c + off, y.data() + r * total_c + off + c, p.data() + r * c);
        parts.push_back(std::move(p));
        off += c;
    }
    return parts;
}

inline double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace rpnet
