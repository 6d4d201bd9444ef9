#include "thermoformer/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "thermoformer/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace thermoformer::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

struct Tensor::Impl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty = absent
    bool requires_grad = false;
};

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
    if (product(shape) != data.size())
        throw config_error("tensor shape " + format_shape(shape) + " does not match data length " +
                           std::to_string(data.size()));
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
    return t;
}

const std::vector<std::size_t>& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }

double Tensor::value() const {
    if (numel() != 1)
        throw config_error("value() requires a scalar tensor, got " + format_shape(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty())
        throw config_error("tensor has no gradient (backward not run or tensor detached)");
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != impl_->data.size())
        throw config_error("gradient length mismatch: " + std::to_string(g.size()) + " vs " +
                           std::to_string(impl_->data.size()));
    auto& dst = grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool Tensor::all_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::clone() const {
    Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
    return t;
}

void Tensor::write(std::ostream& out) const {
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<std::uint32_t>(rank()));
    for (std::size_t d : impl_->shape) put_u32(static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(impl_->data.data()),
              static_cast<std::streamsize>(impl_->data.size() * sizeof(double)));
    if (!out) throw data_error("tensor write failed");
}

Tensor Tensor::read(std::istream& in) {
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw data_error("tensor read: truncated header");
        return v;
    };
    std::uint32_t rank = get_u32();
    if (rank > 16) throw data_error("tensor read: implausible rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = get_u32();
        n *= d;
        if (n > (std::size_t{1} << 32)) throw data_error("tensor read: implausible element count");
    }
    std::vector<double> data(n);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw data_error("tensor read: truncated data");
    return Tensor(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Graph ops
// ---------------------------------------------------------------------------

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double aip = a[i * k + p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m x k] += a[m x n] * b^T where b is [k x n]
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            c[i * k + p] += acc;
        }
    }
}

// c[k x n] += a^T * b where a is [m x k], b is [m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double aip = a[i * k + p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

bool is_suffix(const std::vector<std::size_t>& small, const std::vector<std::size_t>& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Splits a shape at `axis` into (outer, len, inner) extents for strided walks.
struct AxisView {
    std::size_t outer, len, inner;
};

AxisView axis_view(const std::vector<std::size_t>& shape, std::size_t axis) {
    AxisView v{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

void check_broadcastable(const char* op, const Tensor& a, const Tensor& b) {
    if (!is_suffix(b.shape(), a.shape()) && !is_suffix(a.shape(), b.shape()) && !a.is_scalar() &&
        !b.is_scalar())
        throw config_error(std::string(op) + ": incompatible shapes " + format_shape(a.shape()) +
                           " vs " + format_shape(b.shape()));
}

// The operand whose shape the other one tiles over (= result shape).
const Tensor& bigger_of(const Tensor& a, const Tensor& b) {
    if (is_suffix(b.shape(), a.shape())) return a;
    if (is_suffix(a.shape(), b.shape())) return b;
    return b.is_scalar() ? a : b;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor Graph::record(Tensor out, bool needs_grad, std::function<void()> back) {
    bool active = needs_grad && recording_;
    out.set_requires_grad(active);
    if (active) nodes_.push_back({out, std::move(back)});
    return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    check_broadcastable("add", a, b);
    const Tensor& big = bigger_of(a, b);
    std::size_t bn = big.numel(), an = a.numel(), cn = b.numel();
    Tensor out = Tensor::zeros(big.shape());
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* po = out.data().data();
        for (std::size_t i = 0; i < bn; ++i) po[i] = pa[i % an] + pb[i % cn];
    }
    bool needs = a.requires_grad() || b.requires_grad();
    return record(out, needs, [a = a, b = b, out, bn, an, cn]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < bn; ++i) ga[i % an] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < bn; ++i) gb[i % cn] += g[i];
        }
    });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    check_broadcastable("sub", a, b);
    const Tensor& big = bigger_of(a, b);
    std::size_t bn = big.numel(), an = a.numel(), cn = b.numel();
    Tensor out = Tensor::zeros(big.shape());
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* po = out.data().data();
        for (std::size_t i = 0; i < bn; ++i) po[i] = pa[i % an] - pb[i % cn];
    }
    bool needs = a.requires_grad() || b.requires_grad();
    return record(out, needs, [a = a, b = b, out, bn, an, cn]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < bn; ++i) ga[i % an] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < bn; ++i) gb[i % cn] -= g[i];
        }
    });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    check_broadcastable("mul", a, b);
    const Tensor& big = bigger_of(a, b);
    std::size_t bn = big.numel(), an = a.numel(), cn = b.numel();
    Tensor out = Tensor::zeros(big.shape());
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* po = out.data().data();
        for (std::size_t i = 0; i < bn; ++i) po[i] = pa[i % an] * pb[i % cn];
    }
    bool needs = a.requires_grad() || b.requires_grad();
    return record(out, needs, [a = a, b = b, out, bn, an, cn]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            const double* pb = b.data().data();
            for (std::size_t i = 0; i < bn; ++i) ga[i % an] += g[i] * pb[i % cn];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            const double* pa = a.data().data();
            for (std::size_t i = 0; i < bn; ++i) gb[i % cn] += g[i] * pa[i % an];
        }
    });
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw config_error("matmul: incompatible shapes " + format_shape(a.shape()) + " vs " +
                           format_shape(b.shape()));
    std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    bool needs = a.requires_grad() || b.requires_grad();
    return record(out, needs, [a = a, b = b, out, m, k, n]() mutable {
        const double* g = out.grad().data();
        if (a.requires_grad()) gemm_nt(g, b.data().data(), a.grad().data(), m, n, k);
        if (b.requires_grad()) gemm_tn(a.data().data(), g, b.grad().data(), m, k, n);
    });
}

Tensor Graph::softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw config_error("softmax: axis " + std::to_string(axis) + " out of range for " +
                           format_shape(x.shape()));
    AxisView v = axis_view(x.shape(), axis);
    if (v.len == 0) throw config_error("softmax: empty axis");
    Tensor out = Tensor::zeros(x.shape());
    {
        const double* px = x.data().data();
        double* po = out.data().data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                std::size_t base = o * v.len * v.inner + in;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < v.len; ++j) mx = std::max(mx, px[base + j * v.inner]);
                double denom = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) {
                    double e = std::exp(px[base + j * v.inner] - mx);
                    po[base + j * v.inner] = e;
                    denom += e;
                }
                for (std::size_t j = 0; j < v.len; ++j) po[base + j * v.inner] /= denom;
            }
        }
    }
    return record(out, x.requires_grad(), [x = x, out, v]() mutable {
        const auto& g = out.grad();
        const auto& y = out.data();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                std::size_t base = o * v.len * v.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = base + j * v.inner;
                    dot += g[idx] * y[idx];
                }
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = base + j * v.inner;
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw config_error("layer_norm: eps must be positive");
    std::size_t c = x.shape().back();
    if (gain.numel() != c || bias.numel() != c)
        throw config_error("layer_norm: gain/bias length must match last axis (" +
                           std::to_string(c) + "), got " + std::to_string(gain.numel()) + "/" +
                           std::to_string(bias.numel()));
    std::size_t rows = x.numel() / c;
    Tensor out = Tensor::zeros(x.shape());
    // Normalized values and inverse std are needed again in backward.
    auto norm = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    {
        const double* px = x.data().data();
        const double* pg = gain.data().data();
        const double* pb = bias.data().data();
        double* po = out.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = px + r * c;
            double mean = 0.0;
            for (std::size_t j = 0; j < c; ++j) mean += row[j];
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                double d = row[j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(c);
            double inv = 1.0 / std::sqrt(var + eps);
            (*inv_std)[r] = inv;
            for (std::size_t j = 0; j < c; ++j) {
                double nv = (row[j] - mean) * inv;
                (*norm)[r * c + j] = nv;
                po[r * c + j] = nv * pg[j] + pb[j];
            }
        }
    }
    bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    return record(out, needs, [x = x, gain = gain, bias = bias, out, norm, inv_std, rows, c]() mutable {
        const auto& g = out.grad();
        if (gain.requires_grad()) {
            auto& gg = gain.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*norm)[r * c + j];
        }
        if (bias.requires_grad()) {
            auto& gb = bias.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
        if (x.requires_grad()) {
            auto& gx = x.grad();
            const double* pg = gain.data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_gh = 0.0, mean_ghy = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    double gh = g[r * c + j] * pg[j];
                    mean_gh += gh;
                    mean_ghy += gh * (*norm)[r * c + j];
                }
                mean_gh /= static_cast<double>(c);
                mean_ghy /= static_cast<double>(c);
                double inv = (*inv_std)[r];
                for (std::size_t j = 0; j < c; ++j) {
                    double gh = g[r * c + j] * pg[j];
                    gx[r * c + j] += inv * (gh - mean_gh - (*norm)[r * c + j] * mean_ghy);
                }
            }
        }
    });
}

Tensor Graph::relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::max(0.0, x.data()[i]);
    return record(out, x.requires_grad(), [x = x, out, n]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < n; ++i)
            if (x.data()[i] > 0.0) gx[i] += g[i];
    });
}

Tensor Graph::gelu(const Tensor& x) {
    std::size_t n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double v = x.data()[i];
        double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        out.data()[i] = 0.5 * v * (1.0 + t);
    }
    return record(out, x.requires_grad(), [x = x, out, n]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) {
            double v = x.data()[i];
            double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
    });
}

Tensor Graph::concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw config_error("concat: no inputs");
    const auto ref = parts.front().shape();
    if (axis >= ref.size()) throw config_error("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size())
            throw config_error("concat: rank mismatch " + format_shape(p.shape()) + " vs " +
                               format_shape(ref));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && p.shape()[i] != ref[i])
                throw config_error("concat: shape mismatch " + format_shape(p.shape()) + " vs " +
                                   format_shape(ref));
        total += p.shape()[axis];
    }
    std::vector<std::size_t> out_shape = ref;
    out_shape[axis] = total;
    Tensor out = Tensor::zeros(out_shape);
    AxisView ov = axis_view(out_shape, axis);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t plen = p.shape()[axis];
        const double* src = p.data().data();
        double* dst = out.data().data();
        for (std::size_t o = 0; o < ov.outer; ++o)
            std::memcpy(dst + (o * ov.len + off) * ov.inner, src + o * plen * ov.inner,
                        plen * ov.inner * sizeof(double));
        off += plen;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    return record(out, needs, [parts = parts, out, ov, axis]() mutable {
        const auto& g = out.grad();
        std::size_t off = 0;
        for (auto& p : parts) {
            std::size_t plen = p.shape()[axis];
            if (p.requires_grad()) {
                auto& gp = p.grad();
                for (std::size_t o = 0; o < ov.outer; ++o) {
                    const double* src = g.data() + (o * ov.len + off) * ov.inner;
                    double* dst = gp.data() + o * plen * ov.inner;
                    for (std::size_t i = 0; i < plen * ov.inner; ++i) dst[i] += src[i];
                }
            }
            off += plen;
        }
    });
}

Tensor Graph::slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank()) throw config_error("slice: axis out of range");
    if (begin >= end || end > x.shape()[axis])
        throw config_error("slice: bad range [" + std::to_string(begin) + ", " +
                           std::to_string(end) + ") on axis of size " +
                           std::to_string(x.shape()[axis]));
    AxisView v = axis_view(x.shape(), axis);
    std::size_t len = end - begin;
    std::vector<std::size_t> out_shape = x.shape();
    out_shape[axis] = len;
    Tensor out = Tensor::zeros(out_shape);
    {
        const double* src = x.data().data();
        double* dst = out.data().data();
        for (std::size_t o = 0; o < v.outer; ++o)
            std::memcpy(dst + o * len * v.inner, src + (o * v.len + begin) * v.inner,
                        len * v.inner * sizeof(double));
    }
    return record(out, x.requires_grad(), [x = x, out, v, begin, len]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < v.outer; ++o) {
            const double* src = g.data() + o * len * v.inner;
            double* dst = gx.data() + (o * v.len + begin) * v.inner;
            for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor Graph::reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (product(shape) != x.numel())
        throw config_error("reshape: " + format_shape(x.shape()) + " to " + format_shape(shape) +
                           " changes element count");
    Tensor out(shape, x.data());
    return record(out, x.requires_grad(), [x = x, out]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Tensor Graph::transpose(const Tensor& x) {
    if (x.rank() != 2)
        throw config_error("transpose: expected rank 2, got " + format_shape(x.shape()));
    std::size_t m = x.shape()[0], n = x.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
    return record(out, x.requires_grad(), [x = x, out, m, n]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
}

Tensor Graph::sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    return record(out, x.requires_grad(), [x = x, out]() mutable {
        double g = out.grad()[0];
        auto& gx = x.grad();
        for (auto& v : gx) v += g;
    });
}

Tensor Graph::mean(const Tensor& x) {
    if (x.numel() == 0) throw config_error("mean: empty tensor");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out = Tensor::scalar(acc * inv);
    return record(out, x.requires_grad(), [x = x, out, inv]() mutable {
        double g = out.grad()[0] * inv;
        auto& gx = x.grad();
        for (auto& v : gx) v += g;
    });
}

Tensor Graph::broadcast(const Tensor& x, std::vector<std::size_t> target_shape) {
    if (!x.is_scalar() && !is_suffix(x.shape(), target_shape))
        throw config_error("broadcast: " + format_shape(x.shape()) +
                           " is not a trailing shape of " + format_shape(target_shape));
    std::size_t tn = product(target_shape);
    std::size_t sn = x.numel();
    Tensor out = Tensor::zeros(target_shape);
    for (std::size_t i = 0; i < tn; ++i) out.data()[i] = x.data()[i % sn];
    return record(out, x.requires_grad(), [x = x, out, tn, sn]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < tn; ++i) gx[i % sn] += g[i];
    });
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw config_error("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw config_error("backward: loss is not attached to the tape");
    Tensor seed = loss;  // handle copy; shares storage
    seed.accumulate_grad({1.0});
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out.has_grad()) it->back();
    }
}

double gradient_check(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                      double h) {
    if (!(h > 0.0) || h > 1e-2) throw config_error("gradient_check: h must be in (0, 1e-2]");
    Tensor probe = x.clone();
    probe.set_requires_grad(true);

    Graph g;
    Tensor y = f(g, probe);
    if (y.numel() != 1) throw config_error("gradient_check: function must be scalar-valued");
    g.backward(y);
    std::vector<double> analytic(probe.numel(), 0.0);
    if (probe.has_grad()) analytic = probe.grad();

    auto eval = [&]() {
        Graph ng(false);
        Tensor out = f(ng, probe);
        return out.value();
    };

    double max_err = 0.0;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        double saved = probe.data()[i];
        probe.data()[i] = saved + h;
        double fp = eval();
        probe.data()[i] = saved - h;
        double fm = eval();
        probe.data()[i] = saved;
        double central = (fp - fm) / (2.0 * h);
        double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace thermoformer::ad
