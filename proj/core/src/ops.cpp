#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stonefuse/tensor.hpp"

namespace stonefuse {

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->defined()) throw std::invalid_argument("op: undefined tensor operand");
        if (t->tape() == nullptr) continue;
        if (tape == nullptr) tape = t->tape();
        else if (tape != t->tape()) throw std::runtime_error("op: operands recorded on different tapes");
    }
    return tape;
}

// Right-aligned numpy-style broadcast of two shapes.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;  // per out axis; 0 where broadcast
    std::vector<std::size_t> stride_b;
};

BroadcastPlan broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    BroadcastPlan plan;
    plan.out.resize(rank);
    std::vector<std::size_t> ea(rank, 1), eb(rank, 1);
    for (std::size_t i = 0; i < a.size(); ++i) ea[rank - a.size() + i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) eb[rank - b.size() + i] = b[i];
    for (std::size_t i = 0; i < rank; ++i) {
        if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " are not broadcast-compatible");
        }
        plan.out[i] = std::max(ea[i], eb[i]);
    }
    plan.stride_a.assign(rank, 0);
    plan.stride_b.assign(rank, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = rank; i-- > 0;) {
        plan.stride_a[i] = (ea[i] == 1) ? 0 : sa;
        plan.stride_b[i] = (eb[i] == 1) ? 0 : sb;
        sa *= ea[i];
        sb *= eb[i];
    }
    return plan;
}

// Walks every output index of a broadcast plan, handing the two input
// offsets to fn. Odometer-style, no div/mod in the loop.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
    const std::size_t rank = plan.out.size();
    const std::size_t total = shape_size(plan.out);
    if (rank == 0) {
        fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> coord(rank, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < total; ++i) {
        fn(i, oa, ob);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++coord[ax];
            oa += plan.stride_a[ax];
            ob += plan.stride_b[ax];
            if (coord[ax] < plan.out[ax]) break;
            oa -= plan.stride_a[ax] * plan.out[ax];
            ob -= plan.stride_b[ax] * plan.out[ax];
            coord[ax] = 0;
        }
    }
}

// Generic broadcast binary op. fwd(x, y) computes the output element;
// dfa/dfb give the local derivatives with respect to each operand.
template <class Fwd, class Dfa, class Dfb>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Dfa dfa, Dfb dfb) {
    Tape* tape = common_tape({&a, &b});
    auto plan = std::make_shared<BroadcastPlan>(broadcast_shapes(a.shape(), b.shape(), name));
    std::vector<double> out(shape_size(plan->out));
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for_each_broadcast(*plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
            out[i] = fwd(av[oa], bv[ob]);
        });
    }
    if (!tape) return Tensor(plan->out, std::move(out));
    return tape->record(plan->out, std::move(out), {&a, &b},
                        [a, b, plan, dfa, dfb](const std::vector<double>& g, Tape& t) {
                            const bool wa = t.wants_grad(a);
                            const bool wb = t.wants_grad(b);
                            if (!wa && !wb) return;
                            const auto& av = a.values();
                            const auto& bv = b.values();
                            std::vector<double>* da = wa ? &t.grad_buffer(a.node()) : nullptr;
                            std::vector<double>* db = wb ? &t.grad_buffer(b.node()) : nullptr;
                            for_each_broadcast(*plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                                if (da) (*da)[oa] += g[i] * dfa(av[oa], bv[ob]);
                                if (db) (*db)[ob] += g[i] * dfb(av[oa], bv[ob]);
                            });
                        });
}

// Elementwise unary op; df(x, y) is dy/dx given input and output values.
template <class Fwd, class Df>
Tensor unary_op(const Tensor& a, const char* /*name*/, Fwd fwd, Df df) {
    Tape* tape = common_tape({&a});
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    if (!tape) return Tensor(a.shape(), std::move(out));
    auto saved = std::make_shared<std::vector<double>>(std::move(out));
    return tape->record(a.shape(), saved, {&a}, [a, saved, df](const std::vector<double>& g, Tape& t) {
        if (!t.wants_grad(a)) return;
        auto& da = t.grad_buffer(a.node());
        const auto& av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * df(av[i], (*saved)[i]);
    });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    " tensor, got shape " + shape_str(t.shape()));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n], ikj order for contiguous inner loops.
void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void matmul_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void matmul_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            double* crow = c + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    Tape* tape = common_tape({&a, &b});
    std::vector<double> out(m * n, 0.0);
    matmul_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    if (!tape) return Tensor({m, n}, std::move(out));
    return tape->record({m, n}, std::move(out), {&a, &b},
                        [a, b, m, k, n](const std::vector<double>& g, Tape& t) {
                            if (t.wants_grad(a)) {
                                // dA = G * B^T
                                matmul_bt_acc(g.data(), b.values().data(),
                                              t.grad_buffer(a.node()).data(), m, n, k);
                            }
                            if (t.wants_grad(b)) {
                                // dB = A^T * G
                                matmul_at_acc(a.values().data(), g.data(),
                                              t.grad_buffer(b.node()).data(), m, k, n);
                            }
                        });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    Tape* tape = common_tape({&a});
    const auto& av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    if (!tape) return Tensor({n, m}, std::move(out));
    return tape->record({n, m}, std::move(out), {&a}, [a, m, n](const std::vector<double>& g, Tape& t) {
        if (!t.wants_grad(a)) return;
        auto& da = t.grad_buffer(a.node());
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) da[i * n + j] += g[j * m + i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double q = 0.044715;
    return unary_op(
        a, "gelu",
        [](double x) {
            const double u = c * (x + q * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(u));
        },
        [](double x, double) {
            const double u = c * (x + q * x * x * x);
            const double th = std::tanh(u);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * q * x * x);
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
    for (double v : a.values()) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
    }
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor pow(const Tensor& a, double exponent) {
    const bool int_exp = exponent == std::floor(exponent) && exponent >= 0.0;
    if (!int_exp) {
        for (double v : a.values()) {
            if (!(v > 0.0)) {
                throw std::domain_error("pow: non-positive base with non-integer exponent");
            }
        }
    }
    return unary_op(
        a, "pow", [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) {
            if (exponent == 0.0) return 0.0;
            return exponent * std::pow(x, exponent - 1.0);
        });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    return unary_op(
        a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(a.shape()));
    }
    const std::size_t len = a.shape()[axis];
    if (len == 0) throw std::invalid_argument("softmax: empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];

    Tape* tape = common_tape({&a});
    const auto& av = a.values();
    auto out = std::make_shared<std::vector<double>>(av.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = av[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, av[base + l * inner]);
            double denom = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const double e = std::exp(av[base + l * inner] - mx);
                (*out)[base + l * inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < len; ++l) (*out)[base + l * inner] /= denom;
        }
    }
    if (!tape) return Tensor(a.shape(), *out);
    return tape->record(a.shape(), out, {&a},
                        [a, out, outer, inner, len](const std::vector<double>& g, Tape& t) {
                            if (!t.wants_grad(a)) return;
                            auto& da = t.grad_buffer(a.node());
                            for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const std::size_t base = o * len * inner + in;
                                    double dot = 0.0;
                                    for (std::size_t l = 0; l < len; ++l) {
                                        const std::size_t idx = base + l * inner;
                                        dot += g[idx] * (*out)[idx];
                                    }
                                    for (std::size_t l = 0; l < len; ++l) {
                                        const std::size_t idx = base + l * inner;
                                        da[idx] += (*out)[idx] * (g[idx] - dot);
                                    }
                                }
                            }
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    const std::size_t width = x.shape().back();
    if (width < 1) throw std::invalid_argument("layer_norm: empty last axis");
    if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
        throw std::invalid_argument("layer_norm: gain/bias must have shape [" + std::to_string(width) +
                                    "], got " + shape_str(gain.shape()) + " and " +
                                    shape_str(bias.shape()));
    }
    const std::size_t rows = x.size() / width;
    Tape* tape = common_tape({&x, &gain, &bias});
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(x.size());
    auto mean_v = std::make_shared<std::vector<double>>(rows);
    auto inv_v = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * width;
        double m = 0.0;
        for (std::size_t j = 0; j < width; ++j) m += row[j];
        m /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = row[j] - m;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*mean_v)[r] = m;
        (*inv_v)[r] = inv;
        for (std::size_t j = 0; j < width; ++j) {
            out[r * width + j] = (row[j] - m) * inv * gv[j] + bv[j];
        }
    }
    if (!tape) return Tensor(x.shape(), std::move(out));
    return tape->record(
        x.shape(), std::move(out), {&x, &gain, &bias},
        [x, gain, bias, mean_v, inv_v, rows, width](const std::vector<double>& g, Tape& t) {
            const auto& xv = x.values();
            const auto& gv = gain.values();
            const bool wx = t.wants_grad(x);
            const bool wg = t.wants_grad(gain);
            const bool wb = t.wants_grad(bias);
            std::vector<double>* dx = wx ? &t.grad_buffer(x.node()) : nullptr;
            std::vector<double>* dg = wg ? &t.grad_buffer(gain.node()) : nullptr;
            std::vector<double>* db = wb ? &t.grad_buffer(bias.node()) : nullptr;
            const double w = static_cast<double>(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const double m = (*mean_v)[r];
                const double inv = (*inv_v)[r];
                const double* row = xv.data() + r * width;
                const double* grow = g.data() + r * width;
                double sum1 = 0.0, sum2 = 0.0;
                for (std::size_t j = 0; j < width; ++j) {
                    const double xhat = (row[j] - m) * inv;
                    const double dxhat = grow[j] * gv[j];
                    sum1 += dxhat;
                    sum2 += dxhat * xhat;
                    if (dg) (*dg)[j] += grow[j] * xhat;
                    if (db) (*db)[j] += grow[j];
                }
                if (dx) {
                    for (std::size_t j = 0; j < width; ++j) {
                        const double xhat = (row[j] - m) * inv;
                        const double dxhat = grow[j] * gv[j];
                        (*dx)[r * width + j] += inv * (dxhat - sum1 / w - xhat * sum2 / w);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions (fixed left-to-right accumulation for determinism)
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    Tape* tape = common_tape({&a});
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    if (!tape) return Tensor::scalar(acc);
    return tape->record(Shape{}, std::vector<double>{acc}, {&a},
                        [a](const std::vector<double>& g, Tape& t) {
                            if (!t.wants_grad(a)) return;
                            auto& da = t.grad_buffer(a.node());
                            for (double& d : da) d += g[0];
                        });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.size());
    return scale(sum(a), 1.0 / n);
}

Tensor sum(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) throw std::invalid_argument("sum: axis out of range");
    const std::size_t len = a.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);

    Tape* tape = common_tape({&a});
    const auto& av = a.values();
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t in = 0; in < inner; ++in)
                out[o * inner + in] += av[(o * len + l) * inner + in];
    if (!tape) return Tensor(out_shape, std::move(out));
    return tape->record(out_shape, std::move(out), {&a},
                        [a, outer, inner, len](const std::vector<double>& g, Tape& t) {
                            if (!t.wants_grad(a)) return;
                            auto& da = t.grad_buffer(a.node());
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t l = 0; l < len; ++l)
                                    for (std::size_t in = 0; in < inner; ++in)
                                        da[(o * len + l) * inner + in] += g[o * inner + in];
                        });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) throw std::invalid_argument("mean: axis out of range");
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw std::invalid_argument("concat: axis out of range");
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && p.shape()[i] != first[i]) {
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) +
                                            " vs " + shape_str(first));
            }
        }
        axis_total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        Tape* pt = common_tape({&p});
        if (pt) {
            if (tape && tape != pt) throw std::runtime_error("concat: operands on different tapes");
            tape = pt;
        }
    }

    std::vector<double> out(shape_size(out_shape));
    std::size_t axis_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t plen = p.shape()[axis];
        const auto& pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = pv.data() + o * plen * inner;
            double* dst = out.data() + (o * axis_total + axis_off) * inner;
            std::copy(src, src + plen * inner, dst);
        }
        axis_off += plen;
    }
    if (!tape) return Tensor(out_shape, std::move(out));
    auto parts_copy = std::make_shared<std::vector<Tensor>>(parts);
    return tape->record(out_shape, std::move(out), ptrs,
                        [parts_copy, outer, inner, axis_total, axis](const std::vector<double>& g,
                                                                     Tape& t) {
                            std::size_t axis_off = 0;
                            for (const Tensor& p : *parts_copy) {
                                const std::size_t plen = p.shape()[axis];
                                if (t.wants_grad(p)) {
                                    auto& dp = t.grad_buffer(p.node());
                                    for (std::size_t o = 0; o < outer; ++o) {
                                        const double* src = g.data() + (o * axis_total + axis_off) * inner;
                                        double* dst = dp.data() + o * plen * inner;
                                        for (std::size_t i = 0; i < plen * inner; ++i) dst[i] += src[i];
                                    }
                                }
                                axis_off += plen;
                            }
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw std::invalid_argument("reshape: size mismatch, " + shape_str(a.shape()) + " to " +
                                    shape_str(shape));
    }
    Tape* tape = common_tape({&a});
    std::vector<double> out = a.values();
    if (!tape) return Tensor(std::move(shape), std::move(out));
    return tape->record(std::move(shape), std::move(out), {&a},
                        [a](const std::vector<double>& g, Tape& t) {
                            if (!t.wants_grad(a)) return;
                            auto& da = t.grad_buffer(a.node());
                            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                        });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t from, std::size_t to) {
    if (axis >= a.rank()) throw std::invalid_argument("slice: axis out of range");
    if (from >= to || to > a.shape()[axis]) throw std::invalid_argument("slice: bad range");
    const std::size_t len = a.shape()[axis];
    const std::size_t slen = to - from;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    Shape out_shape = a.shape();
    out_shape[axis] = slen;

    Tape* tape = common_tape({&a});
    const auto& av = a.values();
    std::vector<double> out(shape_size(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = av.data() + (o * len + from) * inner;
        std::copy(src, src + slen * inner, out.data() + o * slen * inner);
    }
    if (!tape) return Tensor(out_shape, std::move(out));
    return tape->record(out_shape, std::move(out), {&a},
                        [a, outer, inner, len, slen, from](const std::vector<double>& g, Tape& t) {
                            if (!t.wants_grad(a)) return;
                            auto& da = t.grad_buffer(a.node());
                            for (std::size_t o = 0; o < outer; ++o) {
                                const double* src = g.data() + o * slen * inner;
                                double* dst = da.data() + (o * len + from) * inner;
                                for (std::size_t i = 0; i < slen * inner; ++i) dst[i] += src[i];
                            }
                        });
}

// ---------------------------------------------------------------------------
// 3-D convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    std::size_t cin, cout, k, s, p;
    std::size_t in_d, in_h, in_w;
    std::size_t out_d, out_h, out_w;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
    require_rank(x, 4, "conv3d");
    require_rank(kernels, 5, "conv3d");
    ConvDims d{};
    d.cout = kernels.shape()[0];
    d.cin = kernels.shape()[1];
    d.k = kernels.shape()[2];
    d.s = stride;
    d.p = padding;
    if (kernels.shape()[3] != d.k || kernels.shape()[4] != d.k) {
        throw std::invalid_argument("conv3d: kernel must be cubic, got " + shape_str(kernels.shape()));
    }
    if (d.k % 2 == 0) throw std::invalid_argument("conv3d: kernel extent must be odd");
    if (x.shape()[0] != d.cin) {
        throw std::invalid_argument("conv3d: input channels " + std::to_string(x.shape()[0]) +
                                    " do not match kernel channels " + std::to_string(d.cin));
    }
    if (stride == 0) throw std::invalid_argument("conv3d: stride must be >= 1");
    d.in_d = x.shape()[1];
    d.in_h = x.shape()[2];
    d.in_w = x.shape()[3];
    auto out_extent = [&](std::size_t in) -> std::size_t {
        const long long num = static_cast<long long>(in) + 2 * static_cast<long long>(d.p) -
                              static_cast<long long>(d.k);
        if (num < 0) throw std::invalid_argument("conv3d: kernel larger than padded input");
        return static_cast<std::size_t>(num) / d.s + 1;
    };
    d.out_d = out_extent(d.in_d);
    d.out_h = out_extent(d.in_h);
    d.out_w = out_extent(d.in_w);
    return d;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
    const ConvDims d = conv_dims(x, kernels, stride, padding);
    Tape* tape = common_tape({&x, &kernels});
    const auto& xv = x.values();
    const auto& kv = kernels.values();
    std::vector<double> out(d.cout * d.out_d * d.out_h * d.out_w, 0.0);
    const std::size_t in_hw = d.in_h * d.in_w;
    const std::size_t in_chw = d.in_d * in_hw;
    const long long P = static_cast<long long>(d.p);

    for (std::size_t co = 0; co < d.cout; ++co) {
        double* oc = out.data() + co * d.out_d * d.out_h * d.out_w;
        for (std::size_t od = 0; od < d.out_d; ++od) {
            for (std::size_t oh = 0; oh < d.out_h; ++oh) {
                for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < d.cin; ++ci) {
                        const double* xc = xv.data() + ci * in_chw;
                        const double* kc = kv.data() + (co * d.cin + ci) * d.k * d.k * d.k;
                        for (std::size_t kd = 0; kd < d.k; ++kd) {
                            const long long id = static_cast<long long>(od * d.s + kd) - P;
                            if (id < 0 || id >= static_cast<long long>(d.in_d)) continue;
                            for (std::size_t kh = 0; kh < d.k; ++kh) {
                                const long long ih = static_cast<long long>(oh * d.s + kh) - P;
                                if (ih < 0 || ih >= static_cast<long long>(d.in_h)) continue;
                                const double* xrow = xc + id * in_hw + ih * d.in_w;
                                const double* krow = kc + (kd * d.k + kh) * d.k;
                                for (std::size_t kw = 0; kw < d.k; ++kw) {
                                    const long long iw = static_cast<long long>(ow * d.s + kw) - P;
                                    if (iw < 0 || iw >= static_cast<long long>(d.in_w)) continue;
                                    acc += krow[kw] * xrow[iw];
                                }
                            }
                        }
                    }
                    oc[(od * d.out_h + oh) * d.out_w + ow] = acc;
                }
            }
        }
    }
    Shape out_shape{d.cout, d.out_d, d.out_h, d.out_w};
    if (!tape) return Tensor(out_shape, std::move(out));
    return tape->record(
        out_shape, std::move(out), {&x, &kernels},
        [x, kernels, d](const std::vector<double>& g, Tape& t) {
            const auto& xv = x.values();
            const auto& kv = kernels.values();
            const bool wx = t.wants_grad(x);
            const bool wk = t.wants_grad(kernels);
            if (!wx && !wk) return;
            std::vector<double>* dx = wx ? &t.grad_buffer(x.node()) : nullptr;
            std::vector<double>* dk = wk ? &t.grad_buffer(kernels.node()) : nullptr;
            const std::size_t in_hw = d.in_h * d.in_w;
            const std::size_t in_chw = d.in_d * in_hw;
            const long long P = static_cast<long long>(d.p);
            for (std::size_t co = 0; co < d.cout; ++co) {
                const double* gc = g.data() + co * d.out_d * d.out_h * d.out_w;
                for (std::size_t od = 0; od < d.out_d; ++od) {
                    for (std::size_t oh = 0; oh < d.out_h; ++oh) {
                        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                            const double gv = gc[(od * d.out_h + oh) * d.out_w + ow];
                            if (gv == 0.0) continue;
                            for (std::size_t ci = 0; ci < d.cin; ++ci) {
                                const std::size_t kbase = (co * d.cin + ci) * d.k * d.k * d.k;
                                for (std::size_t kd = 0; kd < d.k; ++kd) {
                                    const long long id = static_cast<long long>(od * d.s + kd) - P;
                                    if (id < 0 || id >= static_cast<long long>(d.in_d)) continue;
                                    for (std::size_t kh = 0; kh < d.k; ++kh) {
                                        const long long ih = static_cast<long long>(oh * d.s + kh) - P;
                                        if (ih < 0 || ih >= static_cast<long long>(d.in_h)) continue;
                                        for (std::size_t kw = 0; kw < d.k; ++kw) {
                                            const long long iw =
                                                static_cast<long long>(ow * d.s + kw) - P;
                                            if (iw < 0 || iw >= static_cast<long long>(d.in_w)) continue;
                                            const std::size_t xi = ci * in_chw + id * in_hw +
                                                                   ih * d.in_w + iw;
                                            const std::size_t ki =
                                                kbase + (kd * d.k + kh) * d.k + kw;
                                            if (dx) (*dx)[xi] += gv * kv[ki];
                                            if (dk) (*dk)[ki] += gv * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

namespace {

struct ConvTDims {
    std::size_t cf, cg, k, s, p;
    std::size_t in_d, in_h, in_w;
    std::size_t out_d, out_h, out_w;
};

ConvTDims convt_dims(const Tensor& x, const Tensor& kernels, std::size_t stride,
                     std::size_t padding) {
    require_rank(x, 4, "conv_transpose3d");
    require_rank(kernels, 5, "conv_transpose3d");
    ConvTDims d{};
    d.cf = kernels.shape()[0];
    d.cg = kernels.shape()[1];
    d.k = kernels.shape()[2];
    d.s = stride;
    d.p = padding;
    if (kernels.shape()[3] != d.k || kernels.shape()[4] != d.k) {
        throw std::invalid_argument("conv_transpose3d: kernel must be cubic");
    }
    if (x.shape()[0] != d.cf) {
        throw std::invalid_argument("conv_transpose3d: input channels " +
                                    std::to_string(x.shape()[0]) + " do not match kernel channels " +
                                    std::to_string(d.cf));
    }
    if (stride == 0) throw std::invalid_argument("conv_transpose3d: stride must be >= 1");
    d.in_d = x.shape()[1];
    d.in_h = x.shape()[2];
    d.in_w = x.shape()[3];
    auto out_extent = [&](std::size_t in) -> std::size_t {
        const long long e = static_cast<long long>(d.s) * (static_cast<long long>(in) - 1) +
                            static_cast<long long>(d.k) - 2 * static_cast<long long>(d.p);
        if (e < 1) throw std::invalid_argument("conv_transpose3d: non-positive output extent");
        return static_cast<std::size_t>(e);
    };
    d.out_d = out_extent(d.in_d);
    d.out_h = out_extent(d.in_h);
    d.out_w = out_extent(d.in_w);
    return d;
}

}  // namespace

Tensor conv_transpose3d(const Tensor& x, const Tensor& kernels, std::size_t stride,
                        std::size_t padding) {
    const ConvTDims d = convt_dims(x, kernels, stride, padding);
    Tape* tape = common_tape({&x, &kernels});
    const auto& xv = x.values();
    const auto& kv = kernels.values();
    const std::size_t in_hw = d.in_h * d.in_w;
    const std::size_t in_chw = d.in_d * in_hw;
    const std::size_t out_hw = d.out_h * d.out_w;
    const std::size_t out_chw = d.out_d * out_hw;
    const long long P = static_cast<long long>(d.p);
    const long long S = static_cast<long long>(d.s);

    // Scatter form: out[cg, s*i + kappa - p] += K[cf, cg, kappa] * x[cf, i].
    std::vector<double> out(d.cg * out_chw, 0.0);
    for (std::size_t cf = 0; cf < d.cf; ++cf) {
        const double* xc = xv.data() + cf * in_chw;
        for (std::size_t cg = 0; cg < d.cg; ++cg) {
            const double* kc = kv.data() + (cf * d.cg + cg) * d.k * d.k * d.k;
            double* oc = out.data() + cg * out_chw;
            for (std::size_t id = 0; id < d.in_d; ++id) {
                for (std::size_t ih = 0; ih < d.in_h; ++ih) {
                    for (std::size_t iw = 0; iw < d.in_w; ++iw) {
                        const double xval = xc[(id * d.in_h + ih) * d.in_w + iw];
                        if (xval == 0.0) continue;
                        for (std::size_t kd = 0; kd < d.k; ++kd) {
                            const long long od = S * static_cast<long long>(id) +
                                                 static_cast<long long>(kd) - P;
                            if (od < 0 || od >= static_cast<long long>(d.out_d)) continue;
                            for (std::size_t kh = 0; kh < d.k; ++kh) {
                                const long long oh = S * static_cast<long long>(ih) +
                                                     static_cast<long long>(kh) - P;
                                if (oh < 0 || oh >= static_cast<long long>(d.out_h)) continue;
                                const double* krow = kc + (kd * d.k + kh) * d.k;
                                double* orow = oc + od * out_hw + oh * d.out_w;
                                for (std::size_t kw = 0; kw < d.k; ++kw) {
                                    const long long ow = S * static_cast<long long>(iw) +
                                                         static_cast<long long>(kw) - P;
                                    if (ow < 0 || ow >= static_cast<long long>(d.out_w)) continue;
                                    orow[ow] += krow[kw] * xval;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Shape out_shape{d.cg, d.out_d, d.out_h, d.out_w};
    if (!tape) return Tensor(out_shape, std::move(out));
    return tape->record(
        out_shape, std::move(out), {&x, &kernels},
        [x, kernels, d](const std::vector<double>& g, Tape& t) {
            const auto& xv = x.values();
            const auto& kv = kernels.values();
            const bool wx = t.wants_grad(x);
            const bool wk = t.wants_grad(kernels);
            if (!wx && !wk) return;
            std::vector<double>* dx = wx ? &t.grad_buffer(x.node()) : nullptr;
            std::vector<double>* dk = wk ? &t.grad_buffer(kernels.node()) : nullptr;
            const std::size_t in_hw = d.in_h * d.in_w;
            const std::size_t in_chw = d.in_d * in_hw;
            const std::size_t out_hw = d.out_h * d.out_w;
            const std::size_t out_chw = d.out_d * out_hw;
            const long long P = static_cast<long long>(d.p);
            const long long S = static_cast<long long>(d.s);
            for (std::size_t cf = 0; cf < d.cf; ++cf) {
                for (std::size_t cg = 0; cg < d.cg; ++cg) {
                    const double* kc = kv.data() + (cf * d.cg + cg) * d.k * d.k * d.k;
                    const double* gc = g.data() + cg * out_chw;
                    for (std::size_t id = 0; id < d.in_d; ++id) {
                        for (std::size_t ih = 0; ih < d.in_h; ++ih) {
                            for (std::size_t iw = 0; iw < d.in_w; ++iw) {
                                const std::size_t xi = cf * in_chw + (id * d.in_h + ih) * d.in_w + iw;
                                const double xval = xv[xi];
                                double acc = 0.0;
                                for (std::size_t kd = 0; kd < d.k; ++kd) {
                                    const long long od = S * static_cast<long long>(id) +
                                                         static_cast<long long>(kd) - P;
                                    if (od < 0 || od >= static_cast<long long>(d.out_d)) continue;
                                    for (std::size_t kh = 0; kh < d.k; ++kh) {
                                        const long long oh = S * static_cast<long long>(ih) +
                                                             static_cast<long long>(kh) - P;
                                        if (oh < 0 || oh >= static_cast<long long>(d.out_h)) continue;
                                        const double* krow = kc + (kd * d.k + kh) * d.k;
                                        const double* grow = gc + od * out_hw + oh * d.out_w;
                                        for (std::size_t kw = 0; kw < d.k; ++kw) {
                                            const long long ow = S * static_cast<long long>(iw) +
                                                                 static_cast<long long>(kw) - P;
                                            if (ow < 0 || ow >= static_cast<long long>(d.out_w))
                                                continue;
                                            const double gval = grow[ow];
                                            acc += krow[kw] * gval;
                                            if (dk)
                                                (*dk)[(cf * d.cg + cg) * d.k * d.k * d.k +
                                                      (kd * d.k + kh) * d.k + kw] += xval * gval;
                                        }
                                    }
                                }
                                if (dx) (*dx)[xi] += acc;
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace stonefuse
