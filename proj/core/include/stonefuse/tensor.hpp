#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace stonefuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Dense row-major f64 tensor. A Tensor is a cheap handle: copies share the
/// underlying buffer. When produced by an op on a live Tape it also carries
/// the node id used for gradient lookup after backward().
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    /// 1-D tensor from a list of values.
    static Tensor vector(std::vector<double> values);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    const std::vector<double>& values() const;
    std::vector<double>& values();

    /// Value of a single-element tensor.
    double value() const;
    double at(std::initializer_list<std::size_t> idx) const;

    /// Deep copy of the buffer, detached from any tape.
    Tensor clone() const;

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    bool requires_grad() const { return requires_grad_; }

private:
    Shape shape_{};
    std::shared_ptr<std::vector<double>> data_{};
    Tape* tape_ = nullptr;
    int node_ = -1;
    bool requires_grad_ = false;

    friend class Tape;
};

/// Reverse-mode tape. Nodes are appended in execution order, which is a
/// topological order by construction; backward() walks them in reverse.
/// One tape per forward pass; a tape must not be shared across threads.
class Tape {
public:
    using GradFn = std::function<void(const std::vector<double>& upstream, Tape& tape)>;

    /// Register a value as a leaf on this tape. Shares the buffer.
    Tensor leaf(const Tensor& value, bool requires_grad);

    /// Record an op result. Used by op implementations.
    Tensor record(Shape shape, std::vector<double> data,
                  const std::vector<const Tensor*>& parents, GradFn backward);
    /// Variant for ops whose backward closure keeps the output buffer.
    Tensor record(Shape shape, std::shared_ptr<std::vector<double>> data,
                  const std::vector<const Tensor*>& parents, GradFn backward);

    /// Backpropagate from a single-element root. Gradients of every
    /// requires_grad tensor reachable from the root become available.
    void backward(const Tensor& root);

    bool has_grad(const Tensor& t) const;
    const std::vector<double>& grad(const Tensor& t) const;

    /// Gradient accumulation buffer for a node (zero-filled on first use).
    std::vector<double>& grad_buffer(int node);
    bool wants_grad(const Tensor& t) const { return t.node_ >= 0 && t.requires_grad_; }

    std::size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        GradFn backward;
        std::size_t size = 0;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool ran_backward_ = false;
};

// ---------------------------------------------------------------------------
// Ops. Each works on plain tensors (pure function) or records itself when an
// input lives on a tape. Mixing tensors from two different tapes is an error.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
/// tanh approximation of GELU; its own analytic derivative is used backward.
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Natural log; every element must be strictly positive.
Tensor log(const Tensor& a);
/// Elementwise x^exponent. x must be positive unless the exponent is a
/// non-negative integer.
Tensor pow(const Tensor& a, double exponent);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t from, std::size_t to);

/// x: [C_in, D, H, W], kernels: [C_out, C_in, k, k, k]. Direct (non-FFT)
/// cross-correlation; k must be odd.
Tensor conv3d(const Tensor& x, const Tensor& kernels, std::size_t stride = 1,
              std::size_t padding = 0);

/// Adjoint of conv3d with the same kernel layout: input has C_out channels,
/// output has C_in channels, spatial extent stride*(n-1) + k - 2*padding.
Tensor conv_transpose3d(const Tensor& x, const Tensor& kernels, std::size_t stride = 1,
                        std::size_t padding = 0);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double eps = 1e-6;
    /// 0 checks every coordinate; otherwise a seeded random subset.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

/// Central-difference check of the tape gradient of f with respect to x.
/// Returns max over checked coordinates of |g_ad - g_fd| / (|g_fd| + 1e-12).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  GradCheckOptions opt = {});

}  // namespace stonefuse
