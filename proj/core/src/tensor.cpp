#include "stonefuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "stonefuse/rng.hpp"

namespace stonefuse {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape_));
    }
    if (values.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " needs " +
                                    std::to_string(shape_size(shape_)) + " values, got " +
                                    std::to_string(values.size()));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v(shape_size(shape), value);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
}

const std::vector<double>& Tensor::values() const {
    if (!data_) throw std::runtime_error("tensor: undefined");
    return *data_;
}

std::vector<double>& Tensor::values() {
    if (!data_) throw std::runtime_error("tensor: undefined");
    return *data_;
}

double Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("tensor: value() on non-scalar " + shape_str(shape_));
    return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
        throw std::invalid_argument("tensor: index rank mismatch for " + shape_str(shape_));
    }
    std::size_t flat = 0;
    std::size_t d = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[d]) throw std::out_of_range("tensor: index out of range");
        flat = flat * shape_[d] + i;
        ++d;
    }
    return (*data_)[flat];
}

Tensor Tensor::clone() const { return Tensor(shape_, values()); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value, bool requires_grad) {
    if (!value.defined()) throw std::invalid_argument("tape: leaf on undefined tensor");
    Tensor t = value;
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    t.requires_grad_ = requires_grad;
    nodes_.push_back(Node{nullptr, t.size(), requires_grad});
    return t;
}

Tensor Tape::record(Shape shape, std::vector<double> data,
                    const std::vector<const Tensor*>& parents, GradFn backward) {
    return record(std::move(shape), std::make_shared<std::vector<double>>(std::move(data)),
                  parents, std::move(backward));
}

Tensor Tape::record(Shape shape, std::shared_ptr<std::vector<double>> data,
                    const std::vector<const Tensor*>& parents, GradFn backward) {
    bool rq = false;
    for (const Tensor* p : parents) {
        if (p->tape_ != nullptr && p->tape_ != this) {
            throw std::runtime_error("tape: operands recorded on different tapes");
        }
        rq = rq || (p->tape_ == this && p->requires_grad_);
    }
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    }
    if (!data || data->size() != shape_size(shape)) {
        throw std::invalid_argument("tape: record data size mismatch");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    t.requires_grad_ = rq;
    nodes_.push_back(Node{rq ? std::move(backward) : GradFn{}, t.size(), rq});
    return t;
}

void Tape::backward(const Tensor& root) {
    if (root.tape_ != this || root.node_ < 0) {
        throw std::invalid_argument("backward: root is not recorded on this tape");
    }
    if (root.size() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
    }
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(root.node_)] = {1.0};
    for (int i = root.node_; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || grads_[static_cast<std::size_t>(i)].empty()) continue;
        if (n.backward) n.backward(grads_[static_cast<std::size_t>(i)], *this);
    }
    ran_backward_ = true;
}

bool Tape::has_grad(const Tensor& t) const {
    if (!ran_backward_ || t.tape_ != this || t.node_ < 0 || !t.requires_grad_) return false;
    return !grads_[static_cast<std::size_t>(t.node_)].empty();
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    if (t.tape_ != this) throw std::invalid_argument("grad: tensor not on this tape");
    if (!has_grad(t)) throw std::runtime_error("grad: no gradient recorded for tensor");
    return grads_[static_cast<std::size_t>(t.node_)];
}

std::vector<double>& Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].size, 0.0);
    return g;
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    ran_backward_ = false;
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  GradCheckOptions opt) {
    Tape tape;
    Tensor xl = tape.leaf(x, true);
    Tensor y = f(tape, xl);
    if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    // A root disconnected from the tape (constant f) has zero gradient.
    std::vector<double> g_ad(x.size(), 0.0);
    if (y.on_tape() && y.requires_grad()) {
        tape.backward(y);
        if (tape.has_grad(xl)) g_ad = tape.grad(xl);
    }

    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords > 0 && opt.max_coords < coords.size()) {
        rng::Engine eng(rng::derive_seed(opt.seed, "grad_check_coords"));
        rng::shuffle(coords, eng);
        coords.resize(opt.max_coords);
    }

    auto eval = [&](const std::vector<double>& vals) {
        Tape t;
        Tensor xp = t.leaf(Tensor(x.shape(), vals), false);
        return f(t, xp).value();
    };

    double worst = 0.0;
    std::vector<double> vals = x.values();
    for (std::size_t c : coords) {
        const double keep = vals[c];
        vals[c] = keep + opt.eps;
        const double fp = eval(vals);
        vals[c] = keep - opt.eps;
        const double fm = eval(vals);
        vals[c] = keep;
        const double g_fd = (fp - fm) / (2.0 * opt.eps);
        const double rel = std::abs(g_ad[c] - g_fd) / (std::abs(g_fd) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace stonefuse
