#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridhack/common/rng.hpp"

namespace gridhack::nn {

using Shape = std::vector<int>;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatRM<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatRM<S>>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Named trainable (or frozen) parameter with optimizer slots.
template <typename S>
struct Param {
    std::string name;
    Shape shape;
    ArrayX<S> value;
    ArrayX<S> grad;
    ArrayX<S> m;  // Adam first moment
    ArrayX<S> v;  // Adam second moment
    bool trainable = true;

    std::int64_t size() const { return value.size(); }
};

template <typename S>
class ParamStore {
public:
    Param<S>& add(const std::string& name, const Shape& shape, bool trainable = true) {
        if (by_name_.count(name)) throw std::invalid_argument("duplicate param name: " + name);
        auto p = std::make_unique<Param<S>>();
        p->name = name;
        p->shape = shape;
        const auto n = numel(shape);
        p->value = ArrayX<S>::Zero(n);
        p->grad = ArrayX<S>::Zero(n);
        p->m = ArrayX<S>::Zero(n);
        p->v = ArrayX<S>::Zero(n);
        p->trainable = trainable;
        params_.push_back(std::move(p));
        by_name_[name] = params_.size() - 1;
        return *params_.back();
    }

    Param<S>* find(const std::string& name) {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : params_[it->second].get();
    }
    const Param<S>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : params_[it->second].get();
    }

    std::vector<std::unique_ptr<Param<S>>>& all() { return params_; }
    const std::vector<std::unique_ptr<Param<S>>>& all() const { return params_; }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p->size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p->grad.setZero();
    }

    // FNV-1a over raw parameter bytes; used to assert frozen parameters
    // never move.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_) {
            const auto* bytes = reinterpret_cast<const std::uint8_t*>(p->value.data());
            for (std::int64_t i = 0; i < p->size() * static_cast<std::int64_t>(sizeof(S)); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }

private:
    std::vector<std::unique_ptr<Param<S>>> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

template <typename S>
class Tape;

// Handle into a tape node. Copies are cheap; the tape owns storage.
template <typename S>
struct Tensor {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    int rows() const { return shape()[0]; }
    int cols() const {
        const auto& s = shape();
        std::int64_t n = 1;
        for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
        return static_cast<int>(n);
    }
    const ArrayX<S>& value() const;
    S scalar() const { return value()(0); }
};

// Dynamic reverse-mode tape. Nodes are created in topological order by
// construction; backward() walks ids in reverse.
template <typename S>
class Tape {
public:
    struct Node {
        Shape shape;
        ArrayX<S> value;
        ArrayX<S> grad;
        std::function<void()> backward;
        bool requires_grad = false;
        Param<S>* param = nullptr;  // set for leaf parameter nodes
    };

    Tensor<S> leaf(const Shape& shape, ArrayX<S> value, bool requires_grad) {
        if (value.size() != numel(shape)) {
            throw std::invalid_argument("leaf: data size " + std::to_string(value.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        nodes_.push_back(Node{shape, std::move(value), {}, nullptr, requires_grad, nullptr});
        return Tensor<S>{this, static_cast<int>(nodes_.size() - 1)};
    }

    Tensor<S> constant(const Shape& shape, ArrayX<S> value) {
        return leaf(shape, std::move(value), false);
    }

    Tensor<S> scalar_constant(S v) {
        ArrayX<S> a(1);
        a(0) = v;
        return constant({1}, std::move(a));
    }

    Tensor<S> param(Param<S>& p) {
        Tensor<S> t = leaf(p.shape, p.value, p.trainable);
        nodes_[t.id].param = &p;
        return t;
    }

    Tensor<S> make(const Shape& shape, ArrayX<S> value, bool requires_grad,
                   std::function<void()> backward) {
        nodes_.push_back(
            Node{shape, std::move(value), {}, std::move(backward), requires_grad, nullptr});
        return Tensor<S>{this, static_cast<int>(nodes_.size() - 1)};
    }

    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }

    // Gradient buffer of a node, allocated on first touch.
    ArrayX<S>& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = ArrayX<S>::Zero(n.value.size());
        return n.grad;
    }
    bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

    // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep, then folds
    // leaf gradients into their parameters.
    void backward(const Tensor<S>& loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: foreign tensor");
        if (numel(nodes_[loss.id].shape) != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(nodes_[loss.id].shape));
        }
        grad(loss.id).setConstant(S(1));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward();
            if (n.param && n.param->trainable) n.param->grad += n.grad;
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

template <typename S>
const Shape& Tensor<S>::shape() const {
    return tape->node(id).shape;
}
template <typename S>
const ArrayX<S>& Tensor<S>::value() const {
    return tape->node(id).value;
}

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

template <typename S>
bool needs_grad(const Tensor<S>& a) {
    return a.tape->node(a.id).requires_grad;
}

}  // namespace detail

// ---- elementwise and arithmetic primitives ----

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
    detail::require_same_shape(a, b, "add");
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value() + b.value();
    const bool rg = detail::needs_grad(a) || detail::needs_grad(b);
    const int aid = a.id, bid = b.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), rg, [tape, aid, bid, n] {
        const ArrayX<S>& dy = tape->grad(n);
        if (tape->node(aid).requires_grad) tape->grad(aid) += dy;
        if (tape->node(bid).requires_grad) tape->grad(bid) += dy;
    });
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
    detail::require_same_shape(a, b, "sub");
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value() - b.value();
    const bool rg = detail::needs_grad(a) || detail::needs_grad(b);
    const int aid = a.id, bid = b.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), rg, [tape, aid, bid, n] {
        const ArrayX<S>& dy = tape->grad(n);
        if (tape->node(aid).requires_grad) tape->grad(aid) += dy;
        if (tape->node(bid).requires_grad) tape->grad(bid) -= dy;
    });
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
    detail::require_same_shape(a, b, "mul");
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value() * b.value();
    const bool rg = detail::needs_grad(a) || detail::needs_grad(b);
    const int aid = a.id, bid = b.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), rg, [tape, aid, bid, n] {
        const ArrayX<S>& dy = tape->grad(n);
        if (tape->node(aid).requires_grad) tape->grad(aid) += dy * tape->node(bid).value;
        if (tape->node(bid).requires_grad) tape->grad(bid) += dy * tape->node(aid).value;
    });
}

template <typename S>
Tensor<S> scale(Tensor<S> a, S c) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value() * c;
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n, c] {
        if (tape->node(aid).requires_grad) tape->grad(aid) += tape->grad(n) * c;
    });
}

template <typename S>
Tensor<S> neg(Tensor<S> a) {
    return scale(a, S(-1));
}

// Broadcasts a row vector [cols] over every row of [rows, cols].
template <typename S>
Tensor<S> add_rowvec(Tensor<S> a, Tensor<S> bias) {
    Tape<S>* tape = a.tape;
    const int rows = a.rows(), cols = a.cols();
    if (static_cast<std::int64_t>(cols) != numel(bias.shape())) {
        throw std::invalid_argument("add_rowvec: bias " + shape_str(bias.shape()) +
                                    " does not span columns of " + shape_str(a.shape()));
    }
    ArrayX<S> out = a.value();
    for (int r = 0; r < rows; ++r) {
        out.segment(r * cols, cols) += bias.value();
    }
    const bool rg = detail::needs_grad(a) || detail::needs_grad(bias);
    const int aid = a.id, bid = bias.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), rg, [tape, aid, bid, n, rows, cols] {
        const ArrayX<S>& dy = tape->grad(n);
        if (tape->node(aid).requires_grad) tape->grad(aid) += dy;
        if (tape->node(bid).requires_grad) {
            ArrayX<S>& db = tape->grad(bid);
            for (int r = 0; r < rows; ++r) db += dy.segment(r * cols, cols);
        }
    });
}

// Broadcasts a column vector [rows] (or [rows,1]) across columns.
template <typename S>
Tensor<S> mul_colvec(Tensor<S> a, Tensor<S> col) {
    Tape<S>* tape = a.tape;
    const int rows = a.rows(), cols = a.cols();
    if (static_cast<std::int64_t>(rows) != numel(col.shape())) {
        throw std::invalid_argument("mul_colvec: vector " + shape_str(col.shape()) +
                                    " does not span rows of " + shape_str(a.shape()));
    }
    ArrayX<S> out(a.value().size());
    for (int r = 0; r < rows; ++r) {
        out.segment(r * cols, cols) = a.value().segment(r * cols, cols) * col.value()(r);
    }
    const bool rg = detail::needs_grad(a) || detail::needs_grad(col);
    const int aid = a.id, cid = col.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), rg, [tape, aid, cid, n, rows, cols] {
        const ArrayX<S>& dy = tape->grad(n);
        if (tape->node(aid).requires_grad) {
            ArrayX<S>& da = tape->grad(aid);
            for (int r = 0; r < rows; ++r) {
                da.segment(r * cols, cols) +=
                    dy.segment(r * cols, cols) * tape->node(cid).value(r);
            }
        }
        if (tape->node(cid).requires_grad) {
            ArrayX<S>& dc = tape->grad(cid);
            for (int r = 0; r < rows; ++r) {
                dc(r) += (dy.segment(r * cols, cols) * tape->node(aid).value.segment(r * cols, cols))
                             .sum();
            }
        }
    });
}

// ---- activations ----

template <typename S>
Tensor<S> sigmoid(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out = (S(1) / (S(1) + (-a.value()).exp()));
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& y = tape->node(n).value;
        tape->grad(aid) += tape->grad(n) * y * (S(1) - y);
    });
}

template <typename S>
Tensor<S> tanh_op(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value().tanh();
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& y = tape->node(n).value;
        tape->grad(aid) += tape->grad(n) * (S(1) - y * y);
    });
}

template <typename S>
Tensor<S> elu(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out = (a.value() > S(0)).select(a.value(), a.value().exp() - S(1));
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& x = tape->node(aid).value;
        const ArrayX<S>& y = tape->node(n).value;
        tape->grad(aid) += tape->grad(n) * (x > S(0)).select(ArrayX<S>::Ones(x.size()), y + S(1));
    });
}

template <typename S>
Tensor<S> gelu(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    const ArrayX<S>& x = a.value();
    ArrayX<S> out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out(i) = S(0.5) * x(i) * (S(1) + std::erf(x(i) / S(std::sqrt(2.0))));
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& x = tape->node(aid).value;
        const ArrayX<S>& dy = tape->grad(n);
        ArrayX<S>& dx = tape->grad(aid);
        constexpr double inv_sqrt2pi = 0.3989422804014327;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double xi = static_cast<double>(x(i));
            const double cdf = 0.5 * (1.0 + std::erf(xi / std::sqrt(2.0)));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
            dx(i) += dy(i) * S(cdf + xi * pdf);
        }
    });
}

template <typename S>
Tensor<S> relu(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value().max(S(0));
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& x = tape->node(aid).value;
        tape->grad(aid) += tape->grad(n) * (x > S(0)).template cast<S>();
    });
}

// ---- matrix products ----

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
    Tape<S>* tape = a.tape;
    const int m = a.rows(), k = a.cols();
    const int k2 = b.rows(), p = b.cols();
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    ArrayX<S> out(static_cast<std::int64_t>(m) * p);
    {
        ConstMatMap<S> A(a.value().data(), m, k);
        ConstMatMap<S> B(b.value().data(), k, p);
        MatMap<S> O(out.data(), m, p);
        O.noalias() = A * B;
    }
    const bool rg = detail::needs_grad(a) || detail::needs_grad(b);
    const int aid = a.id, bid = b.id, n = static_cast<int>(tape->size());
    return tape->make({m, p}, std::move(out), rg, [tape, aid, bid, n, m, k, p] {
        ConstMatMap<S> dY(tape->grad(n).data(), m, p);
        if (tape->node(aid).requires_grad) {
            ConstMatMap<S> B(tape->node(bid).value.data(), k, p);
            MatMap<S> dA(tape->grad(aid).data(), m, k);
            dA.noalias() += dY * B.transpose();
        }
        if (tape->node(bid).requires_grad) {
            ConstMatMap<S> A(tape->node(aid).value.data(), m, k);
            MatMap<S> dB(tape->grad(bid).data(), k, p);
            dB.noalias() += A.transpose() * dY;
        }
    });
}

// a [m,k] x b^T where b is [p,k]; returns [m,p]. Used for attention scores.
template <typename S>
Tensor<S> matmul_nt(Tensor<S> a, Tensor<S> b) {
    Tape<S>* tape = a.tape;
    const int m = a.rows(), k = a.cols();
    const int p = b.rows(), k2 = b.cols();
    if (k != k2) {
        throw std::invalid_argument("matmul_nt: inner dims differ, " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
    }
    ArrayX<S> out(static_cast<std::int64_t>(m) * p);
    {
        ConstMatMap<S> A(a.value().data(), m, k);
        ConstMatMap<S> B(b.value().data(), p, k);
        MatMap<S> O(out.data(), m, p);
        O.noalias() = A * B.transpose();
    }
    const bool rg = detail::needs_grad(a) || detail::needs_grad(b);
    const int aid = a.id, bid = b.id, n = static_cast<int>(tape->size());
    return tape->make({m, p}, std::move(out), rg, [tape, aid, bid, n, m, k, p] {
        ConstMatMap<S> dY(tape->grad(n).data(), m, p);
        if (tape->node(aid).requires_grad) {
            ConstMatMap<S> B(tape->node(bid).value.data(), p, k);
            MatMap<S> dA(tape->grad(aid).data(), m, k);
            dA.noalias() += dY * B;
        }
        if (tape->node(bid).requires_grad) {
            ConstMatMap<S> A(tape->node(aid).value.data(), m, k);
            MatMap<S> dB(tape->grad(bid).data(), p, k);
            dB.noalias() += dY.transpose() * A;
        }
    });
}

// ---- data movement ----

// out.flat[i] = indices[i] < 0 ? 0 : x.flat[indices[i]]. The universal
// gather behind slicing, concatenation, im2col and layout permutations;
// backward scatter-adds through the same map.
template <typename S>
Tensor<S> index_select_flat(Tensor<S> a, std::shared_ptr<const std::vector<std::int64_t>> indices,
                            Shape out_shape) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out(static_cast<std::int64_t>(indices->size()));
    const auto& x = a.value();
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const auto src = (*indices)[i];
        out(static_cast<Eigen::Index>(i)) = src < 0 ? S(0) : x(src);
    }
    if (numel(out_shape) != static_cast<std::int64_t>(indices->size())) {
        throw std::invalid_argument("index_select_flat: shape/indices size mismatch");
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(std::move(out_shape), std::move(out), detail::needs_grad(a),
                      [tape, aid, n, indices] {
                          if (!tape->node(aid).requires_grad) return;
                          const ArrayX<S>& dy = tape->grad(n);
                          ArrayX<S>& dx = tape->grad(aid);
                          for (std::size_t i = 0; i < indices->size(); ++i) {
                              const auto src = (*indices)[i];
                              if (src >= 0) dx(src) += dy(static_cast<Eigen::Index>(i));
                          }
                      });
}

template <typename S>
Tensor<S> reshape(Tensor<S> a, Shape shape) {
    if (numel(shape) != numel(a.shape())) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    }
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value();
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(std::move(shape), std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (tape->node(aid).requires_grad) tape->grad(aid) += tape->grad(n);
    });
}

template <typename S>
Tensor<S> slice_rows(Tensor<S> a, int r0, int r1) {
    const int rows = a.rows(), cols = a.cols();
    if (r0 < 0 || r1 > rows || r0 >= r1) {
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") for " + shape_str(a.shape()));
    }
    Tape<S>* tape = a.tape;
    ArrayX<S> out = a.value().segment(static_cast<std::int64_t>(r0) * cols,
                                      static_cast<std::int64_t>(r1 - r0) * cols);
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make({r1 - r0, cols}, std::move(out), detail::needs_grad(a),
                      [tape, aid, n, r0, cols] {
                          if (!tape->node(aid).requires_grad) return;
                          const ArrayX<S>& dy = tape->grad(n);
                          tape->grad(aid).segment(static_cast<std::int64_t>(r0) * cols, dy.size()) +=
                              dy;
                      });
}

template <typename S>
Tensor<S> slice_cols(Tensor<S> a, int c0, int c1) {
    const int rows = a.rows(), cols = a.cols();
    if (c0 < 0 || c1 > cols || c0 >= c1) {
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                    std::to_string(c1) + ") for " + shape_str(a.shape()));
    }
    Tape<S>* tape = a.tape;
    const int w = c1 - c0;
    ArrayX<S> out(static_cast<std::int64_t>(rows) * w);
    for (int r = 0; r < rows; ++r) {
        out.segment(static_cast<std::int64_t>(r) * w, w) =
            a.value().segment(static_cast<std::int64_t>(r) * cols + c0, w);
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make({rows, w}, std::move(out), detail::needs_grad(a),
                      [tape, aid, n, rows, cols, c0, w] {
                          if (!tape->node(aid).requires_grad) return;
                          const ArrayX<S>& dy = tape->grad(n);
                          ArrayX<S>& dx = tape->grad(aid);
                          for (int r = 0; r < rows; ++r) {
                              dx.segment(static_cast<std::int64_t>(r) * cols + c0, w) +=
                                  dy.segment(static_cast<std::int64_t>(r) * w, w);
                          }
                      });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Tape<S>* tape = parts[0].tape;
    const int rows = parts[0].rows();
    int cols = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        cols += p.cols();
        rg = rg || detail::needs_grad(p);
    }
    ArrayX<S> out(static_cast<std::int64_t>(rows) * cols);
    int at = 0;
    for (const auto& p : parts) {
        const int w = p.cols();
        for (int r = 0; r < rows; ++r) {
            out.segment(static_cast<std::int64_t>(r) * cols + at, w) =
                p.value().segment(static_cast<std::int64_t>(r) * w, w);
        }
        at += w;
    }
    std::vector<std::pair<int, int>> ids;  // (node id, width)
    for (const auto& p : parts) ids.emplace_back(p.id, p.cols());
    const int n = static_cast<int>(tape->size());
    return tape->make({rows, cols}, std::move(out), rg, [tape, n, rows, cols, ids] {
        const ArrayX<S>& dy = tape->grad(n);
        int at = 0;
        for (const auto& [pid, w] : ids) {
            if (tape->node(pid).requires_grad) {
                ArrayX<S>& dp = tape->grad(pid);
                for (int r = 0; r < rows; ++r) {
                    dp.segment(static_cast<std::int64_t>(r) * w, w) +=
                        dy.segment(static_cast<std::int64_t>(r) * cols + at, w);
                }
            }
            at += w;
        }
    });
}

// Stacks parts with equal column counts on top of each other. Storage is
// row-major, so this is a flat concatenation.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    Tape<S>* tape = parts[0].tape;
    const int cols = parts[0].cols();
    int rows = 0;
    bool rg = false;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
        }
        rows += p.rows();
        total += p.value().size();
        rg = rg || detail::needs_grad(p);
    }
    ArrayX<S> out(total);
    std::int64_t at = 0;
    for (const auto& p : parts) {
        out.segment(at, p.value().size()) = p.value();
        at += p.value().size();
    }
    std::vector<std::pair<int, std::int64_t>> ids;  // (node id, flat size)
    for (const auto& p : parts) ids.emplace_back(p.id, p.value().size());
    const int n = static_cast<int>(tape->size());
    return tape->make({rows, cols}, std::move(out), rg, [tape, n, ids] {
        const ArrayX<S>& dy = tape->grad(n);
        std::int64_t at = 0;
        for (const auto& [pid, sz] : ids) {
            if (tape->node(pid).requires_grad) tape->grad(pid) += dy.segment(at, sz);
            at += sz;
        }
    });
}

// ---- reductions, softmax family ----

// Means over consecutive groups of `group` rows: [rows, cols] ->
// [rows/group, cols].
template <typename S>
Tensor<S> mean_pool_rows(Tensor<S> a, int group) {
    const int rows = a.rows(), cols = a.cols();
    if (group <= 0 || rows % group != 0) {
        throw std::invalid_argument("mean_pool_rows: group " + std::to_string(group) +
                                    " does not divide rows of " + shape_str(a.shape()));
    }
    Tape<S>* tape = a.tape;
    const int out_rows = rows / group;
    ArrayX<S> out = ArrayX<S>::Zero(static_cast<std::int64_t>(out_rows) * cols);
    for (int r = 0; r < rows; ++r) {
        out.segment(static_cast<std::int64_t>(r / group) * cols, cols) +=
            a.value().segment(static_cast<std::int64_t>(r) * cols, cols);
    }
    out /= S(group);
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make({out_rows, cols}, std::move(out), detail::needs_grad(a),
                      [tape, aid, n, rows, cols, group] {
                          if (!tape->node(aid).requires_grad) return;
                          const ArrayX<S>& dy = tape->grad(n);
                          ArrayX<S>& dx = tape->grad(aid);
                          const S inv = S(1) / S(group);
                          for (int r = 0; r < rows; ++r) {
                              dx.segment(static_cast<std::int64_t>(r) * cols, cols) +=
                                  dy.segment(static_cast<std::int64_t>(r / group) * cols, cols) *
                                  inv;
                          }
                      });
}

template <typename S>
Tensor<S> sum_all(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    ArrayX<S> out(1);
    out(0) = a.value().sum();
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make({1}, std::move(out), detail::needs_grad(a), [tape, aid, n] {
        if (tape->node(aid).requires_grad) tape->grad(aid) += tape->grad(n)(0);
    });
}

template <typename S>
Tensor<S> mean_all(Tensor<S> a) {
    return scale(sum_all(a), S(1) / S(numel(a.shape())));
}

template <typename S>
Tensor<S> softmax_rows(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    const int rows = a.rows(), cols = a.cols();
    ArrayX<S> out(a.value().size());
    for (int r = 0; r < rows; ++r) {
        auto x = a.value().segment(static_cast<std::int64_t>(r) * cols, cols);
        const S mx = x.maxCoeff();
        ArrayX<S> e = (x - mx).exp();
        out.segment(static_cast<std::int64_t>(r) * cols, cols) = e / e.sum();
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n, rows, cols] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& y = tape->node(n).value;
        const ArrayX<S>& dy = tape->grad(n);
        ArrayX<S>& dx = tape->grad(aid);
        for (int r = 0; r < rows; ++r) {
            const auto yr = y.segment(static_cast<std::int64_t>(r) * cols, cols);
            const auto dyr = dy.segment(static_cast<std::int64_t>(r) * cols, cols);
            const S dot = (yr * dyr).sum();
            dx.segment(static_cast<std::int64_t>(r) * cols, cols) += yr * (dyr - dot);
        }
    });
}

template <typename S>
Tensor<S> log_softmax_rows(Tensor<S> a) {
    Tape<S>* tape = a.tape;
    const int rows = a.rows(), cols = a.cols();
    ArrayX<S> out(a.value().size());
    for (int r = 0; r < rows; ++r) {
        auto x = a.value().segment(static_cast<std::int64_t>(r) * cols, cols);
        const S mx = x.maxCoeff();
        const S lse = std::log((x - mx).exp().sum()) + mx;
        out.segment(static_cast<std::int64_t>(r) * cols, cols) = x - lse;
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make(a.shape(), std::move(out), detail::needs_grad(a), [tape, aid, n, rows, cols] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& y = tape->node(n).value;
        const ArrayX<S>& dy = tape->grad(n);
        ArrayX<S>& dx = tape->grad(aid);
        for (int r = 0; r < rows; ++r) {
            const auto yr = y.segment(static_cast<std::int64_t>(r) * cols, cols);
            const auto dyr = dy.segment(static_cast<std::int64_t>(r) * cols, cols);
            const S total = dyr.sum();
            dx.segment(static_cast<std::int64_t>(r) * cols, cols) += dyr - yr.exp() * total;
        }
    });
}

// Picks a[r, ids[r]] into a column [rows, 1].
template <typename S>
Tensor<S> gather_cols(Tensor<S> a, std::shared_ptr<const std::vector<int>> ids) {
    Tape<S>* tape = a.tape;
    const int rows = a.rows(), cols = a.cols();
    if (static_cast<int>(ids->size()) != rows) {
        throw std::invalid_argument("gather_cols: ids size " + std::to_string(ids->size()) +
                                    " != rows of " + shape_str(a.shape()));
    }
    ArrayX<S> out(rows);
    for (int r = 0; r < rows; ++r) {
        const int c = (*ids)[r];
        if (c < 0 || c >= cols) {
            throw std::invalid_argument("gather_cols: label " + std::to_string(c) +
                                        " out of range for " + std::to_string(cols) + " columns");
        }
        out(r) = a.value()(static_cast<std::int64_t>(r) * cols + c);
    }
    const int aid = a.id, n = static_cast<int>(tape->size());
    return tape->make({rows, 1}, std::move(out), detail::needs_grad(a), [tape, aid, n, ids, cols] {
        if (!tape->node(aid).requires_grad) return;
        const ArrayX<S>& dy = tape->grad(n);
        ArrayX<S>& dx = tape->grad(aid);
        for (std::size_t r = 0; r < ids->size(); ++r) {
            dx(static_cast<std::int64_t>(r) * cols + (*ids)[r]) += dy(r);
        }
    });
}

// Rows of an embedding table selected by token id; backward scatter-adds
// into the table.
template <typename S>
Tensor<S> embedding(Tensor<S> table, std::shared_ptr<const std::vector<int>> ids) {
    Tape<S>* tape = table.tape;
    const int vocab = table.rows(), dim = table.cols();
    const int n_ids = static_cast<int>(ids->size());
    ArrayX<S> out(static_cast<std::int64_t>(n_ids) * dim);
    for (int i = 0; i < n_ids; ++i) {
        const int id = (*ids)[i];
        if (id < 0 || id >= vocab) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " outside vocab of " + std::to_string(vocab));
        }
        out.segment(static_cast<std::int64_t>(i) * dim, dim) =
            table.value().segment(static_cast<std::int64_t>(id) * dim, dim);
    }
    const int tid = table.id, n = static_cast<int>(tape->size());
    return tape->make({n_ids, dim}, std::move(out), detail::needs_grad(table),
                      [tape, tid, n, ids, dim] {
                          if (!tape->node(tid).requires_grad) return;
                          const ArrayX<S>& dy = tape->grad(n);
                          ArrayX<S>& dt = tape->grad(tid);
                          for (std::size_t i = 0; i < ids->size(); ++i) {
                              dt.segment(static_cast<std::int64_t>((*ids)[i]) * dim, dim) +=
                                  dy.segment(static_cast<std::int64_t>(i) * dim, dim);
                          }
                      });
}

// ---- normalization, dropout ----

template <typename S>
Tensor<S> layer_norm(Tensor<S> x, Tensor<S> gain, Tensor<S> bias, S eps = S(1e-5)) {
    Tape<S>* tape = x.tape;
    const int rows = x.rows(), cols = x.cols();
    if (numel(gain.shape()) != cols || numel(bias.shape()) != cols) {
        throw std::invalid_argument("layer_norm: gain/bias must span columns of " +
                                    shape_str(x.shape()));
    }
    ArrayX<S> out(x.value().size());
    ArrayX<S> xhat(x.value().size());
    ArrayX<S> inv_std(rows);
    for (int r = 0; r < rows; ++r) {
        auto xr = x.value().segment(static_cast<std::int64_t>(r) * cols, cols);
        const S mean = xr.mean();
        const S var = (xr - mean).square().mean();
        const S is = S(1) / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.segment(static_cast<std::int64_t>(r) * cols, cols) = (xr - mean) * is;
        out.segment(static_cast<std::int64_t>(r) * cols, cols) =
            xhat.segment(static_cast<std::int64_t>(r) * cols, cols) * gain.value() + bias.value();
    }
    const bool rg = detail::needs_grad(x) || detail::needs_grad(gain) || detail::needs_grad(bias);
    const int xid = x.id, gid = gain.id, bid = bias.id, n = static_cast<int>(tape->size());
    auto xhat_ptr = std::make_shared<ArrayX<S>>(std::move(xhat));
    auto inv_ptr = std::make_shared<ArrayX<S>>(std::move(inv_std));
    return tape->make(x.shape(), std::move(out), rg,
                      [tape, xid, gid, bid, n, rows, cols, xhat_ptr, inv_ptr] {
                          const ArrayX<S>& dy = tape->grad(n);
                          const ArrayX<S>& g = tape->node(gid).value;
                          for (int r = 0; r < rows; ++r) {
                              const auto xh =
                                  xhat_ptr->segment(static_cast<std::int64_t>(r) * cols, cols);
                              const auto dyr =
                                  dy.segment(static_cast<std::int64_t>(r) * cols, cols);
                              if (tape->node(gid).requires_grad)
                                  tape->grad(gid) += dyr * xh;
                              if (tape->node(bid).requires_grad) tape->grad(bid) += dyr;
                              if (tape->node(xid).requires_grad) {
                                  const ArrayX<S> dxhat = dyr * g;
                                  const S m1 = dxhat.mean();
                                  const S m2 = (dxhat * xh).mean();
                                  tape->grad(xid).segment(static_cast<std::int64_t>(r) * cols,
                                                          cols) +=
                                      (*inv_ptr)(r) * (dxhat - m1 - xh * m2);
                              }
                          }
                      });
}

// Inverted dropout; identity when not training.
template <typename S>
Tensor<S> dropout(Tensor<S> x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    Tape<S>* tape = x.tape;
    const S keep = S(1.0 - p);
    ArrayX<S> mask(x.value().size());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask(i) = rng.next_double() < p ? S(0) : S(1) / keep;
    }
    Tensor<S> m = tape->constant(x.shape(), std::move(mask));
    return mul(x, m);
}

// ---- discrete helpers ----

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& a) {
    const int rows = a.rows(), cols = a.cols();
    std::vector<int> out(rows);
    for (int r = 0; r < rows; ++r) {
        int best = 0;
        S best_v = a.value()(static_cast<std::int64_t>(r) * cols);
        for (int c = 1; c < cols; ++c) {
            const S v = a.value()(static_cast<std::int64_t>(r) * cols + c);
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[r] = best;
    }
    return out;
}

// Forward: one-hot of the per-row argmax. Backward: identity into the
// soft input (the straight-through estimator).
template <typename S>
Tensor<S> straight_through_onehot(Tensor<S> soft) {
    Tape<S>* tape = soft.tape;
    const int rows = soft.rows(), cols = soft.cols();
    const std::vector<int> idx = argmax_rows(soft);
    ArrayX<S> out = ArrayX<S>::Zero(soft.value().size());
    for (int r = 0; r < rows; ++r) out(static_cast<std::int64_t>(r) * cols + idx[r]) = S(1);
    const int sid = soft.id, n = static_cast<int>(tape->size());
    return tape->make(soft.shape(), std::move(out), detail::needs_grad(soft), [tape, sid, n] {
        if (tape->node(sid).requires_grad) tape->grad(sid) += tape->grad(n);
    });
}

// Gumbel-Softmax sample with temperature tau. Soft mode returns
// softmax((logits + g) / tau); hard mode returns the straight-through
// one-hot whose gradient is the soft sample's gradient.
template <typename S>
Tensor<S> gumbel_softmax(Tensor<S> logits, double tau, bool hard, Rng& rng) {
    if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
    Tape<S>* tape = logits.tape;
    ArrayX<S> noise(logits.value().size());
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
        const double u = rng.next_double();
        noise(i) = S(-std::log(-std::log(u + 1e-20) + 1e-20));
    }
    Tensor<S> g = tape->constant(logits.shape(), std::move(noise));
    Tensor<S> soft = softmax_rows(scale(add(logits, g), S(1.0 / tau)));
    return hard ? straight_through_onehot(soft) : soft;
}

}  // namespace gridhack::nn
