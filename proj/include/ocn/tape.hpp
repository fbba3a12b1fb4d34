#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "ocn/tensor.hpp"

namespace ocn::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; the tape owns the storage.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
    const Shape& shape() const { return val().shape(); }
};

/// Append-only record of a forward computation. Node ids strictly increase
/// during forward evaluation; backward() visits them in strictly decreasing
/// order, which is a reverse topological order by construction. Single-writer:
/// forward recording and the backward sweep are sequential.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int32_t)>;

    /// Insert an input node. Only trainable leaves (and nodes depending on
    /// them) receive gradients during backward().
    Var leaf(Tensor value, bool trainable = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var record(Tensor value, std::vector<int32_t> parents, BackwardFn backward);

    int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
    const Tensor& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
    const std::vector<int32_t>& parents(int32_t id) const { return nodes_[static_cast<size_t>(id)].parents; }
    bool needs_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    /// Reverse sweep from a scalar root. Gradients of all nodes on a path
    /// from a trainable leaf to the root become available via grad().
    void backward(Var root);

    bool has_grad(Var v) const;
    /// Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
    Tensor grad(Var v) const;
    /// In-place accumulation used by op adjoints.
    void accumulate(int32_t id, Tensor&& g);
    const Tensor& grad_ref(int32_t id) const { return *grads_[static_cast<size_t>(id)]; }

private:
    struct Node {
        Tensor value;
        std::vector<int32_t> parents;
        BackwardFn backward;
        bool needs_grad = false;
    };
    // deque: node references stay valid while the tape grows
    std::deque<Node> nodes_;
    std::deque<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::val() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Primitive operations. Shape mismatches raise ShapeError naming the
// primitive and both shapes. All adjoints are exact (no approximations).
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b); // elementwise, same shape
Var scale(Var x, double c);
Var neg(Var x);
Var smul(Var x, Var s); // multiply tensor x by scalar-shaped var s

Var matmul(Var a, Var b); // [n,k] x [k,m]
Var transpose2d(Var x);
Var reshape(Var x, Shape target);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(Var x, int axis, int64_t start, int64_t len);

Var pad_periodic(Var x, int axis);  // one cell on both sides, wrap
Var pad_replicate(Var x, int axis); // one cell on both sides, clamp

/// Valid cross-correlation of the last two axes with a fixed (non-learnable)
/// kernel; leading axes are batched. The adjoint scatters through the same
/// kernel (correlation with the flipped kernel).
Var correlate(Var x, const Tensor& kernel);

/// Learnable convolution, x:[Ci,H,W] w:[Co,Ci,kh,kw] b:[Co], zero padding.
Var conv2d(Var x, Var w, Var b, int stride, int pad);
/// Transposed convolution, x:[Ci,H,W] w:[Ci,Co,kh,kw] b:[Co].
Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad, int out_pad);

Var softplus(Var x);
Var relu(Var x);
Var square(Var x);
Var softmax_rows(Var x); // softmax along the last axis

/// out[i] = keep[i] != 0 ? x[i] : fill. Gradient flows only through kept
/// entries; the one primitive allowed to introduce non-finite fills.
Var masked_fill(Var x, const Tensor& keep, double fill);

Var sum(Var x);  // -> shape {1}
Var mean(Var x); // sum / numel

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

} // namespace ocn::ad
