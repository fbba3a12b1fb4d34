#include "ocn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ocn::ad {

namespace {

Tape& same_tape(const char* op, Var a, Var b) {
    if (!a.valid() || !b.valid() || a.tape != b.tape) {
        throw Error(std::string(op) + ": operands must live on the same tape");
    }
    return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Collapse a tensor around one axis: [outer, n, inner] row-major.
struct AxisView {
    int64_t outer, n, inner;
};

AxisView axis_view(const Shape& s, int axis) {
    AxisView v{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[static_cast<size_t>(i)];
    return v;
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Var Tape::leaf(Tensor value, bool trainable) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    grads_.emplace_back(std::nullopt);
    return Var{this, static_cast<int32_t>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int32_t> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    for (int32_t p : n.parents) {
        if (nodes_[static_cast<size_t>(p)].needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    grads_.emplace_back(std::nullopt);
    return Var{this, static_cast<int32_t>(nodes_.size()) - 1};
}

void Tape::accumulate(int32_t id, Tensor&& g) {
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot.has_value()) {
        slot = std::move(g);
        return;
    }
    Tensor& acc = *slot;
    const double* src = g.data();
    double* dst = acc.data();
    const int64_t n = acc.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
    if (root.tape != this) throw Error("backward: root from another tape");
    if (root.val().numel() != 1) {
        throw ShapeError("backward: root must be scalar-shaped, got " + shape_str(root.val().shape()));
    }
    for (auto& g : grads_) g.reset();
    grads_[static_cast<size_t>(root.id)] = Tensor::full(root.val().shape(), 1.0);
    for (int32_t id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || !grads_[static_cast<size_t>(id)].has_value() || !n.backward) continue;
        n.backward(*this, id);
    }
}

bool Tape::has_grad(Var v) const { return grads_[static_cast<size_t>(v.id)].has_value(); }

Tensor Tape::grad(Var v) const {
    const auto& slot = grads_[static_cast<size_t>(v.id)];
    if (slot.has_value()) return *slot;
    return Tensor(v.val().shape());
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
    Tape& t = same_tape("add", a, b);
    require_same_shape("add", a.val(), b.val());
    Tensor out(a.val().shape());
    const double *pa = a.val().data(), *pb = b.val().data();
    double* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return t.record(std::move(out), {a.id, b.id}, [](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        for (int32_t p : t.parents(id)) {
            if (t.needs_grad(p)) t.accumulate(p, Tensor(g));
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape("sub", a, b);
    require_same_shape("sub", a.val(), b.val());
    Tensor out(a.val().shape());
    const double *pa = a.val().data(), *pb = b.val().data();
    double* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    return t.record(std::move(out), {a.id, b.id}, [](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const auto& ps = t.parents(id);
        if (t.needs_grad(ps[0])) t.accumulate(ps[0], Tensor(g));
        if (t.needs_grad(ps[1])) {
            Tensor gb(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] = -g[i];
            t.accumulate(ps[1], std::move(gb));
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape("mul", a, b);
    require_same_shape("mul", a.val(), b.val());
    Tensor out(a.val().shape());
    const double *pa = a.val().data(), *pb = b.val().data();
    double* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    return t.record(std::move(out), {a.id, b.id}, [](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const auto& ps = t.parents(id);
        const Tensor& av = t.value(ps[0]);
        const Tensor& bv = t.value(ps[1]);
        if (t.needs_grad(ps[0])) {
            Tensor ga(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * bv[i];
            t.accumulate(ps[0], std::move(ga));
        }
        if (t.needs_grad(ps[1])) {
            Tensor gb(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * av[i];
            t.accumulate(ps[1], std::move(gb));
        }
    });
}

Var scale(Var x, double c) {
    Tape& t = *x.tape;
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    double* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = c * px[i];
    return t.record(std::move(out), {x.id}, [c](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        Tensor gx(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = c * g[i];
        t.accumulate(p, std::move(gx));
    });
}

Var neg(Var x) { return scale(x, -1.0); }

Var smul(Var x, Var s) {
    Tape& t = same_tape("smul", x, s);
    if (s.val().numel() != 1) {
        throw ShapeError("smul: scalar operand must have one element, got " + shape_str(s.val().shape()));
    }
    const double sv = s.val()[0];
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    double* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * sv;
    return t.record(std::move(out), {x.id, s.id}, [](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const auto& ps = t.parents(id);
        const Tensor& xv = t.value(ps[0]);
        const double sv = t.value(ps[1])[0];
        if (t.needs_grad(ps[0])) {
            Tensor gx(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * sv;
            t.accumulate(ps[0], std::move(gx));
        }
        if (t.needs_grad(ps[1])) {
            double acc = 0.0;
            for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
            t.accumulate(ps[1], Tensor::scalar(acc));
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra / layout
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = same_tape("matmul", a, b);
    const Tensor &av = a.val(), &bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    const int64_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor out(Shape{n, m});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int64_t q = 0; q < k; ++q) acc += av.at2(i, q) * bv.at2(q, j);
            out.at2(i, j) = acc;
        }
    }
    return t.record(std::move(out), {a.id, b.id}, [n, k, m](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const auto& ps = t.parents(id);
        const Tensor& av = t.value(ps[0]);
        const Tensor& bv = t.value(ps[1]);
        if (t.needs_grad(ps[0])) { // gA = g . B^T
            Tensor ga(Shape{n, k});
            for (int64_t i = 0; i < n; ++i)
                for (int64_t q = 0; q < k; ++q) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < m; ++j) acc += g.at2(i, j) * bv.at2(q, j);
                    ga.at2(i, q) = acc;
                }
            t.accumulate(ps[0], std::move(ga));
        }
        if (t.needs_grad(ps[1])) { // gB = A^T . g
            Tensor gb(Shape{k, m});
            for (int64_t q = 0; q < k; ++q)
                for (int64_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < n; ++i) acc += av.at2(i, q) * g.at2(i, j);
                    gb.at2(q, j) = acc;
                }
            t.accumulate(ps[1], std::move(gb));
        }
    });
}

Var transpose2d(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    if (xv.rank() != 2) throw ShapeError("transpose2d: expected rank-2, got " + shape_str(xv.shape()));
    const int64_t n = xv.dim(0), m = xv.dim(1);
    Tensor out(Shape{m, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out.at2(j, i) = xv.at2(i, j);
    return t.record(std::move(out), {x.id}, [n, m](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        Tensor gx(Shape{n, m});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) gx.at2(i, j) = g.at2(j, i);
        t.accumulate(p, std::move(gx));
    });
}

Var reshape(Var x, Shape target) {
    Tape& t = *x.tape;
    if (shape_numel(target) != x.val().numel()) {
        throw ShapeError("reshape: shape mismatch " + shape_str(x.val().shape()) + " vs " + shape_str(target));
    }
    Shape original = x.val().shape();
    Tensor out(std::move(target), x.val().vec());
    return t.record(std::move(out), {x.id}, [original](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        t.accumulate(p, Tensor(original, g.vec()));
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw Error("concat: no inputs");
    Tape& t = *parts[0].tape;
    const Shape& s0 = parts[0].val().shape();
    Shape out_shape = s0;
    int64_t total = 0;
    std::vector<int64_t> extents;
    for (const Var& p : parts) {
        if (p.tape != &t) throw Error("concat: operands must live on the same tape");
        const Shape& s = p.val().shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (int d = 0; d < static_cast<int>(s.size()); ++d) {
            if (d != axis && s[static_cast<size_t>(d)] != s0[static_cast<size_t>(d)]) {
                throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
            }
        }
        extents.push_back(s[static_cast<size_t>(axis)]);
        total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out(out_shape);
    const AxisView ov = axis_view(out_shape, axis);
    std::vector<int32_t> pids;
    int64_t offset = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& pv = parts[pi].val();
        const int64_t ext = extents[pi];
        for (int64_t o = 0; o < ov.outer; ++o)
            for (int64_t a = 0; a < ext; ++a)
                for (int64_t in = 0; in < ov.inner; ++in)
                    out[(o * ov.n + offset + a) * ov.inner + in] = pv[(o * ext + a) * ov.inner + in];
        offset += ext;
        pids.push_back(parts[pi].id);
    }
    return t.record(std::move(out), std::move(pids), [axis, extents, ov](Tape& t, int32_t id) {
        const Tensor& g = t.grad_ref(id);
        const auto& ps = t.parents(id);
        int64_t offset = 0;
        for (size_t pi = 0; pi < ps.size(); ++pi) {
            const int64_t ext = extents[pi];
            if (t.needs_grad(ps[pi])) {
                Tensor gp(t.value(ps[pi]).shape());
                for (int64_t o = 0; o < ov.outer; ++o)
                    for (int64_t a = 0; a < ext; ++a)
                        for (int64_t in = 0; in < ov.inner; ++in)
                            gp[(o * ext + a) * ov.inner + in] = g[(o * ov.n + offset + a) * ov.inner + in];
                t.accumulate(ps[pi], std::move(gp));
            }
            offset += ext;
        }
    });
}

Var slice(Var x, int axis, int64_t start, int64_t len) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    const Shape& s = xv.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 ||
        start + len > s[static_cast<size_t>(axis)]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") invalid for axis " + std::to_string(axis) + " of " + shape_str(s));
    }
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    const AxisView v = axis_view(s, axis);
    Tensor out(out_shape);
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t a = 0; a < len; ++a)
            for (int64_t in = 0; in < v.inner; ++in)
                out[(o * len + a) * v.inner + in] = xv[(o * v.n + start + a) * v.inner + in];
    return t.record(std::move(out), {x.id}, [v, start, len](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        Tensor gx(t.value(p).shape());
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t a = 0; a < len; ++a)
                for (int64_t in = 0; in < v.inner; ++in)
                    gx[(o * v.n + start + a) * v.inner + in] = g[(o * len + a) * v.inner + in];
        t.accumulate(p, std::move(gx));
    });
}

// ---------------------------------------------------------------------------
// padding
// ---------------------------------------------------------------------------

namespace {

enum class PadKind { Periodic, Replicate };

Var pad1(Var x, int axis, PadKind kind, const char* name) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    const Shape& s = xv.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError(std::string(name) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(s));
    }
    const AxisView v = axis_view(s, axis);
    if (v.n < 1) throw ShapeError(std::string(name) + ": empty axis in " + shape_str(s));
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = v.n + 2;
    Tensor out(out_shape);
    const int64_t lo_src = kind == PadKind::Periodic ? v.n - 1 : 0;
    const int64_t hi_src = kind == PadKind::Periodic ? 0 : v.n - 1;
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t a = 0; a < v.n; ++a)
            for (int64_t in = 0; in < v.inner; ++in)
                out[(o * (v.n + 2) + a + 1) * v.inner + in] = xv[(o * v.n + a) * v.inner + in];
        for (int64_t in = 0; in < v.inner; ++in) {
            out[(o * (v.n + 2) + 0) * v.inner + in] = xv[(o * v.n + lo_src) * v.inner + in];
            out[(o * (v.n + 2) + v.n + 1) * v.inner + in] = xv[(o * v.n + hi_src) * v.inner + in];
        }
    }
    return t.record(std::move(out), {x.id}, [v, lo_src, hi_src](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        Tensor gx(t.value(p).shape());
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t a = 0; a < v.n; ++a)
                for (int64_t in = 0; in < v.inner; ++in)
                    gx[(o * v.n + a) * v.inner + in] = g[(o * (v.n + 2) + a + 1) * v.inner + in];
            for (int64_t in = 0; in < v.inner; ++in) {
                gx[(o * v.n + lo_src) * v.inner + in] += g[(o * (v.n + 2) + 0) * v.inner + in];
                gx[(o * v.n + hi_src) * v.inner + in] += g[(o * (v.n + 2) + v.n + 1) * v.inner + in];
            }
        }
        t.accumulate(p, std::move(gx));
    });
}

} // namespace

Var pad_periodic(Var x, int axis) { return pad1(x, axis, PadKind::Periodic, "pad_periodic"); }
Var pad_replicate(Var x, int axis) { return pad1(x, axis, PadKind::Replicate, "pad_replicate"); }

// ---------------------------------------------------------------------------
// correlation / convolution
// ---------------------------------------------------------------------------

Var correlate(Var x, const Tensor& kernel) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    if (xv.rank() < 2 || kernel.rank() != 2) {
        throw ShapeError("correlate: input " + shape_str(xv.shape()) + " / kernel " + shape_str(kernel.shape()));
    }
    const int64_t H = xv.dim(xv.rank() - 2), W = xv.dim(xv.rank() - 1);
    const int64_t kh = kernel.dim(0), kw = kernel.dim(1);
    if (kh > H || kw > W) {
        throw ShapeError("correlate: kernel " + shape_str(kernel.shape()) + " larger than input " +
                         shape_str(xv.shape()));
    }
    const int64_t Ho = H - kh + 1, Wo = W - kw + 1;
    const int64_t batch = xv.numel() / (H * W);
    Shape out_shape = xv.shape();
    out_shape[out_shape.size() - 2] = Ho;
    out_shape[out_shape.size() - 1] = Wo;
    Tensor out(out_shape);
    for (int64_t c = 0; c < batch; ++c) {
        const double* xin = xv.data() + c * H * W;
        double* o = out.data() + c * Ho * Wo;
        for (int64_t i = 0; i < Ho; ++i)
            for (int64_t j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < kh; ++p)
                    for (int64_t q = 0; q < kw; ++q) acc += kernel.at2(p, q) * xin[(i + p) * W + (j + q)];
                o[i * Wo + j] = acc;
            }
    }
    Tensor k = kernel;
    return t.record(std::move(out), {x.id}, [k, H, W, Ho, Wo, batch](Tape& t, int32_t id) {
        const int32_t pid = t.parents(id)[0];
        if (!t.needs_grad(pid)) return;
        const Tensor& g = t.grad_ref(id);
        const int64_t kh = k.dim(0), kw = k.dim(1);
        Tensor gx(t.value(pid).shape());
        for (int64_t c = 0; c < batch; ++c) {
            double* gi = gx.data() + c * H * W;
            const double* go = g.data() + c * Ho * Wo;
            for (int64_t i = 0; i < Ho; ++i)
                for (int64_t j = 0; j < Wo; ++j) {
                    const double gv = go[i * Wo + j];
                    for (int64_t p = 0; p < kh; ++p)
                        for (int64_t q = 0; q < kw; ++q) gi[(i + p) * W + (j + q)] += k.at2(p, q) * gv;
                }
        }
        t.accumulate(pid, std::move(gx));
    });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    Tape& t = same_tape("conv2d", x, w);
    const Tensor &xv = x.val(), &wv = w.val(), &bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 4 || xv.dim(0) != wv.dim(1)) {
        throw ShapeError("conv2d: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(wv.shape()));
    }
    const int64_t Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const int64_t Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (bv.numel() != Co) {
        throw ShapeError("conv2d: bias " + shape_str(bv.shape()) + " vs out channels " + std::to_string(Co));
    }
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor out(Shape{Co, Ho, Wo});
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t i = 0; i < Ho; ++i)
            for (int64_t j = 0; j < Wo; ++j) {
                double acc = bv[co];
                for (int64_t ci = 0; ci < Ci; ++ci)
                    for (int64_t p = 0; p < kh; ++p) {
                        const int64_t ii = i * stride + p - pad;
                        if (ii < 0 || ii >= H) continue;
                        for (int64_t q = 0; q < kw; ++q) {
                            const int64_t jj = j * stride + q - pad;
                            if (jj < 0 || jj >= W) continue;
                            acc += wv[((co * Ci + ci) * kh + p) * kw + q] * xv[(ci * H + ii) * W + jj];
                        }
                    }
                out[(co * Ho + i) * Wo + j] = acc;
            }
    return t.record(std::move(out), {x.id, w.id, b.id},
                    [stride, pad, Ci, H, W, Co, kh, kw, Ho, Wo](Tape& t, int32_t id) {
                        const Tensor& g = t.grad_ref(id);
                        const auto& ps = t.parents(id);
                        const Tensor& xv = t.value(ps[0]);
                        const Tensor& wv = t.value(ps[1]);
                        const bool gx_needed = t.needs_grad(ps[0]);
                        const bool gw_needed = t.needs_grad(ps[1]);
                        const bool gb_needed = t.needs_grad(ps[2]);
                        Tensor gx = gx_needed ? Tensor(xv.shape()) : Tensor();
                        Tensor gw = gw_needed ? Tensor(wv.shape()) : Tensor();
                        Tensor gb = gb_needed ? Tensor(Shape{Co}) : Tensor();
                        for (int64_t co = 0; co < Co; ++co)
                            for (int64_t i = 0; i < Ho; ++i)
                                for (int64_t j = 0; j < Wo; ++j) {
                                    const double gv = g[(co * Ho + i) * Wo + j];
                                    if (gb_needed) gb[co] += gv;
                                    for (int64_t ci = 0; ci < Ci; ++ci)
                                        for (int64_t p = 0; p < kh; ++p) {
                                            const int64_t ii = i * stride + p - pad;
                                            if (ii < 0 || ii >= H) continue;
                                            for (int64_t q = 0; q < kw; ++q) {
                                                const int64_t jj = j * stride + q - pad;
                                                if (jj < 0 || jj >= W) continue;
                                                const int64_t wi = ((co * Ci + ci) * kh + p) * kw + q;
                                                const int64_t xi = (ci * H + ii) * W + jj;
                                                if (gx_needed) gx[xi] += wv[wi] * gv;
                                                if (gw_needed) gw[wi] += xv[xi] * gv;
                                            }
                                        }
                                }
                        if (gx_needed) t.accumulate(ps[0], std::move(gx));
                        if (gw_needed) t.accumulate(ps[1], std::move(gw));
                        if (gb_needed) t.accumulate(ps[2], std::move(gb));
                    });
}

Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad, int out_pad) {
    Tape& t = same_tape("conv2d_transpose", x, w);
    const Tensor &xv = x.val(), &wv = w.val(), &bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 4 || xv.dim(0) != wv.dim(0)) {
        throw ShapeError("conv2d_transpose: shape mismatch " + shape_str(xv.shape()) + " vs " +
                         shape_str(wv.shape()));
    }
    const int64_t Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const int64_t Co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    if (bv.numel() != Co) {
        throw ShapeError("conv2d_transpose: bias " + shape_str(bv.shape()) + " vs out channels " +
                         std::to_string(Co));
    }
    const int64_t Ho = (H - 1) * stride - 2 * pad + kh + out_pad;
    const int64_t Wo = (W - 1) * stride - 2 * pad + kw + out_pad;
    Tensor out(Shape{Co, Ho, Wo});
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t i = 0; i < Ho; ++i)
            for (int64_t j = 0; j < Wo; ++j) out[(co * Ho + i) * Wo + j] = bv[co];
    for (int64_t ci = 0; ci < Ci; ++ci)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const double xvv = xv[(ci * H + i) * W + j];
                for (int64_t co = 0; co < Co; ++co)
                    for (int64_t p = 0; p < kh; ++p) {
                        const int64_t oi = i * stride + p - pad;
                        if (oi < 0 || oi >= Ho) continue;
                        for (int64_t q = 0; q < kw; ++q) {
                            const int64_t oj = j * stride + q - pad;
                            if (oj < 0 || oj >= Wo) continue;
                            out[(co * Ho + oi) * Wo + oj] += wv[((ci * Co + co) * kh + p) * kw + q] * xvv;
                        }
                    }
            }
    return t.record(std::move(out), {x.id, w.id, b.id},
                    [stride, pad, Ci, H, W, Co, kh, kw, Ho, Wo](Tape& t, int32_t id) {
                        const Tensor& g = t.grad_ref(id);
                        const auto& ps = t.parents(id);
                        const Tensor& xv = t.value(ps[0]);
                        const Tensor& wv = t.value(ps[1]);
                        const bool gx_needed = t.needs_grad(ps[0]);
                        const bool gw_needed = t.needs_grad(ps[1]);
                        const bool gb_needed = t.needs_grad(ps[2]);
                        Tensor gx = gx_needed ? Tensor(xv.shape()) : Tensor();
                        Tensor gw = gw_needed ? Tensor(wv.shape()) : Tensor();
                        Tensor gb = gb_needed ? Tensor(Shape{Co}) : Tensor();
                        if (gb_needed) {
                            for (int64_t co = 0; co < Co; ++co) {
                                double acc = 0.0;
                                for (int64_t i = 0; i < Ho; ++i)
                                    for (int64_t j = 0; j < Wo; ++j) acc += g[(co * Ho + i) * Wo + j];
                                gb[co] = acc;
                            }
                        }
                        for (int64_t ci = 0; ci < Ci; ++ci)
                            for (int64_t i = 0; i < H; ++i)
                                for (int64_t j = 0; j < W; ++j) {
                                    const int64_t xi = (ci * H + i) * W + j;
                                    for (int64_t co = 0; co < Co; ++co)
                                        for (int64_t p = 0; p < kh; ++p) {
                                            const int64_t oi = i * stride + p - pad;
                                            if (oi < 0 || oi >= Ho) continue;
                                            for (int64_t q = 0; q < kw; ++q) {
                                                const int64_t oj = j * stride + q - pad;
                                                if (oj < 0 || oj >= Wo) continue;
                                                const int64_t wi = ((ci * Co + co) * kh + p) * kw + q;
                                                const double gv = g[(co * Ho + oi) * Wo + oj];
                                                if (gx_needed) gx[xi] += wv[wi] * gv;
                                                if (gw_needed) gw[wi] += xv[xi] * gv;
                                            }
                                        }
                                }
                        if (gx_needed) t.accumulate(ps[0], std::move(gx));
                        if (gw_needed) t.accumulate(ps[1], std::move(gw));
                        if (gb_needed) t.accumulate(ps[2], std::move(gb));
                    });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities and reductions
// ---------------------------------------------------------------------------

Var softplus(Var x) {
    Tape& t = *x.tape;
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_softplus(px[i]);
    return t.record(std::move(out), {x.id}, [](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        const Tensor& xv = t.value(p);
        Tensor gx(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * sigmoid(xv[i]);
        t.accumulate(p, std::move(gx));
    });
}

Var relu(Var x) {
    Tape& t = *x.tape;
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
    return t.record(std::move(out), {x.id}, [](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        const Tensor& xv = t.value(p);
        Tensor gx(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
        t.accumulate(p, std::move(gx));
    });
}

Var square(Var x) {
    Tape& t = *x.tape;
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = px[i] * px[i];
    return t.record(std::move(out), {x.id}, [](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        const Tensor& xv = t.value(p);
        Tensor gx(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = 2.0 * xv[i] * g[i];
        t.accumulate(p, std::move(gx));
    });
}

Var softmax_rows(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    if (xv.rank() < 1) throw ShapeError("softmax_rows: scalar input " + shape_str(xv.shape()));
    const int64_t m = xv.dim(xv.rank() - 1);
    const int64_t rows = xv.numel() / m;
    Tensor out(xv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = xv.data() + r * m;
        double* o = out.data() + r * m;
        double mx = xi[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            o[j] = std::exp(xi[j] - mx);
            denom += o[j];
        }
        for (int64_t j = 0; j < m; ++j) o[j] /= denom;
    }
    return t.record(std::move(out), {x.id}, [m, rows](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        const Tensor& y = t.value(id);
        Tensor gx(g.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* gi = g.data() + r * m;
            const double* yi = y.data() + r * m;
            double dot = 0.0;
            for (int64_t j = 0; j < m; ++j) dot += gi[j] * yi[j];
            double* o = gx.data() + r * m;
            for (int64_t j = 0; j < m; ++j) o[j] = yi[j] * (gi[j] - dot);
        }
        t.accumulate(p, std::move(gx));
    });
}

Var masked_fill(Var x, const Tensor& keep, double fill) {
    Tape& t = *x.tape;
    require_same_shape("masked_fill", x.val(), keep);
    Tensor out(x.val().shape());
    const double* px = x.val().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = keep[i] != 0.0 ? px[i] : fill;
    Tensor keep_copy = keep;
    return t.record(std::move(out), {x.id}, [keep_copy](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const Tensor& g = t.grad_ref(id);
        Tensor gx(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] = keep_copy[i] != 0.0 ? g[i] : 0.0;
        t.accumulate(p, std::move(gx));
    });
}

Var sum(Var x) {
    Tape& t = *x.tape;
    double acc = 0.0;
    const double* px = x.val().data();
    for (int64_t i = 0; i < x.val().numel(); ++i) acc += px[i];
    return t.record(Tensor::scalar(acc), {x.id}, [](Tape& t, int32_t id) {
        const int32_t p = t.parents(id)[0];
        if (!t.needs_grad(p)) return;
        const double gv = t.grad_ref(id)[0];
        t.accumulate(p, Tensor::full(t.value(p).shape(), gv));
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.val().numel())); }

} // namespace ocn::ad
