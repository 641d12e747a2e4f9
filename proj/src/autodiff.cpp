#include "fcgl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fcgl::ad {

namespace {

constexpr double kLogFloor = 1e-12;

double clamped_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

bool any_requires_grad(const Tape& t, const std::vector<Var>& parents) {
    for (Var p : parents)
        if (t.requires_grad(p)) return true;
    return false;
}

}  // namespace

size_t Tape::check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("tape: variable does not belong to this context");
    return static_cast<size_t>(v.id);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_requires_grad(*this, parents);
    for (Var p : parents) n.parents.push_back(p.id);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::gradient(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Tensor(n.value.shape().empty() ? std::vector<int>{} : n.value.shape());
    return n.grad;
}

const Tensor* Tape::grad_ptr(Var v) const {
    const Node& n = nodes_[check(v)];
    return n.grad.size() == 0 ? nullptr : &n.grad;
}

void Tape::accumulate(Var v, Tensor delta) {
    Node& n = nodes_[check(v)];
    if (!n.value.same_shape(delta))
        throw std::invalid_argument("tape: gradient shape " + shape_string(delta.shape()) +
                                    " does not match value shape " + shape_string(n.value.shape()));
    if (n.grad.size() == 0)
        n.grad = std::move(delta);
    else
        add_in_place(n.grad, delta);
}

void Tape::backward(Var loss) {
    size_t id = check(loss);
    if (!nodes_[id].value.is_scalar())
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_string(nodes_[id].value.shape()));
    for (Node& n : nodes_) n.grad = Tensor();
    Tensor seed = nodes_[id].value;  // copy shape (scalar), set to 1
    seed[0] = 1.0;
    nodes_[id].grad = std::move(seed);
    for (int i = static_cast<int>(id); i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.grad.size() != 0 && n.backward) n.backward(*this);
    }
}

void Tape::reset() { nodes_.clear(); }

// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = av;
    add_in_place(out, bv);
    Var self{t.size()};
    return t.record(std::move(out), {a, b}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(a)) tp.accumulate(a, g);
        if (tp.requires_grad(b)) tp.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = av;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    Var self{t.size()};
    return t.record(std::move(out), {a, b}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(a)) tp.accumulate(a, g);
        if (tp.requires_grad(b)) {
            Tensor neg = g;
            scale_in_place(neg, -1.0);
            tp.accumulate(b, std::move(neg));
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = av;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Var self{t.size()};
    return t.record(std::move(out), {a, b}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(a)) {
            Tensor da = g;
            const Tensor& bb = tp.value(b);
            for (int64_t i = 0; i < da.size(); ++i) da[i] *= bb[i];
            tp.accumulate(a, std::move(da));
        }
        if (tp.requires_grad(b)) {
            Tensor db = g;
            const Tensor& aa = tp.value(a);
            for (int64_t i = 0; i < db.size(); ++i) db[i] *= aa[i];
            tp.accumulate(b, std::move(db));
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Tensor out = t.value(a);
    scale_in_place(out, s);
    Var self{t.size()};
    return t.record(std::move(out), {a}, [=](Tape& tp) {
        Tensor g = *tp.grad_ptr(self);
        scale_in_place(g, s);
        tp.accumulate(a, std::move(g));
    });
}

Var add_rowvec(Tape& t, Var m, Var v) {
    const Tensor& mv = t.value(m);
    const Tensor& vv = t.value(v);
    if (mv.rank() != 2 || vv.rank() != 1 || mv.dim(1) != vv.dim(0))
        throw std::invalid_argument("add_rowvec: expected (N,D) and (D,)");
    Tensor out = mv;
    const int rows = mv.dim(0), cols = mv.dim(1);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(i, j) += vv[j];
    Var self{t.size()};
    return t.record(std::move(out), {m, v}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(m)) tp.accumulate(m, g);
        if (tp.requires_grad(v)) {
            Tensor dv({g.dim(1)});
            for (int i = 0; i < g.dim(0); ++i)
                for (int j = 0; j < g.dim(1); ++j) dv[j] += g.at(i, j);
            tp.accumulate(v, std::move(dv));
        }
    });
}

Var matmul(Tape& t, Var a, Var b) {
    Tensor out = fcgl::matmul(t.value(a), t.value(b));
    Var self{t.size()};
    return t.record(std::move(out), {a, b}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(a)) tp.accumulate(a, fcgl::matmul(g, tp.value(b), false, true));
        if (tp.requires_grad(b)) tp.accumulate(b, fcgl::matmul(tp.value(a), g, true, false));
    });
}

Var reshape(Tape& t, Var x, std::vector<int> shape) {
    Tensor out = t.value(x).reshaped(shape);
    Var self{t.size()};
    return t.record(std::move(out), {x}, [=](Tape& tp) {
        tp.accumulate(x, tp.grad_ptr(self)->reshaped(tp.value(x).shape()));
    });
}

namespace {

template <typename Fwd, typename DRule>
Var unary_elementwise(Tape& t, Var x, Fwd fwd, DRule drule) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    Var self{t.size()};
    return t.record(std::move(out), {x}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        const Tensor& xin = tp.value(x);
        const Tensor& yout = tp.value(self);
        Tensor dx = g;
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] *= drule(xin[i], yout[i]);
        tp.accumulate(x, std::move(dx));
    });
}

}  // namespace

Var relu(Tape& t, Var x) {
    return unary_elementwise(
        t, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Tape& t, Var x, double slope) {
    return unary_elementwise(
        t, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var elu(Tape& t, Var x) {
    return unary_elementwise(
        t, x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
        [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

Var sigmoid(Tape& t, Var x) {
    return unary_elementwise(
        t, x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var dropout(Tape& t, Var x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout: probability must be < 1");
    const Tensor& xv = t.value(x);
    Tensor mask = xv;
    const double keep_scale = 1.0 / (1.0 - p);
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    Tensor out = xv;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    Var self{t.size()};
    return t.record(std::move(out), {x}, [=](Tape& tp) {
        Tensor dx = *tp.grad_ptr(self);
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
        tp.accumulate(x, std::move(dx));
    });
}

Var sum(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
    Var self{t.size()};
    return t.record(Tensor::scalar(acc), {x}, [=](Tape& tp) {
        const double g = tp.grad_ptr(self)->item();
        tp.accumulate(x, Tensor::full(tp.value(x).shape(), g));
    });
}

Var sum_squares(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i] * xv[i];
    Var self{t.size()};
    return t.record(Tensor::scalar(acc), {x}, [=](Tape& tp) {
        const double g = tp.grad_ptr(self)->item();
        const Tensor& xin = tp.value(x);
        Tensor dx = xin;
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] = 2.0 * g * xin[i];
        tp.accumulate(x, std::move(dx));
    });
}

Var softmax_rows(Tape& t, Var x) {
    Tensor out = softmax_rows_value(t.value(x));
    Var self{t.size()};
    return t.record(std::move(out), {x}, [=](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        const Tensor& p = tp.value(self);
        Tensor dx(p.shape());
        const int rows = p.rows(), cols = p.cols();
        for (int i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += g[static_cast<int64_t>(i) * cols + j] * p[static_cast<int64_t>(i) * cols + j];
            for (int j = 0; j < cols; ++j) {
                const int64_t k = static_cast<int64_t>(i) * cols + j;
                dx[k] = p[k] * (g[k] - dot);
            }
        }
        tp.accumulate(x, std::move(dx));
    });
}

Var masked_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels, const std::vector<int>& rows) {
    const Tensor& z = t.value(logits);
    if (z.rank() != 2) throw std::invalid_argument("masked_cross_entropy: logits must be rank 2");
    if (static_cast<int>(labels.size()) != z.dim(0))
        throw std::invalid_argument("masked_cross_entropy: one label per logits row required");
    if (rows.empty()) throw std::invalid_argument("masked_cross_entropy: empty node selection");
    const int cols = z.dim(1);
    double total = 0.0;
    for (int r : rows) {
        if (r < 0 || r >= z.dim(0)) throw std::invalid_argument("masked_cross_entropy: row index out of range");
        const int label = labels[static_cast<size_t>(r)];
        if (label < 0 || label >= cols) throw std::invalid_argument("masked_cross_entropy: label out of range");
        const double* zr = z.data() + static_cast<size_t>(r) * cols;
        double mx = zr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, zr[j]);
        double lse = 0.0;
        for (int j = 0; j < cols; ++j) lse += std::exp(zr[j] - mx);
        total += (mx + std::log(lse)) - zr[label];
    }
    const double mean = total / static_cast<double>(rows.size());
    Var self{t.size()};
    std::vector<int> rows_copy = rows;
    std::vector<int> labels_copy = labels;
    return t.record(Tensor::scalar(mean), {logits}, [=](Tape& tp) {
        const double g = tp.grad_ptr(self)->item() / static_cast<double>(rows_copy.size());
        const Tensor& zz = tp.value(logits);
        const int c = zz.dim(1);
        Tensor dz(zz.shape());
        for (int r : rows_copy) {
            const double* zr = zz.data() + static_cast<size_t>(r) * c;
            double mx = zr[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, zr[j]);
            double lse = 0.0;
            for (int j = 0; j < c; ++j) lse += std::exp(zr[j] - mx);
            double* dr = dz.data() + static_cast<size_t>(r) * c;
            for (int j = 0; j < c; ++j) dr[j] = g * std::exp(zr[j] - mx) / lse;
            dr[labels_copy[static_cast<size_t>(r)]] -= g;
        }
        tp.accumulate(logits, std::move(dz));
    });
}

Var weighted_kl_to_teacher(Tape& t, Var logits, const Tensor& teacher_probs, const Tensor& row_weights) {
    const Tensor& z = t.value(logits);
    if (!z.same_shape(teacher_probs))
        throw std::invalid_argument("weighted_kl_to_teacher: teacher shape mismatch");
    if (row_weights.rank() != 1 || row_weights.dim(0) != z.dim(0))
        throw std::invalid_argument("weighted_kl_to_teacher: one weight per row required");
    Tensor p = softmax_rows_value(z);
    const int rows = z.dim(0), cols = z.dim(1);
    double total = 0.0;
    std::vector<double> row_kl(static_cast<size_t>(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
        double kl = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double pi = p.at(i, j);
            if (pi <= 0.0) continue;
            kl += pi * (clamped_log(pi) - clamped_log(teacher_probs.at(i, j)));
        }
        row_kl[static_cast<size_t>(i)] = kl;
        total += row_weights[i] * kl;
    }
    Var self{t.size()};
    Tensor teacher = teacher_probs;
    Tensor weights = row_weights;
    return t.record(Tensor::scalar(total), {logits}, [=](Tape& tp) {
        const double g = tp.grad_ptr(self)->item();
        const Tensor& zz = tp.value(logits);
        Tensor pp = softmax_rows_value(zz);
        Tensor dz(zz.shape());
        for (int i = 0; i < rows; ++i) {
            const double w = weights[i] * g;
            for (int j = 0; j < cols; ++j) {
                const double pi = pp.at(i, j);
                const double logratio = clamped_log(pi) - clamped_log(teacher.at(i, j));
                dz.at(i, j) = w * pi * (logratio - row_kl[static_cast<size_t>(i)]);
            }
        }
        tp.accumulate(logits, std::move(dz));
    });
}

Var gather_rows(Tape& t, Var x, std::vector<int> index) {
    const Tensor& xv = t.value(x);
    const int rows = xv.rank() == 1 ? xv.dim(0) : xv.dim(0);
    const int width = xv.rank() == 1 ? 1 : xv.dim(1);
    for (int i : index)
        if (i < 0 || i >= rows) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out(xv.rank() == 1 ? std::vector<int>{static_cast<int>(index.size())}
                              : std::vector<int>{static_cast<int>(index.size()), width});
    for (size_t e = 0; e < index.size(); ++e)
        for (int j = 0; j < width; ++j)
            out[static_cast<int64_t>(e) * width + j] = xv[static_cast<int64_t>(index[e]) * width + j];
    Var self{t.size()};
    return t.record(std::move(out), {x}, [=, idx = std::move(index)](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        Tensor dx(tp.value(x).shape());
        for (size_t e = 0; e < idx.size(); ++e)
            for (int j = 0; j < width; ++j)
                dx[static_cast<int64_t>(idx[e]) * width + j] += g[static_cast<int64_t>(e) * width + j];
        tp.accumulate(x, std::move(dx));
    });
}

Var segment_softmax(Tape& t, Var e, std::vector<int> segment, int num_segments) {
    const Tensor& ev = t.value(e);
    if (ev.rank() != 1) throw std::invalid_argument("segment_softmax: rank-1 input required");
    if (static_cast<int>(segment.size()) != ev.dim(0))
        throw std::invalid_argument("segment_softmax: one segment id per entry required");
    const int n = ev.dim(0);
    std::vector<double> seg_max(static_cast<size_t>(num_segments), -1e300);
    for (int i = 0; i < n; ++i) seg_max[static_cast<size_t>(segment[static_cast<size_t>(i)])] =
        std::max(seg_max[static_cast<size_t>(segment[static_cast<size_t>(i)])], ev[i]);
    std::vector<double> seg_sum(static_cast<size_t>(num_segments), 0.0);
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        const int s = segment[static_cast<size_t>(i)];
        out[i] = std::exp(ev[i] - seg_max[static_cast<size_t>(s)]);
        seg_sum[static_cast<size_t>(s)] += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= seg_sum[static_cast<size_t>(segment[static_cast<size_t>(i)])];
    Var self{t.size()};
    return t.record(std::move(out), {e}, [=, seg = std::move(segment)](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        const Tensor& alpha = tp.value(self);
        std::vector<double> seg_dot(static_cast<size_t>(num_segments), 0.0);
        for (int i = 0; i < n; ++i) seg_dot[static_cast<size_t>(seg[static_cast<size_t>(i)])] += alpha[i] * g[i];
        Tensor de({n});
        for (int i = 0; i < n; ++i)
            de[i] = alpha[i] * (g[i] - seg_dot[static_cast<size_t>(seg[static_cast<size_t>(i)])]);
        tp.accumulate(e, std::move(de));
    });
}

Var edge_aggregate(Tape& t, Var coeff, Var feat, std::vector<int> dst, int num_nodes) {
    const Tensor& cv = t.value(coeff);
    const Tensor& fv = t.value(feat);
    if (cv.rank() != 1 || fv.rank() != 2 || cv.dim(0) != fv.dim(0))
        throw std::invalid_argument("edge_aggregate: expected coeff (E,) and feat (E,D)");
    if (static_cast<int>(dst.size()) != cv.dim(0))
        throw std::invalid_argument("edge_aggregate: one destination per edge required");
    const int edges = cv.dim(0), width = fv.dim(1);
    Tensor out({num_nodes, width});
    for (int e = 0; e < edges; ++e) {
        double* orow = out.data() + static_cast<size_t>(dst[static_cast<size_t>(e)]) * width;
        const double* frow = fv.data() + static_cast<size_t>(e) * width;
        const double c = cv[e];
        for (int j = 0; j < width; ++j) orow[j] += c * frow[j];
    }
    Var self{t.size()};
    return t.record(std::move(out), {coeff, feat}, [=, d = std::move(dst)](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        if (tp.requires_grad(coeff)) {
            const Tensor& ff = tp.value(feat);
            Tensor dc({edges});
            for (int e = 0; e < edges; ++e) {
                const double* grow = g.data() + static_cast<size_t>(d[static_cast<size_t>(e)]) * width;
                const double* frow = ff.data() + static_cast<size_t>(e) * width;
                double acc = 0.0;
                for (int j = 0; j < width; ++j) acc += grow[j] * frow[j];
                dc[e] = acc;
            }
            tp.accumulate(coeff, std::move(dc));
        }
        if (tp.requires_grad(feat)) {
            const Tensor& cc = tp.value(coeff);
            Tensor df({edges, width});
            for (int e = 0; e < edges; ++e) {
                const double* grow = g.data() + static_cast<size_t>(d[static_cast<size_t>(e)]) * width;
                double* frow = df.data() + static_cast<size_t>(e) * width;
                const double c = cc[e];
                for (int j = 0; j < width; ++j) frow[j] = c * grow[j];
            }
            tp.accumulate(feat, std::move(df));
        }
    });
}

Var spmm(Tape& t, const SparseMatrix& s, Var x) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2 || xv.dim(0) != s.cols) throw std::invalid_argument("spmm: shape mismatch");
    const int width = xv.dim(1);
    Tensor out({s.rows, width});
    for (int i = 0; i < s.rows; ++i) {
        double* orow = out.data() + static_cast<size_t>(i) * width;
        for (int k = s.row_ptr[static_cast<size_t>(i)]; k < s.row_ptr[static_cast<size_t>(i) + 1]; ++k) {
            const double w = s.val[static_cast<size_t>(k)];
            const double* xrow = xv.data() + static_cast<size_t>(s.col[static_cast<size_t>(k)]) * width;
            for (int j = 0; j < width; ++j) orow[j] += w * xrow[j];
        }
    }
    Var self{t.size()};
    SparseMatrix sc = s;
    return t.record(std::move(out), {x}, [=, sm = std::move(sc)](Tape& tp) {
        const Tensor& g = *tp.grad_ptr(self);
        Tensor dx(tp.value(x).shape());
        for (int i = 0; i < sm.rows; ++i) {
            const double* grow = g.data() + static_cast<size_t>(i) * width;
            for (int k = sm.row_ptr[static_cast<size_t>(i)]; k < sm.row_ptr[static_cast<size_t>(i) + 1]; ++k) {
                const double w = sm.val[static_cast<size_t>(k)];
                double* xr = dx.data() + static_cast<size_t>(sm.col[static_cast<size_t>(k)]) * width;
                for (int j = 0; j < width; ++j) xr[j] += w * grow[j];
            }
        }
        tp.accumulate(x, std::move(dx));
    });
}

Tensor softmax_rows_value(const Tensor& x) {
    if (x.rank() > 2) throw std::invalid_argument("softmax: rank 1 or 2 required");
    const int rows = x.rows(), cols = x.cols();
    Tensor out = x;
    for (int i = 0; i < rows; ++i) {
        double* r = out.data() + static_cast<size_t>(i) * cols;
        double mx = r[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (int j = 0; j < cols; ++j) r[j] /= sum;
    }
    return out;
}

Tensor onehot(int index, int size) {
    Tensor t({size});
    if (index < 0 || index >= size) throw std::invalid_argument("onehot: index out of range");
    t[index] = 1.0;
    return t;
}

}  // namespace fcgl::ad
