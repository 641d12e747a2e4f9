#pragma once

#include <functional>
#include <vector>

#include "fcgl/rng.hpp"
#include "fcgl/tensor.hpp"

namespace fcgl::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Compressed sparse row matrix with fixed (non-differentiable) entries,
/// used for normalized-adjacency propagation.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr;   // size rows+1
    std::vector<int> col;
    std::vector<double> val;
};

/// Reverse-mode tape. Operations record eagerly (define-by-run); backward()
/// walks the record in reverse, which is a valid topological order by
/// construction. One tape per training step, never shared across threads.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&)>;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_[check(v)].value; }
    bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

    /// Gradient of the last backward() target w.r.t. v; zeros if v did not
    /// influence the target. Shape always matches value(v).
    Tensor gradient(Var v) const;
    const Tensor* grad_ptr(Var v) const;

    void accumulate(Var v, Tensor delta);
    void backward(Var loss);
    void reset();
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;           // empty until touched by backward
        bool requires_grad = false;
        std::vector<int> parents;
        BackwardFn backward;
    };

    size_t check(Var v) const;
    std::vector<Node> nodes_;
};

// --- elementwise / linear algebra -----------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_rowvec(Tape& t, Var m, Var v);          // (N,D) + (D,) broadcast over rows
Var matmul(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var x, std::vector<int> shape);

// --- nonlinearities ---------------------------------------------------------

Var relu(Tape& t, Var x);
Var leaky_relu(Tape& t, Var x, double slope);
Var elu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var dropout(Tape& t, Var x, double p, Rng& rng, bool training);

// --- reductions -------------------------------------------------------------

Var sum(Tape& t, Var x);
Var sum_squares(Tape& t, Var x);

// --- softmax / losses -------------------------------------------------------

Var softmax_rows(Tape& t, Var x);

/// Mean softmax cross-entropy over the given rows; labels holds a class id
/// per row of logits. Throws when rows is empty.
Var masked_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels, const std::vector<int>& rows);

/// Sum over rows of weight_i * KL(softmax(logits)_i || teacher_probs_i).
/// Teacher probabilities and weights are constants; gradients flow into
/// logits only.
Var weighted_kl_to_teacher(Tape& t, Var logits, const Tensor& teacher_probs, const Tensor& row_weights);

// --- gather / segment ops (message passing) ---------------------------------

Var gather_rows(Tape& t, Var x, std::vector<int> index);

/// Softmax over groups of entries of e (rank 1) sharing a segment id.
Var segment_softmax(Tape& t, Var e, std::vector<int> segment, int num_segments);

/// out[dst[e]] += coeff[e] * feat[e] for every edge e. coeff rank 1, feat rank 2.
Var edge_aggregate(Tape& t, Var coeff, Var feat, std::vector<int> dst, int num_nodes);

/// Fixed sparse matrix times dense: out = S * x.
Var spmm(Tape& t, const SparseMatrix& s, Var x);

// --- plain (non-recording) helpers ------------------------------------------

Tensor softmax_rows_value(const Tensor& x);
Tensor onehot(int index, int size);

}  // namespace fcgl::ad
