#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "storm/nn/params.hpp"

namespace storm::nn {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& val() const;
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }
    double scalar() const { return val()(0, 0); }
};

// Reverse-mode tape. Nodes are recorded in execution order; backward() walks
// them in reverse, so the recording order is already a topological order.
class Tape {
public:
    struct Node {
        Matrix value;
        Matrix grad;  // empty until first touched in backward
        std::function<void(Tape&)> back;
        bool requires_grad = false;
    };

    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf with no gradient (inputs, targets, frozen constants).
    Var input(Matrix value);

    // Leaf that accumulates its gradient into `sink` after backward().
    Var leaf(Matrix value, Matrix* grad_sink);

    // Leaf backed by a model parameter.
    Var use(Param& p) { return leaf(p.value, &p.grad); }

    Var record(Matrix value, bool requires_grad, std::function<void(Tape&)> back);

    const Matrix& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].requires_grad; }

    // Gradient buffer of a node, materialized as zeros on first access.
    Matrix& grad(int id);

    // Accumulate g into node id's gradient if that node wants one.
    template <typename Expr>
    void add_grad(int id, const Expr& g) {
        if (nodes_[id].requires_grad) grad(id) += g;
    }

    // Run reverse pass from a 1x1 root; flushes leaf gradients into their sinks.
    void backward(const Var& root);

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<int, Matrix*>> sinks_;
};

// ---- op library ----------------------------------------------------------
// All ops append exactly one node and return its handle. Shapes are checked
// with InternalError since mismatches indicate caller bugs, not user input.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // elementwise
Var div_elem(Var a, Var b);       // elementwise
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double c);
Var scale_by(Var a, Var s);       // s is 1x1
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_rowvec(Var a, Var r);     // r is 1xC, broadcast over rows
Var mul_rowvec(Var a, Var r);
Var sum(Var a);                   // 1x1
Var mean(Var a);                  // 1x1
Var sum_sq(Var a);                // 1x1 sum of squares
Var sum_rows(Var a);              // MxC -> Mx1
Var mean_over_rows(Var a);        // MxC -> 1xC (column means)
Var repeat_row(Var r, Eigen::Index m);
Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var table, std::vector<int> idx);
// Mean of selected row groups: out.row(g) = mean of a.row(r) for r in groups[g].
Var rows_mean_groups(Var a, std::vector<std::vector<int>> groups);
// Rearrangement: out(r,c) = in(map[r*cols+c] / in_cols, map[r*cols+c] % in_cols).
Var permute_cells(Var a, Eigen::Index rows, Eigen::Index cols, std::vector<int> map);
Var softmax_rows(Var a);
Var logsumexp_rows(Var a);        // Mx1
Var take_diag(Var a);             // BxB -> Bx1
Var take_at(Var a, std::vector<int> col_idx);  // Mx1, picks a(m, col_idx[m])
Var layer_norm_rows(Var a, double eps = 1e-5);
Var gelu(Var a);
Var tanh_op(Var a);
Var softplus(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var square(Var a);
Var xlogx(Var a);                 // x*log(x) with 0*log(0) := 0
Var minimum(Var a, Var b);
Var clamp(Var a, double lo, double hi);
Var pairwise_sqdist(Var a, Var b);  // MxH, KxH -> MxK squared distances
Var row_l2_normalize(Var a, double eps = 1e-12);
Var detach(Var a);

}  // namespace storm::nn
