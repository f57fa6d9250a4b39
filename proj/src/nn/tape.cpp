#include "storm/nn/tape.hpp"

#include <cmath>
#include <utility>

#include "storm/errors.hpp"

namespace storm::nn {

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw InternalError(std::string("tape: ") + what);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

const Matrix& Var::val() const { return tape->value(id); }

Var Tape::input(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value, Matrix* grad_sink) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, true});
    int id = static_cast<int>(nodes_.size() - 1);
    sinks_.emplace_back(id, grad_sink);
    return Var{this, id};
}

Var Tape::record(Matrix value, bool requires_grad, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad ? std::move(back) : nullptr,
                          requires_grad});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Matrix& Tape::grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Var& root) {
    check(root.tape == this, "backward root from another tape");
    check(nodes_[root.id].value.size() == 1, "backward root must be scalar");
    grad(root.id)(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.back && n.grad.size() != 0) n.back(*this);
    }
    for (auto& [id, sink] : sinks_) {
        if (sink != nullptr && nodes_[id].grad.size() != 0) *sink += nodes_[id].grad;
    }
}

namespace {

bool same_shape(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

Var add(Var a, Var b) {
    check(same_shape(a.val(), b.val()), "add shape mismatch");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val() + b.val(), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g);
        t.add_grad(ib, g);
    });
}

Var sub(Var a, Var b) {
    check(same_shape(a.val(), b.val()), "sub shape mismatch");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val() - b.val(), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g);
        t.add_grad(ib, -g);
    });
}

Var mul(Var a, Var b) {
    check(same_shape(a.val(), b.val()), "mul shape mismatch");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().cwiseProduct(b.val()), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g.cwiseProduct(t.value(ib)));
        t.add_grad(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var div_elem(Var a, Var b) {
    check(same_shape(a.val(), b.val()), "div shape mismatch");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().cwiseQuotient(b.val()), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        const Matrix& bv = t.value(ib);
        t.add_grad(ia, g.cwiseQuotient(bv));
        t.add_grad(ib, -g.cwiseProduct(t.value(ia)).cwiseQuotient(bv.cwiseProduct(bv)));
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val() * s, rg, [=](Tape& t) { t.add_grad(ia, t.grad(out) * s); });
}

Var add_scalar(Var a, double c) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array() + c, rg,
                          [=](Tape& t) { t.add_grad(ia, t.grad(out)); });
}

Var scale_by(Var a, Var s) {
    check(s.val().size() == 1, "scale_by: scalar expected");
    bool rg = a.tape->needs_grad(a.id) || s.tape->needs_grad(s.id);
    int ia = a.id, is = s.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val() * s.val()(0, 0), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g * t.value(is)(0, 0));
        if (t.needs_grad(is)) {
            Matrix gs(1, 1);
            gs(0, 0) = g.cwiseProduct(t.value(ia)).sum();
            t.add_grad(is, gs);
        }
    });
}

Var matmul(Var a, Var b) {
    check(a.val().cols() == b.val().rows(), "matmul inner dim");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val() * b.val(), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g * t.value(ib).transpose());
        t.add_grad(ib, t.value(ia).transpose() * g);
    });
}

Var transpose(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().transpose(), rg,
                          [=](Tape& t) { t.add_grad(ia, t.grad(out).transpose()); });
}

Var add_rowvec(Var a, Var r) {
    check(r.val().rows() == 1 && r.val().cols() == a.val().cols(), "add_rowvec shape");
    bool rg = a.tape->needs_grad(a.id) || r.tape->needs_grad(r.id);
    int ia = a.id, ir = r.id, out = static_cast<int>(a.tape->size());
    Matrix v = a.val();
    v.rowwise() += r.val().row(0);
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        t.add_grad(ia, g);
        t.add_grad(ir, g.colwise().sum());
    });
}

Var mul_rowvec(Var a, Var r) {
    check(r.val().rows() == 1 && r.val().cols() == a.val().cols(), "mul_rowvec shape");
    bool rg = a.tape->needs_grad(a.id) || r.tape->needs_grad(r.id);
    int ia = a.id, ir = r.id, out = static_cast<int>(a.tape->size());
    Matrix v = a.val().array().rowwise() * r.val().row(0).array();
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        if (t.needs_grad(ia))
            t.grad(ia).array() += g.array().rowwise() * t.value(ir).row(0).array();
        t.add_grad(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
    });
}

Var sum(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    Matrix v(1, 1);
    v(0, 0) = a.val().sum();
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        if (t.needs_grad(ia)) t.grad(ia).array() += t.grad(out)(0, 0);
    });
}

Var mean(Var a) {
    double inv = 1.0 / static_cast<double>(a.val().size());
    return scale(sum(a), inv);
}

Var sum_sq(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    Matrix v(1, 1);
    v(0, 0) = a.val().squaredNorm();
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        t.add_grad(ia, 2.0 * t.grad(out)(0, 0) * t.value(ia));
    });
}

Var sum_rows(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().rowwise().sum(), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        if (t.needs_grad(ia))
            t.grad(ia).array().colwise() += g.col(0).array();
    });
}

Var mean_over_rows(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    double inv = 1.0 / static_cast<double>(a.val().rows());
    return a.tape->record(a.val().colwise().mean(), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        if (t.needs_grad(ia))
            t.grad(ia).array().rowwise() += inv * g.row(0).array();
    });
}

Var repeat_row(Var r, Eigen::Index m) {
    check(r.val().rows() == 1, "repeat_row: row vector expected");
    bool rg = r.tape->needs_grad(r.id);
    int ir = r.id, out = static_cast<int>(r.tape->size());
    return r.tape->record(r.val().replicate(m, 1), rg, [=](Tape& t) {
        t.add_grad(ir, t.grad(out).colwise().sum());
    });
}

Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
    check(r0 >= 0 && r0 + n <= a.val().rows(), "slice_rows range");
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().middleRows(r0, n), rg, [=](Tape& t) {
        if (t.needs_grad(ia)) t.grad(ia).middleRows(r0, n) += t.grad(out);
    });
}

Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
    check(c0 >= 0 && c0 + n <= a.val().cols(), "slice_cols range");
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().middleCols(c0, n), rg, [=](Tape& t) {
        if (t.needs_grad(ia)) t.grad(ia).middleCols(c0, n) += t.grad(out);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    Tape* tape = parts.front().tape;
    Eigen::Index rows = 0, cols = parts.front().val().cols();
    bool rg = false;
    for (const Var& p : parts) {
        check(p.val().cols() == cols, "concat_rows width");
        rows += p.val().rows();
        rg = rg || tape->needs_grad(p.id);
    }
    Matrix v(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> spans;  // (id, first row)
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        v.middleRows(at, p.val().rows()) = p.val();
        spans.emplace_back(p.id, at);
        at += p.val().rows();
    }
    int out = static_cast<int>(tape->size());
    return tape->record(std::move(v), rg, [out, spans](Tape& t) {
        const Matrix& g = t.grad(out);
        for (auto& [id, r0] : spans) {
            if (t.needs_grad(id)) t.grad(id) += g.middleRows(r0, t.value(id).rows());
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    Tape* tape = parts.front().tape;
    Eigen::Index cols = 0, rows = parts.front().val().rows();
    bool rg = false;
    for (const Var& p : parts) {
        check(p.val().rows() == rows, "concat_cols height");
        cols += p.val().cols();
        rg = rg || tape->needs_grad(p.id);
    }
    Matrix v(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        v.middleCols(at, p.val().cols()) = p.val();
        spans.emplace_back(p.id, at);
        at += p.val().cols();
    }
    int out = static_cast<int>(tape->size());
    return tape->record(std::move(v), rg, [out, spans](Tape& t) {
        const Matrix& g = t.grad(out);
        for (auto& [id, c0] : spans) {
            if (t.needs_grad(id)) t.grad(id) += g.middleCols(c0, t.value(id).cols());
        }
    });
}

Var gather_rows(Var table, std::vector<int> idx) {
    const Matrix& tv = table.val();
    Matrix v(static_cast<Eigen::Index>(idx.size()), tv.cols());
    for (std::size_t m = 0; m < idx.size(); ++m) {
        check(idx[m] >= 0 && idx[m] < tv.rows(), "gather_rows index");
        v.row(static_cast<Eigen::Index>(m)) = tv.row(idx[m]);
    }
    bool rg = table.tape->needs_grad(table.id);
    int it = table.id, out = static_cast<int>(table.tape->size());
    return table.tape->record(std::move(v), rg, [out, it, idx = std::move(idx)](Tape& t) {
        if (!t.needs_grad(it)) return;
        const Matrix& g = t.grad(out);
        Matrix& gt = t.grad(it);
        for (std::size_t m = 0; m < idx.size(); ++m)
            gt.row(idx[m]) += g.row(static_cast<Eigen::Index>(m));
    });
}

Var rows_mean_groups(Var a, std::vector<std::vector<int>> groups) {
    const Matrix& av = a.val();
    Matrix v(static_cast<Eigen::Index>(groups.size()), av.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        check(!groups[g].empty(), "rows_mean_groups: empty group");
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(av.cols());
        for (int r : groups[g]) acc += av.row(r);
        v.row(static_cast<Eigen::Index>(g)) = acc / static_cast<double>(groups[g].size());
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [out, ia, groups = std::move(groups)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        Matrix& ga = t.grad(ia);
        for (std::size_t k = 0; k < groups.size(); ++k) {
            double inv = 1.0 / static_cast<double>(groups[k].size());
            for (int r : groups[k]) ga.row(r) += inv * g.row(static_cast<Eigen::Index>(k));
        }
    });
}

Var permute_cells(Var a, Eigen::Index rows, Eigen::Index cols, std::vector<int> map) {
    const Matrix& av = a.val();
    check(static_cast<Eigen::Index>(map.size()) == rows * cols, "permute_cells map size");
    check(rows * cols == av.size(), "permute_cells element count");
    Eigen::Index in_cols = av.cols();
    Matrix v(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            int src = map[r * cols + c];
            v(r, c) = av(src / in_cols, src % in_cols);
        }
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg,
                          [out, ia, rows, cols, in_cols, map = std::move(map)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        Matrix& ga = t.grad(ia);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                int src = map[r * cols + c];
                ga(src / in_cols, src % in_cols) += g(r, c);
            }
        }
    });
}

Var softmax_rows(Var a) {
    Matrix v = a.val();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        double mx = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - mx).exp();
        v.row(r) /= v.row(r).sum();
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        const Matrix& y = t.value(out);
        Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        Matrix centered = g;
        centered.array().colwise() -= dot.array();
        t.grad(ia) += y.cwiseProduct(centered);
    });
}

Var logsumexp_rows(Var a) {
    const Matrix& av = a.val();
    Matrix v(av.rows(), 1);
    Matrix soft(av.rows(), av.cols());
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
        double mx = av.row(r).maxCoeff();
        Eigen::RowVectorXd e = (av.row(r).array() - mx).exp();
        double s = e.sum();
        v(r, 0) = mx + std::log(s);
        soft.row(r) = e / s;
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [out, ia, soft = std::move(soft)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        t.grad(ia).array() += soft.array().colwise() * g.col(0).array();
    });
}

Var take_diag(Var a) {
    check(a.val().rows() == a.val().cols(), "take_diag: square expected");
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().diagonal(), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        t.grad(ia).diagonal() += t.grad(out).col(0);
    });
}

Var take_at(Var a, std::vector<int> col_idx) {
    const Matrix& av = a.val();
    check(static_cast<Eigen::Index>(col_idx.size()) == av.rows(), "take_at size");
    Matrix v(av.rows(), 1);
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
        check(col_idx[r] >= 0 && col_idx[r] < av.cols(), "take_at index");
        v(r, 0) = av(r, col_idx[r]);
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [out, ia, col_idx = std::move(col_idx)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        Matrix& ga = t.grad(ia);
        for (Eigen::Index r = 0; r < g.rows(); ++r) ga(r, col_idx[r]) += g(r, 0);
    });
}

Var layer_norm_rows(Var a, double eps) {
    const Matrix& av = a.val();
    Matrix v(av.rows(), av.cols());
    Eigen::VectorXd inv_sigma(av.rows());
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
        double mu = av.row(r).mean();
        double var = (av.row(r).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        v.row(r) = (av.row(r).array() - mu) * is;
        inv_sigma(r) = is;
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [out, ia, inv_sigma = std::move(inv_sigma)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        const Matrix& y = t.value(out);
        Matrix& ga = t.grad(ia);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            double gm = g.row(r).mean();
            double gym = g.row(r).cwiseProduct(y.row(r)).mean();
            ga.row(r) += inv_sigma(r) * (g.row(r).array() - gm - y.row(r).array() * gym).matrix();
        }
    });
}

Var gelu(Var a) {
    auto phi = [](double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); };
    Matrix v = a.val().unaryExpr([&](double x) { return x * phi(x); });
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        Matrix d = t.value(ia).unaryExpr([&](double x) {
            return phi(x) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
        t.grad(ia).array() += t.grad(out).array() * d.array();
    });
}

Var tanh_op(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array().tanh(), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const auto& y = t.value(out).array();
        t.grad(ia).array() += t.grad(out).array() * (1.0 - y.square());
    });
}

Var softplus(Var a) {
    const auto& x = a.val().array();
    // log(1+e^x), stable for large |x|
    Matrix v = (x > 30.0).select(x, (1.0 + x.min(30.0).exp()).log());
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const auto& xx = t.value(ia).array();
        Eigen::ArrayXXd sig = 1.0 / (1.0 + (-xx).exp());
        t.grad(ia).array() += t.grad(out).array() * sig;
    });
}

Var exp_op(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array().exp(), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        t.grad(ia).array() += t.grad(out).array() * t.value(out).array();
    });
}

Var log_op(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array().log(), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        t.grad(ia).array() += t.grad(out).array() / t.value(ia).array();
    });
}

Var square(Var a) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array().square(), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        t.grad(ia).array() += 2.0 * t.grad(out).array() * t.value(ia).array();
    });
}

Var xlogx(Var a) {
    const auto& x = a.val().array();
    Matrix v = (x > 0.0).select(x * x.max(1e-300).log(), Eigen::ArrayXXd::Zero(x.rows(), x.cols()));
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const auto& xx = t.value(ia).array();
        Eigen::ArrayXXd d = (xx > 0.0).select(xx.max(1e-300).log() + 1.0,
                                              Eigen::ArrayXXd::Zero(xx.rows(), xx.cols()));
        t.grad(ia).array() += t.grad(out).array() * d;
    });
}

Var minimum(Var a, Var b) {
    check(same_shape(a.val(), b.val()), "minimum shape mismatch");
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().cwiseMin(b.val()), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        const auto& av = t.value(ia).array();
        const auto& bv = t.value(ib).array();
        if (t.needs_grad(ia))
            t.grad(ia).array() += g.array() * (av <= bv).cast<double>();
        if (t.needs_grad(ib))
            t.grad(ib).array() += g.array() * (av > bv).cast<double>();
    });
}

Var clamp(Var a, double lo, double hi) {
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(a.val().array().max(lo).min(hi), rg, [=](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const auto& x = t.value(ia).array();
        t.grad(ia).array() +=
            t.grad(out).array() * ((x >= lo) && (x <= hi)).cast<double>();
    });
}

Var pairwise_sqdist(Var a, Var b) {
    const Matrix& av = a.val();
    const Matrix& bv = b.val();
    check(av.cols() == bv.cols(), "pairwise_sqdist width");
    Eigen::VectorXd an = av.rowwise().squaredNorm();
    Eigen::VectorXd bn = bv.rowwise().squaredNorm();
    Matrix v = (-2.0 * av * bv.transpose());
    v.colwise() += an;
    v.rowwise() += bn.transpose();
    v = v.cwiseMax(0.0);  // guard tiny negative round-off
    bool rg = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ia = a.id, ib = b.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [=](Tape& t) {
        const Matrix& g = t.grad(out);
        const Matrix& A = t.value(ia);
        const Matrix& B = t.value(ib);
        if (t.needs_grad(ia)) {
            // d(m,k) = |a_m|^2 - 2 a_m.b_k + |b_k|^2
            t.grad(ia) += 2.0 * (g.rowwise().sum().asDiagonal() * A - g * B);
        }
        if (t.needs_grad(ib)) {
            t.grad(ib) += 2.0 * (g.colwise().sum().asDiagonal() * B - g.transpose() * A);
        }
    });
}

Var row_l2_normalize(Var a, double eps) {
    const Matrix& av = a.val();
    Matrix v(av.rows(), av.cols());
    Eigen::VectorXd norms(av.rows());
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
        double n = av.row(r).norm() + eps;
        v.row(r) = av.row(r) / n;
        norms(r) = n;
    }
    bool rg = a.tape->needs_grad(a.id);
    int ia = a.id, out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), rg, [out, ia, norms = std::move(norms)](Tape& t) {
        if (!t.needs_grad(ia)) return;
        const Matrix& g = t.grad(out);
        const Matrix& x = t.value(ia);
        Matrix& ga = t.grad(ia);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            double n = norms(r);
            double xg = x.row(r).dot(g.row(r));
            ga.row(r) += g.row(r) / n - x.row(r) * (xg / (n * n * n));
        }
    });
}

Var detach(Var a) { return a.tape->input(a.val()); }

}  // namespace storm::nn
