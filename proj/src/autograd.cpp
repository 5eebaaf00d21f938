#include "sketchclip/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchclip::ag {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    if (a.tape() != b.tape()) throw std::logic_error("autograd: vars belong to different tapes");
    return *a.tape();
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string("autograd ") + op + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
    }
}

}  // namespace

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, record_, nullptr, {}});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    const bool needs = record_ && p.trainable;
    nodes_.push_back(Node{p.value, {}, needs, needs ? &p : nullptr, {}});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(&p, id);
    return Var(this, id);
}

Var Tape::record(Matrix value, bool requires_grad, std::function<void(const Matrix&)> backward) {
    const bool needs = record_ && requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
        static thread_local Matrix empty;
        empty = Matrix::Zero(n.value.rows(), n.value.cols());
        return empty;
    }
    return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Var& root) {
    if (root.tape() != this) throw std::logic_error("autograd: root belongs to another tape");
    if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("autograd: backward needs a 1x1 root");
    if (!root.requires_grad()) return;
    nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(n.grad);
        if (n.param) n.param->grad += n.grad;
    }
}

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    check_same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    check_same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    check_same_shape(a, b, "mul");
    const int ia = a.id(), ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                    [&t, ia, ib](const Matrix& g) {
                        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                    });
}

Var scale(const Var& a, double s) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value() * s, a.requires_grad(), [&t, ia, s](const Matrix& g) { t.accumulate(ia, g * s); });
}

Var scale_by(const Var& a, const Var& s) {
    Tape& t = same_tape(a, s);
    if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("autograd scale_by: scalar must be 1x1");
    const int ia = a.id(), is = s.id();
    return t.record(a.value() * s.scalar(), a.requires_grad() || s.requires_grad(), [&t, ia, is](const Matrix& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(is)(0, 0));
        if (t.requires_grad(is)) t.accumulate(is, Matrix::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
    });
}

Var add_row(const Var& a, const Var& r) {
    Tape& t = same_tape(a, r);
    if (r.rows() != 1 || r.cols() != a.cols()) throw std::invalid_argument("autograd add_row: row shape mismatch");
    const int ia = a.id(), ir = r.id();
    Matrix out = a.value();
    out.rowwise() += r.value().row(0);
    return t.record(std::move(out), a.requires_grad() || r.requires_grad(), [&t, ia, ir](const Matrix& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
    });
}

Var add_constant(const Var& a, const Matrix& c) {
    Tape& t = *a.tape();
    if (c.rows() != a.rows() || c.cols() != a.cols()) throw std::invalid_argument("autograd add_constant: shape mismatch");
    const int ia = a.id();
    return t.record(a.value() + c, a.requires_grad(), [&t, ia](const Matrix& g) { t.accumulate(ia, g); });
}

Var matmul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("autograd matmul: inner dimension mismatch (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + ")");
    }
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() * b.value(), a.requires_grad() || b.requires_grad(), [&t, ia, ib](const Matrix& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

Var transpose(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value().transpose(), a.requires_grad(),
                    [&t, ia](const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var linear(const Var& x, const Var& w, const Var* b) {
    Tape& t = same_tape(x, w);
    if (x.cols() != w.cols()) {
        throw std::invalid_argument("autograd linear: input width " + std::to_string(x.cols()) +
                                    " does not match weight in-features " + std::to_string(w.cols()));
    }
    Matrix out = x.value() * w.value().transpose();
    int ib = -1;
    bool needs = x.requires_grad() || w.requires_grad();
    if (b) {
        if (b->tape() != &t) throw std::logic_error("autograd: vars belong to different tapes");
        if (b->rows() != 1 || b->cols() != w.rows()) throw std::invalid_argument("autograd linear: bias shape mismatch");
        out.rowwise() += b->value().row(0);
        ib = b->id();
        needs = needs || b->requires_grad();
    }
    const int ix = x.id(), iw = w.id();
    return t.record(std::move(out), needs, [&t, ix, iw, ib](const Matrix& g) {
        if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw));
        if (t.requires_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
        if (ib >= 0 && t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    });
}

Var relu(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value().cwiseMax(0.0), a.requires_grad(), [&t, ia](const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct((t.value(ia).array() > 0.0).cast<double>().matrix()));
    });
}

Var sigmoid(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    Matrix yc = y;
    return t.record(std::move(y), a.requires_grad(), [&t, ia, yc = std::move(yc)](const Matrix& g) {
        t.accumulate(ia, (g.array() * yc.array() * (1.0 - yc.array())).matrix());
    });
}

Var tanh(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().array().tanh().matrix();
    Matrix yc = y;
    return t.record(std::move(y), a.requires_grad(), [&t, ia, yc = std::move(yc)](const Matrix& g) {
        t.accumulate(ia, (g.array() * (1.0 - yc.array().square())).matrix());
    });
}

Var quick_gelu(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const Matrix s = (1.0 + (-1.702 * a.value().array()).exp()).inverse().matrix();
    Matrix y = a.value().cwiseProduct(s);
    return t.record(std::move(y), a.requires_grad(), [&t, ia, s](const Matrix& g) {
        const auto x = t.value(ia).array();
        const auto sa = s.array();
        t.accumulate(ia, (g.array() * (sa + 1.702 * x * sa * (1.0 - sa))).matrix());
    });
}

Var one_minus(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record((1.0 - a.value().array()).matrix(), a.requires_grad(),
                    [&t, ia](const Matrix& g) { t.accumulate(ia, -g); });
}

Var softmax_rows(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double m = a.value().row(r).maxCoeff();
        y.row(r) = (a.value().row(r).array() - m).exp().matrix();
        y.row(r) /= y.row(r).sum();
    }
    Matrix yc = y;
    return t.record(std::move(y), a.requires_grad(), [&t, ia, yc = std::move(yc)](const Matrix& g) {
        const Eigen::VectorXd dots = g.cwiseProduct(yc).rowwise().sum();
        Matrix gi = g;
        gi.colwise() -= dots;
        t.accumulate(ia, gi.cwiseProduct(yc));
    });
}

Var log_softmax_rows(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double m = a.value().row(r).maxCoeff();
        const double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
        y.row(r) = (a.value().row(r).array() - lse).matrix();
    }
    const Matrix p = y.array().exp().matrix();
    return t.record(std::move(y), a.requires_grad(), [&t, ia, p](const Matrix& g) {
        const Eigen::VectorXd sums = g.rowwise().sum();
        Matrix gi = g;
        for (Eigen::Index r = 0; r < gi.rows(); ++r) gi.row(r) -= sums(r) * p.row(r);
        t.accumulate(ia, gi);
    });
}

Var log_clamped(const Var& a, double floor) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().unaryExpr([floor](double v) { return std::log(v > floor ? v : floor); });
    return t.record(std::move(y), a.requires_grad(), [&t, ia, floor](const Matrix& g) {
        const Matrix& x = t.value(ia);
        Matrix gi(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.size(); ++i) gi(i) = x(i) > floor ? g(i) / x(i) : 0.0;
        t.accumulate(ia, gi);
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    Tape& t = same_tape(x, gamma);
    const Eigen::Index n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw std::invalid_argument("autograd layer_norm: parameter width mismatch");
    }
    Matrix xhat(x.rows(), n);
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.value().row(r).mean();
        const auto centered = (x.value().row(r).array() - mu).matrix();
        const double var = centered.squaredNorm() / static_cast<double>(n);
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = centered * inv_std(r);
    }
    Matrix y = xhat;
    y.array().rowwise() *= gamma.value().row(0).array();
    y.rowwise() += beta.value().row(0);
    const int ix = x.id(), ig = gamma.id(), ib = beta.id();
    const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return t.record(std::move(y), needs, [&t, ix, ig, ib, xhat, inv_std, n](const Matrix& g) {
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (!t.requires_grad(ix)) return;
        Matrix gx(g.rows(), n);
        const auto gamma_row = t.value(ig).row(0).array();
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const Eigen::RowVectorXd gh = (g.row(r).array() * gamma_row).matrix();
            const double m1 = gh.mean();
            const double m2 = gh.cwiseProduct(xhat.row(r)).mean();
            gx.row(r) = ((gh.array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
        }
        t.accumulate(ix, gx);
    });
}

Var l2_normalize_rows(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Eigen::VectorXd norms = a.value().rowwise().norm();
    for (Eigen::Index r = 0; r < norms.size(); ++r) {
        if (!(norms(r) > 0.0)) throw std::domain_error("cosine similarity undefined for a zero-norm feature");
    }
    Matrix y = a.value();
    for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) /= norms(r);
    Matrix yc = y;
    return t.record(std::move(y), a.requires_grad(), [&t, ia, yc = std::move(yc), norms](const Matrix& g) {
        Matrix gi(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double d = g.row(r).dot(yc.row(r));
            gi.row(r) = (g.row(r) - d * yc.row(r)) / norms(r);
        }
        t.accumulate(ia, gi);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("autograd concat_rows: no inputs");
    Tape& t = *parts.front().tape();
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    bool needs = false;
    std::vector<std::pair<int, Eigen::Index>> spans;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw std::logic_error("autograd: vars belong to different tapes");
        if (p.cols() != cols && p.rows() > 0) throw std::invalid_argument("autograd concat_rows: column mismatch");
        spans.emplace_back(p.id(), p.rows());
        rows += p.rows();
        needs = needs || p.requires_grad();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        if (p.rows() > 0) out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return t.record(std::move(out), needs, [&t, spans](const Matrix& g) {
        Eigen::Index pos = 0;
        for (const auto& [id, n] : spans) {
            if (n > 0 && t.requires_grad(id)) t.accumulate(id, g.middleRows(pos, n));
            pos += n;
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("autograd concat_cols: no inputs");
    Tape& t = *parts.front().tape();
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    bool needs = false;
    std::vector<std::pair<int, Eigen::Index>> spans;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw std::logic_error("autograd: vars belong to different tapes");
        if (p.rows() != rows) throw std::invalid_argument("autograd concat_cols: row mismatch");
        spans.emplace_back(p.id(), p.cols());
        cols += p.cols();
        needs = needs || p.requires_grad();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return t.record(std::move(out), needs, [&t, spans](const Matrix& g) {
        Eigen::Index pos = 0;
        for (const auto& [id, n] : spans) {
            if (t.requires_grad(id)) t.accumulate(id, g.middleCols(pos, n));
            pos += n;
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    Tape& t = *a.tape();
    if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("autograd slice_rows");
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.record(a.value().middleRows(start, count), a.requires_grad(),
                    [&t, ia, start, count, rows, cols](const Matrix& g) {
                        Matrix gi = Matrix::Zero(rows, cols);
                        gi.middleRows(start, count) = g;
                        t.accumulate(ia, gi);
                    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    Tape& t = *a.tape();
    if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("autograd slice_cols");
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.record(a.value().middleCols(start, count), a.requires_grad(),
                    [&t, ia, start, count, rows, cols](const Matrix& g) {
                        Matrix gi = Matrix::Zero(rows, cols);
                        gi.middleCols(start, count) = g;
                        t.accumulate(ia, gi);
                    });
}

Var element(const Var& a, Eigen::Index r, Eigen::Index c) {
    Tape& t = *a.tape();
    if (r < 0 || c < 0 || r >= a.rows() || c >= a.cols()) throw std::out_of_range("autograd element");
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.record(Matrix::Constant(1, 1, a.value()(r, c)), a.requires_grad(),
                    [&t, ia, r, c, rows, cols](const Matrix& g) {
                        Matrix gi = Matrix::Zero(rows, cols);
                        gi(r, c) = g(0, 0);
                        t.accumulate(ia, gi);
                    });
}

Matrix reshape_row_major(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != m.size()) throw std::invalid_argument("reshape: element count mismatch");
    Matrix out(rows, cols);
    const Eigen::Index src_cols = m.cols();
    for (Eigen::Index i = 0; i < m.size(); ++i) out(i / cols, i % cols) = m(i / src_cols, i % src_cols);
    return out;
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const Eigen::Index src_rows = a.rows(), src_cols = a.cols();
    return t.record(reshape_row_major(a.value(), rows, cols), a.requires_grad(),
                    [&t, ia, src_rows, src_cols](const Matrix& g) {
                        t.accumulate(ia, reshape_row_major(g, src_rows, src_cols));
                    });
}

Var sum(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.record(Matrix::Constant(1, 1, a.value().sum()), a.requires_grad(), [&t, ia, rows, cols](const Matrix& g) {
        t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
    });
}

Var mean(const Var& a) {
    if (a.value().size() == 0) throw std::invalid_argument("autograd mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace sketchclip::ag
