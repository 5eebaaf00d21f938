#pragma once
// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to Vars in creation order; calling
// backward() on a 1x1 root walks the tape in reverse and accumulates
// gradients. Leaves created from a Parameter feed their gradient back into
// Parameter::grad, which is what the optimizer consumes. Frozen parameters
// (trainable == false) enter the tape as constants and never receive a
// gradient.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sketchclip {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    // Accumulated by Tape::backward, which only holds const references.
    mutable Matrix grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Matrix v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())),
          trainable(train) {}

    void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

namespace ag {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    const Matrix& grad() const;
    bool requires_grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    // A leaf that receives a gradient but is not tied to a Parameter.
    Var input(Matrix value);
    Var parameter(const Parameter& p);

    // Records an op result. The backward closure receives the output gradient.
    Var record(Matrix value, bool requires_grad, std::function<void(const Matrix&)> backward);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Matrix& grad(int id) const;
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    // Adds to the gradient of `id` when that node needs one.
    void accumulate(int id, const Matrix& g);

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    void backward(const Var& root);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        const Parameter* param = nullptr;
        std::function<void(const Matrix&)> backward;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool record_ = true;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// s is 1x1.
Var scale_by(const Var& a, const Var& s);
// r is 1 x cols(a); added to every row.
Var add_row(const Var& a, const Var& r);
Var add_constant(const Var& a, const Matrix& c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// x W^T + b with W stored (out x in) and b a 1 x out row.
Var linear(const Var& x, const Var& w, const Var* b);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var quick_gelu(const Var& a);
Var one_minus(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// log(max(a, floor)); no gradient below the floor.
Var log_clamped(const Var& a, double floor);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Throws std::domain_error on a zero-norm row.
Var l2_normalize_rows(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var element(const Var& a, Eigen::Index r, Eigen::Index c);
// Row-major reinterpretation, the same convention as torch.reshape.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

Var sum(const Var& a);
Var mean(const Var& a);

Matrix reshape_row_major(const Matrix& m, Eigen::Index rows, Eigen::Index cols);

}  // namespace ag
}  // namespace sketchclip
