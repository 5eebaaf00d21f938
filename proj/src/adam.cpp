#include "sketchclip/adam.hpp"

#include <cmath>

namespace sketchclip {

Adam::Adam(std::vector<Parameter*> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.size() != p.value.size()) continue;
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * p.grad;
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * p.grad.cwiseProduct(p.grad);
        const Matrix m_hat = m_[i] / bc1;
        const Matrix v_hat = v_[i] / bc2;
        p.value.array() -= opt_.learning_rate * m_hat.array() / (v_hat.array().sqrt() + opt_.epsilon);
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace sketchclip
