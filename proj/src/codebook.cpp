#include "sketchclip/codebook.hpp"

#include "sketchclip/errors.hpp"
#include "sketchclip/prompts.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchclip {

std::vector<Parameter*> AbstractionCodebook::code_parameters() { return {&theta[0], &theta[1], &theta[2]}; }

std::vector<Parameter*> AbstractionCodebook::classifier_parameters() {
    if (two_layer()) return {&hidden_w, &hidden_b, &w, &b};
    return {&w, &b};
}

AbstractionCodebook init_codebook(std::uint64_t seed, int prompt_len, int text_width, int feature_dim, int hidden) {
    std::mt19937_64 rng(seed);
    AbstractionCodebook cb;
    const char* names[3] = {"codebook.theta_l", "codebook.theta_m", "codebook.theta_h"};
    for (int i = 0; i < 3; ++i) cb.theta[i] = Parameter(names[i], normal_matrix(rng, prompt_len, text_width, 0.02));
    int in = feature_dim;
    if (hidden > 0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
        cb.hidden_w = Parameter("codebook.classifier.hidden_w", uniform_matrix(rng, hidden, feature_dim, bound));
        cb.hidden_b = Parameter("codebook.classifier.hidden_b", uniform_matrix(rng, 1, hidden, bound));
        in = hidden;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    cb.w = Parameter("codebook.classifier.w", uniform_matrix(rng, 3, in, bound));
    cb.b = Parameter("codebook.classifier.b", uniform_matrix(rng, 1, 3, bound));
    return cb;
}

ag::Var predict_abstraction(ag::Tape& tape, const ag::Var& image_feature, const AbstractionCodebook& cb) {
    ag::Var x = image_feature;
    if (cb.two_layer()) {
        const ag::Var hb = tape.parameter(cb.hidden_b);
        x = ag::relu(ag::linear(x, tape.parameter(cb.hidden_w), &hb));
    }
    const ag::Var b = tape.parameter(cb.b);
    return ag::softmax_rows(ag::linear(x, tape.parameter(cb.w), &b));
}

AbstractionDistribution to_distribution(const Matrix& row) {
    if (row.size() != 3) throw ShapeError("an abstraction distribution has exactly three entries");
    return {row(0), row(1), row(2)};
}

AbstractionDistribution predict_abstraction(const RowVector& image_feature, const AbstractionCodebook& cb) {
    ag::Tape tape(false);
    return to_distribution(predict_abstraction(tape, tape.constant(image_feature), cb).value());
}

ag::Var abstraction_prompt(ag::Tape& tape, const ag::Var& dist, const AbstractionCodebook& cb) {
    if (dist.rows() != 1 || dist.cols() != 3) throw ShapeError("abstraction distribution must be 1 x 3");
    ag::Var eta = ag::scale_by(tape.parameter(cb.theta[0]), ag::element(dist, 0, 0));
    for (int i = 1; i < 3; ++i) eta = ag::add(eta, ag::scale_by(tape.parameter(cb.theta[i]), ag::element(dist, 0, i)));
    return eta;
}

Matrix abstraction_prompt(const AbstractionDistribution& dist, const AbstractionCodebook& cb) {
    return dist[0] * cb.theta[0].value + dist[1] * cb.theta[1].value + dist[2] * cb.theta[2].value;
}

double codebook_loss(const AbstractionDistribution& dist, AbstractionLevel label) {
    return -std::log(std::max(dist[static_cast<std::size_t>(label)], kLogClamp));
}

ag::Var codebook_loss(const ag::Var& dist, AbstractionLevel label) {
    return ag::scale(ag::log_clamped(ag::element(dist, 0, static_cast<int>(label)), kLogClamp), -1.0);
}

double mixup_loss(const AbstractionDistribution& dist, const MixCoefficients& coeffs) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        if (coeffs.lambda[i] == 0.0) continue;
        acc += coeffs.lambda[i] * std::log(std::max(dist[i], kLogClamp));
    }
    return -acc;
}

ag::Var mixup_loss(const ag::Var& dist, const MixCoefficients& coeffs) {
    ag::Var acc;
    for (int i = 0; i < 3; ++i) {
        if (coeffs.lambda[static_cast<std::size_t>(i)] == 0.0) continue;
        const ag::Var term =
            ag::scale(ag::log_clamped(ag::element(dist, 0, i), kLogClamp), coeffs.lambda[static_cast<std::size_t>(i)]);
        acc = acc.valid() ? ag::add(acc, term) : term;
    }
    if (!acc.valid()) throw std::invalid_argument("mixup coefficients are all zero");
    return ag::scale(acc, -1.0);
}

MixCoefficients sample_mix_coefficients(double alpha, std::mt19937_64& rng) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("Dirichlet concentration must be positive, got " + std::to_string(alpha));
    }
    std::gamma_distribution<double> gamma(alpha, 1.0);
    MixCoefficients c;
    c.alpha = alpha;
    double total = 0.0;
    do {
        total = 0.0;
        for (auto& l : c.lambda) {
            l = gamma(rng);
            total += l;
        }
    } while (!(total > 0.0));
    for (auto& l : c.lambda) l /= total;
    return c;
}

RowVector mixup_feature(const RowVector& f_l, const RowVector& f_m, const RowVector& f_h, const MixCoefficients& c) {
    if (f_l.size() != f_m.size() || f_l.size() != f_h.size()) throw ShapeError("mixup features differ in width");
    return c.lambda[0] * f_l + c.lambda[1] * f_m + c.lambda[2] * f_h;
}

ag::Var mixup_feature(const ag::Var& f_l, const ag::Var& f_m, const ag::Var& f_h, const MixCoefficients& c) {
    if (f_l.cols() != f_m.cols() || f_l.cols() != f_h.cols()) throw ShapeError("mixup features differ in width");
    return ag::add(ag::add(ag::scale(f_l, c.lambda[0]), ag::scale(f_m, c.lambda[1])), ag::scale(f_h, c.lambda[2]));
}

}  // namespace sketchclip
