#pragma once
// Abstraction codebook: three prompt-shaped codes mixed by a predicted
// abstraction distribution into the abstraction prompt eta, plus the
// Dirichlet abstraction-mixup training signal.

#include "sketchclip/autograd.hpp"
#include "sketchclip/dataset.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace sketchclip {

// (a_l, a_m, a_h) on the 2-simplex.
using AbstractionDistribution = std::array<double, 3>;

struct MixCoefficients {
    std::array<double, 3> lambda{};  // renormalized, sums to 1
    double alpha = 1.0;
};

inline constexpr double kLogClamp = 1e-12;

struct AbstractionCodebook {
    std::array<Parameter, 3> theta;  // low, medium, high; prompt_len x d_t each
    // Classifier d -> 3: a single linear layer, or Linear-ReLU-Linear when
    // hidden_w is non-empty.
    Parameter w, b;
    Parameter hidden_w, hidden_b;

    bool two_layer() const { return hidden_w.value.size() > 0; }
    std::vector<Parameter*> code_parameters();
    std::vector<Parameter*> classifier_parameters();
};

// Codes ~ N(0, 0.02); classifier layers uniform(+-1/sqrt(fan_in)).
AbstractionCodebook init_codebook(std::uint64_t seed, int prompt_len, int text_width, int feature_dim,
                                  int hidden = 0);

// softmax(C_theta(f_s)) as a 1 x 3 row.
ag::Var predict_abstraction(ag::Tape& tape, const ag::Var& image_feature, const AbstractionCodebook& cb);
AbstractionDistribution predict_abstraction(const RowVector& image_feature, const AbstractionCodebook& cb);

// eta = a_l theta_l + a_m theta_m + a_h theta_h. `dist` is 1 x 3.
ag::Var abstraction_prompt(ag::Tape& tape, const ag::Var& dist, const AbstractionCodebook& cb);
Matrix abstraction_prompt(const AbstractionDistribution& dist, const AbstractionCodebook& cb);

// -log(max(dist[label], 1e-12)).
double codebook_loss(const AbstractionDistribution& dist, AbstractionLevel label);
ag::Var codebook_loss(const ag::Var& dist, AbstractionLevel label);

// -sum_i lambda_i log(max(dist_i, 1e-12)), terms with lambda_i = 0 dropped.
double mixup_loss(const AbstractionDistribution& dist, const MixCoefficients& coeffs);
ag::Var mixup_loss(const ag::Var& dist, const MixCoefficients& coeffs);

// Dir(alpha, alpha, alpha) via three Gamma(alpha, 1) draws, renormalized.
// Throws std::invalid_argument for alpha <= 0.
MixCoefficients sample_mix_coefficients(double alpha, std::mt19937_64& rng);

// lambda_1 f_l + lambda_2 f_m + lambda_3 f_h.
RowVector mixup_feature(const RowVector& f_l, const RowVector& f_m, const RowVector& f_h, const MixCoefficients& c);
ag::Var mixup_feature(const ag::Var& f_l, const ag::Var& f_m, const ag::Var& f_h, const MixCoefficients& c);

AbstractionDistribution to_distribution(const Matrix& row);

}  // namespace sketchclip
