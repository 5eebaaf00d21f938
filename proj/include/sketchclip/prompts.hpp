#pragma once
// Learnable deep prompts for both encoders and the Meta-Net that turns a
// sketch feature into an instance-specific bias for the text prompts.

#include "sketchclip/autograd.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace sketchclip {

// Linear(d -> hidden) - ReLU - Linear(hidden -> prompt_len * d_t).
struct MetaNet {
    Parameter w1, b1, w2, b2;
    int prompt_len = 0;
    int text_width = 0;

    int hidden() const { return static_cast<int>(w1.value.rows()); }
};

struct PromptState {
    int depth = 0;
    int prompt_len = 0;
    int vision_width = 0;  // d_p
    int text_width = 0;    // d_t
    int feature_dim = 0;   // d
    std::vector<Parameter> vision;  // depth x (prompt_len x d_p)
    std::vector<Parameter> text;    // depth x (prompt_len x d_t)
    MetaNet meta_net;

    std::vector<Parameter*> prompt_parameters();
    std::vector<Parameter*> meta_net_parameters();
};

// max(1, d / 16).
int meta_net_hidden_width(int feature_dim);

// Prompts ~ N(0, 0.02); when `init_text` holds a phrase's token embeddings
// (n x d_t rows, n <= prompt_len) they overwrite the first n rows of the
// layer-0 text prompt. Meta-Net layers use the usual uniform(+-1/sqrt(fan_in))
// initialization. Deterministic in `seed`.
PromptState init_prompts(std::uint64_t seed, int depth, int prompt_len, int vision_width, int text_width,
                         int feature_dim, const std::optional<Matrix>& init_text = std::nullopt);

// pi = W2 relu(W1 f_s + b1) + b2, reshaped to prompt_len x d_t.
ag::Var meta_context(ag::Tape& tape, const ag::Var& image_feature, const MetaNet& net);
Matrix meta_context(const RowVector& image_feature, const MetaNet& net);

// {v_t[j] + pi + eta}. An invalid (default) Var stands for a zero term.
std::vector<ag::Var> compose_text_prompts(std::span<const ag::Var> text_prompts, const ag::Var& pi, const ag::Var& eta);
std::vector<Matrix> compose_text_prompts(std::span<const Matrix> text_prompts, const Matrix& pi, const Matrix& eta);

// Tape leaves for a list of prompt parameters.
std::vector<ag::Var> prompt_vars(ag::Tape& tape, const std::vector<Parameter>& prompts);

// Uniform(-bound, bound) matrix.
Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound);
Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

}  // namespace sketchclip
