#include "sketchclip/prompts.hpp"

#include "sketchclip/errors.hpp"

#include <cmath>
#include <string>

namespace sketchclip {

Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    }
    return m;
}

Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
    }
    return m;
}

int meta_net_hidden_width(int feature_dim) { return std::max(1, feature_dim / 16); }

std::vector<Parameter*> PromptState::prompt_parameters() {
    std::vector<Parameter*> out;
    for (auto& p : vision) out.push_back(&p);
    for (auto& p : text) out.push_back(&p);
    return out;
}

std::vector<Parameter*> PromptState::meta_net_parameters() {
    return {&meta_net.w1, &meta_net.b1, &meta_net.w2, &meta_net.b2};
}

PromptState init_prompts(std::uint64_t seed, int depth, int prompt_len, int vision_width, int text_width,
                         int feature_dim, const std::optional<Matrix>& init_text) {
    if (depth < 1) throw ShapeError("prompt depth must be at least 1");
    if (prompt_len < 1) throw ShapeError("prompt length must be at least 1");
    PromptState s;
    s.depth = depth;
    s.prompt_len = prompt_len;
    s.vision_width = vision_width;
    s.text_width = text_width;
    s.feature_dim = feature_dim;

    std::mt19937_64 rng(seed);
    for (int j = 0; j < depth; ++j) {
        s.vision.emplace_back("prompts.vision." + std::to_string(j), normal_matrix(rng, prompt_len, vision_width, 0.02));
    }
    for (int j = 0; j < depth; ++j) {
        s.text.emplace_back("prompts.text." + std::to_string(j), normal_matrix(rng, prompt_len, text_width, 0.02));
    }
    if (init_text) {
        if (init_text->rows() > prompt_len) {
            throw ShapeError("init text has " + std::to_string(init_text->rows()) + " tokens but the prompt holds only " +
                             std::to_string(prompt_len));
        }
        if (init_text->cols() != text_width) throw ShapeError("init text embeddings have the wrong width");
        s.text[0].value.topRows(init_text->rows()) = *init_text;
    }

    const int hidden = meta_net_hidden_width(feature_dim);
    const int out = prompt_len * text_width;
    const double b1 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    MetaNet& m = s.meta_net;
    m.prompt_len = prompt_len;
    m.text_width = text_width;
    m.w1 = Parameter("prompts.meta_net.w1", uniform_matrix(rng, hidden, feature_dim, b1));
    m.b1 = Parameter("prompts.meta_net.b1", uniform_matrix(rng, 1, hidden, b1));
    m.w2 = Parameter("prompts.meta_net.w2", uniform_matrix(rng, out, hidden, b2));
    m.b2 = Parameter("prompts.meta_net.b2", uniform_matrix(rng, 1, out, b2));
    return s;
}

ag::Var meta_context(ag::Tape& tape, const ag::Var& image_feature, const MetaNet& net) {
    const ag::Var b1 = tape.parameter(net.b1), b2 = tape.parameter(net.b2);
    const ag::Var h = ag::relu(ag::linear(image_feature, tape.parameter(net.w1), &b1));
    return ag::reshape(ag::linear(h, tape.parameter(net.w2), &b2), net.prompt_len, net.text_width);
}

Matrix meta_context(const RowVector& image_feature, const MetaNet& net) {
    ag::Tape tape(false);
    return meta_context(tape, tape.constant(image_feature), net).value();
}

std::vector<ag::Var> compose_text_prompts(std::span<const ag::Var> text_prompts, const ag::Var& pi, const ag::Var& eta) {
    std::vector<ag::Var> out;
    out.reserve(text_prompts.size());
    for (std::size_t j = 0; j < text_prompts.size(); ++j) {
        ag::Var v = text_prompts[j];
        for (const ag::Var* shift : {&pi, &eta}) {
            if (!shift->valid()) continue;
            if (shift->rows() != v.rows() || shift->cols() != v.cols()) {
                throw ShapeError("prompt shift of shape " + std::to_string(shift->rows()) + "x" +
                                 std::to_string(shift->cols()) + " does not match text prompt " + std::to_string(j) +
                                 " of shape " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
            }
            v = ag::add(v, *shift);
        }
        out.push_back(v);
    }
    return out;
}

std::vector<Matrix> compose_text_prompts(std::span<const Matrix> text_prompts, const Matrix& pi, const Matrix& eta) {
    std::vector<Matrix> out;
    for (std::size_t j = 0; j < text_prompts.size(); ++j) {
        const Matrix& v = text_prompts[j];
        if (pi.rows() != v.rows() || pi.cols() != v.cols() || eta.rows() != v.rows() || eta.cols() != v.cols()) {
            throw ShapeError("prompt shift does not match text prompt " + std::to_string(j));
        }
        out.push_back(v + pi + eta);
    }
    return out;
}

std::vector<ag::Var> prompt_vars(ag::Tape& tape, const std::vector<Parameter>& prompts) {
    std::vector<ag::Var> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(tape.parameter(p));
    return out;
}

}  // namespace sketchclip
