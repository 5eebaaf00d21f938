#include "sketchclip/transformer.hpp"

#include "sketchclip/errors.hpp"

#include <cmath>
#include <limits>

namespace sketchclip {

ag::Var LayerNorm::forward(ag::Tape& tape, const ag::Var& x) const {
    return ag::layer_norm_rows(x, tape.parameter(gamma), tape.parameter(beta), 1e-5);
}

ag::Var MultiHeadAttention::forward(ag::Tape& tape, const ag::Var& x, const Matrix* mask) const {
    const auto width = static_cast<int>(q_w.value.rows());
    const int head_dim = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const ag::Var qb = tape.parameter(q_b), kb = tape.parameter(k_b), vb = tape.parameter(v_b);
    const ag::Var q = ag::linear(x, tape.parameter(q_w), &qb);
    const ag::Var k = ag::linear(x, tape.parameter(k_w), &kb);
    const ag::Var v = ag::linear(x, tape.parameter(v_w), &vb);
    std::vector<ag::Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const ag::Var qh = ag::slice_cols(q, h * head_dim, head_dim);
        const ag::Var kh = ag::slice_cols(k, h * head_dim, head_dim);
        const ag::Var vh = ag::slice_cols(v, h * head_dim, head_dim);
        ag::Var logits = ag::scale(ag::matmul(qh, ag::transpose(kh)), scale);
        if (mask) logits = ag::add_constant(logits, *mask);
        outs.push_back(ag::matmul(ag::softmax_rows(logits), vh));
    }
    const ag::Var merged = heads == 1 ? outs.front() : ag::concat_cols(outs);
    const ag::Var ob = tape.parameter(out_b);
    return ag::linear(merged, tape.parameter(out_w), &ob);
}

ag::Var Mlp::forward(ag::Tape& tape, const ag::Var& x) const {
    const ag::Var b1 = tape.parameter(fc1_b), b2 = tape.parameter(fc2_b);
    const ag::Var hidden = ag::quick_gelu(ag::linear(x, tape.parameter(fc1_w), &b1));
    return ag::linear(hidden, tape.parameter(fc2_w), &b2);
}

ag::Var TransformerBlock::forward(ag::Tape& tape, const ag::Var& x, const Matrix* mask) const {
    const ag::Var h = ag::add(x, attn.forward(tape, ln1.forward(tape, x), mask));
    return ag::add(h, mlp.forward(tape, ln2.forward(tape, h)));
}

int check_prompt_stack(std::span<const ag::Var> prompts, int layers, int width, const char* encoder) {
    if (prompts.empty()) return 0;
    if (static_cast<int>(prompts.size()) > layers) {
        throw ShapeError(std::string(encoder) + " prompt depth " + std::to_string(prompts.size()) +
                         " exceeds the layer count " + std::to_string(layers));
    }
    const auto len = static_cast<int>(prompts.front().rows());
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        if (prompts[j].rows() != len || (len > 0 && prompts[j].cols() != width)) {
            throw ShapeError(std::string(encoder) + " prompt for layer " + std::to_string(j + 1) + " has shape " +
                             std::to_string(prompts[j].rows()) + "x" + std::to_string(prompts[j].cols()) +
                             ", expected " + std::to_string(len) + "x" + std::to_string(width));
        }
    }
    return len;
}

Matrix VisionEncoder::patchify(const RasterSketch& image) const {
    const int p = config.patch_size;
    const int g = config.grid();
    if (image.side != config.image_size) {
        throw ShapeError("image side " + std::to_string(image.side) + " does not match the encoder resolution " +
                         std::to_string(config.image_size));
    }
    Matrix patches(g * g, 3 * p * p);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            const int row = gy * g + gx;
            int col = 0;
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < p; ++y) {
                    for (int x = 0; x < p; ++x) {
                        const double v = image.at(c, gy * p + y, gx * p + x);
                        patches(row, col++) = (v - config.mean[c]) / config.std[c];
                    }
                }
            }
        }
    }
    return patches;
}

ag::Var VisionEncoder::encode(ag::Tape& tape, const RasterSketch& image, std::span<const ag::Var> prompts) const {
    return encode_patches(tape, patchify(image), prompts);
}

ag::Var VisionEncoder::encode_patches(ag::Tape& tape, const Matrix& patches, std::span<const ag::Var> prompts) const {
    const int prompt_len = check_prompt_stack(prompts, config.layers, config.width, "vision");
    const auto depth = static_cast<int>(prompts.size());
    const int tokens = config.patch_count() + 1;

    const ag::Var pos = tape.parameter(pos_embed);
    const ag::Var embedded = ag::linear(tape.constant(patches), tape.parameter(patch_embed), nullptr);
    const std::array<ag::Var, 2> parts = {tape.parameter(class_embed), embedded};
    ag::Var x = ln_pre.forward(tape, ag::add(ag::concat_rows(parts), pos));

    for (int layer = 0; layer < config.layers; ++layer) {
        if (prompt_len > 0 && layer < depth) {
            const ag::Var base = layer == 0 ? x : ag::slice_rows(x, 0, tokens);
            const std::array<ag::Var, 2> stream = {base, prompts[static_cast<std::size_t>(layer)]};
            x = ag::concat_rows(stream);
        }
        x = blocks[static_cast<std::size_t>(layer)].forward(tape, x, nullptr);
    }
    const ag::Var cls = ln_post.forward(tape, ag::slice_rows(x, 0, 1));
    return ag::linear(cls, tape.parameter(proj), nullptr);
}

std::vector<const LayerNorm*> VisionEncoder::layer_norms() const {
    std::vector<const LayerNorm*> out = {&ln_pre};
    for (const auto& b : blocks) {
        out.push_back(&b.ln1);
        out.push_back(&b.ln2);
    }
    out.push_back(&ln_post);
    return out;
}

namespace {

void append_block(std::vector<Parameter*>& out, TransformerBlock& b) {
    for (Parameter* p : {&b.ln1.gamma, &b.ln1.beta, &b.attn.q_w, &b.attn.q_b, &b.attn.k_w, &b.attn.k_b, &b.attn.v_w,
                         &b.attn.v_b, &b.attn.out_w, &b.attn.out_b, &b.ln2.gamma, &b.ln2.beta, &b.mlp.fc1_w,
                         &b.mlp.fc1_b, &b.mlp.fc2_w, &b.mlp.fc2_b}) {
        out.push_back(p);
    }
}

}  // namespace

std::vector<Parameter*> VisionEncoder::parameters() {
    std::vector<Parameter*> out = {&patch_embed, &class_embed, &pos_embed, &ln_pre.gamma, &ln_pre.beta};
    for (auto& b : blocks) append_block(out, b);
    out.push_back(&ln_post.gamma);
    out.push_back(&ln_post.beta);
    out.push_back(&proj);
    return out;
}

Matrix TextEncoder::token_stream(std::span<const int> name_tokens, int prompt_len) const {
    const auto n = static_cast<int>(name_tokens.size());
    const int length = n + 2 + prompt_len;
    if (length > config.context_length) {
        throw ShapeError("text sequence of " + std::to_string(length) + " tokens exceeds the context length " +
                         std::to_string(config.context_length));
    }
    Matrix rows(n + 2, config.width);
    auto embed = [&](int row, int token, int position) {
        if (token < 0 || token >= token_embed.value.rows()) throw ShapeError("token id out of vocabulary range");
        rows.row(row) = token_embed.value.row(token) + pos_embed.value.row(position);
    };
    embed(0, start_token, 0);
    for (int i = 0; i < n; ++i) embed(i + 1, name_tokens[static_cast<std::size_t>(i)], prompt_len + 1 + i);
    embed(n + 1, end_token, prompt_len + n + 1);
    return rows;
}

ag::Var TextEncoder::encode(ag::Tape& tape, std::span<const int> name_tokens, std::span<const ag::Var> prompts) const {
    const int prompt_len = prompts.empty() ? 0 : static_cast<int>(prompts.front().rows());
    return encode_stream(tape, token_stream(name_tokens, prompt_len), prompts);
}

ag::Var TextEncoder::encode_stream(ag::Tape& tape, const Matrix& stream, std::span<const ag::Var> prompts) const {
    const int prompt_len = check_prompt_stack(prompts, config.layers, config.width, "text");
    const auto depth = static_cast<int>(prompts.size());
    const auto rest = static_cast<int>(stream.rows()) - 1;
    const int length = rest + 1 + prompt_len;
    if (stream.cols() != config.width) throw ShapeError("text token stream width mismatch");

    Matrix mask = Matrix::Zero(length, length);
    for (int r = 0; r < length; ++r) {
        for (int c = r + 1; c < length; ++c) mask(r, c) = -std::numeric_limits<double>::infinity();
    }

    const ag::Var tokens = tape.constant(stream);
    ag::Var x = tokens;
    if (prompt_len > 0) {
        const std::array<ag::Var, 3> parts = {ag::slice_rows(tokens, 0, 1), prompts[0], ag::slice_rows(tokens, 1, rest)};
        x = ag::concat_rows(parts);
    }
    for (int layer = 0; layer < config.layers; ++layer) {
        if (prompt_len > 0 && layer > 0 && layer < depth) {
            const std::array<ag::Var, 3> parts = {ag::slice_rows(x, 0, 1), prompts[static_cast<std::size_t>(layer)],
                                                  ag::slice_rows(x, 1 + prompt_len, rest)};
            x = ag::concat_rows(parts);
        }
        x = blocks[static_cast<std::size_t>(layer)].forward(tape, x, &mask);
    }
    const ag::Var eot = ln_final.forward(tape, ag::slice_rows(x, length - 1, 1));
    return ag::linear(eot, tape.parameter(proj), nullptr);
}

std::vector<const LayerNorm*> TextEncoder::layer_norms() const {
    std::vector<const LayerNorm*> out;
    for (const auto& b : blocks) {
        out.push_back(&b.ln1);
        out.push_back(&b.ln2);
    }
    out.push_back(&ln_final);
    return out;
}

std::vector<Parameter*> TextEncoder::parameters() {
    std::vector<Parameter*> out = {&token_embed, &pos_embed};
    for (auto& b : blocks) append_block(out, b);
    out.push_back(&ln_final.gamma);
    out.push_back(&ln_final.beta);
    out.push_back(&proj);
    return out;
}

}  // namespace sketchclip
