#pragma once
// CLIP-layout transformer encoders (pre-LN blocks, quick-GELU MLP) with
// learnable prompt tokens injected at the input of the first J layers.

#include "sketchclip/autograd.hpp"
#include "sketchclip/raster.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace sketchclip {

struct LayerNorm {
    Parameter gamma;  // 1 x width
    Parameter beta;   // 1 x width

    ag::Var forward(ag::Tape& tape, const ag::Var& x) const;
};

struct MultiHeadAttention {
    int heads = 1;
    Parameter q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;

    // `mask` (optional) is added to every head's attention logits.
    ag::Var forward(ag::Tape& tape, const ag::Var& x, const Matrix* mask) const;
};

struct Mlp {
    Parameter fc1_w, fc1_b, fc2_w, fc2_b;

    ag::Var forward(ag::Tape& tape, const ag::Var& x) const;
};

struct TransformerBlock {
    LayerNorm ln1;
    MultiHeadAttention attn;
    LayerNorm ln2;
    Mlp mlp;

    ag::Var forward(ag::Tape& tape, const ag::Var& x, const Matrix* mask) const;
};

struct VisionConfig {
    int image_size = 224;
    int patch_size = 16;
    int width = 768;
    int layers = 12;
    int heads = 12;
    int mlp_width = 3072;
    int output_dim = 512;
    std::array<double, 3> mean = {0.48145466, 0.4578275, 0.40821073};
    std::array<double, 3> std = {0.26862954, 0.26130258, 0.27577711};

    int grid() const { return image_size / patch_size; }
    int patch_count() const { return grid() * grid(); }
};

struct TextConfig {
    int vocab_size = 49408;
    int context_length = 77;
    int width = 512;
    int layers = 12;
    int heads = 8;
    int mlp_width = 2048;
    int output_dim = 512;
};

class VisionEncoder {
public:
    VisionConfig config;
    Parameter patch_embed;  // width x (3 * patch * patch), channel-major patch flattening
    Parameter class_embed;  // 1 x width
    Parameter pos_embed;    // (patches + 1) x width
    LayerNorm ln_pre;
    std::vector<TransformerBlock> blocks;
    LayerNorm ln_post;
    Parameter proj;  // output_dim x width

    // Normalized, flattened patches: patch_count x (3 * patch * patch).
    Matrix patchify(const RasterSketch& image) const;

    // Layers 1..J see fresh prompts in their prompt slots; layer J's prompt
    // outputs flow on through layers J+1..N. An empty stack, or prompts with
    // zero rows, gives the plain encoder. Returns the 1 x output_dim feature.
    ag::Var encode(ag::Tape& tape, const RasterSketch& image, std::span<const ag::Var> prompts) const;
    ag::Var encode_patches(ag::Tape& tape, const Matrix& patches, std::span<const ag::Var> prompts) const;

    std::vector<const LayerNorm*> layer_norms() const;
    std::vector<Parameter*> parameters();
};

class TextEncoder {
public:
    TextConfig config;
    Parameter token_embed;  // vocab x width
    Parameter pos_embed;    // context x width
    std::vector<TransformerBlock> blocks;
    LayerNorm ln_final;
    Parameter proj;  // output_dim x width
    int start_token = 0;
    int end_token = 0;

    // Embedded [start, name tokens..., end] rows with positional embeddings
    // for a stream that will hold `prompt_len` prompt slots after the start
    // token. Independent of the prompt values, so it can be cached.
    Matrix token_stream(std::span<const int> name_tokens, int prompt_len) const;

    // Sequence [start, prompts, name, end] under a causal mask; the feature is
    // the projected end-token state. Prompt replacement follows the vision
    // encoder. `stream` comes from token_stream() with the same prompt length.
    ag::Var encode_stream(ag::Tape& tape, const Matrix& stream, std::span<const ag::Var> prompts) const;
    ag::Var encode(ag::Tape& tape, std::span<const int> name_tokens, std::span<const ag::Var> prompts) const;

    std::vector<const LayerNorm*> layer_norms() const;
    std::vector<Parameter*> parameters();
};

// Validates a prompt stack against an encoder; throws ShapeError naming the
// offending layer.
int check_prompt_stack(std::span<const ag::Var> prompts, int layers, int width, const char* encoder);

}  // namespace sketchclip
