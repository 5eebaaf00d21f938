#pragma once
// Frozen vision-language dual encoder: the two transformer encoders, the
// tokenizer for category names and the similarity temperature. Adapters build
// one from a seed ("toy") or from safetensors weights in the Hugging Face CLIP
// layout ("clip", "clip-vit-b16").

#include "sketchclip/dataset.hpp"
#include "sketchclip/tokenizer.hpp"
#include "sketchclip/transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace sketchclip {

struct Backbone {
    std::string adapter;
    std::string source;  // weights path, or "seed:<n>" for the toy
    VisionEncoder vision;
    TextEncoder text;
    std::shared_ptr<const Tokenizer> tokenizer;
    double temperature = 0.07;
    // Hash of the pretrained weights, taken at load time.
    std::string fingerprint;

    std::vector<int> tokenize(const std::string& category) const { return tokenizer->encode(category); }

    // Layer-norm gains and biases of one encoder (vision: ln_pre, blocks,
    // ln_post; text: blocks, ln_final).
    std::vector<Parameter*> layer_norm_parameters(bool vision_encoder);
    // Everything else: the weights that stay frozen under any configuration.
    std::vector<Parameter*> frozen_parameters();
    std::vector<Parameter*> all_parameters();

    // Marks the layer-norm parameters of each encoder trainable or frozen.
    void set_layer_norm_trainable(bool vision_encoder, bool text_encoder);
};

struct ToyBackboneOptions {
    std::uint64_t seed = 0;
};

// 2 layers per encoder, d_p = 16, d_t = 12, d = 8, 4x4 patches on 16x16
// images, byte tokenizer, tau = 0.07.
Backbone make_toy_backbone(std::uint64_t seed = 0);

// "toy" ignores the path (an optional "seed:<n>" selects the seed). "clip"
// reads <path> (a .safetensors file, or a directory holding model.safetensors)
// and infers the architecture from tensor shapes; "clip-vit-b16" additionally
// requires the ViT-B/16 dimensions. Throws InputError on missing files or
// mismatched architectures.
Backbone load_pretrained(const std::string& adapter_name, const std::string& path);
std::vector<std::string> adapter_names();

// Writes the backbone in the Hugging Face CLIP safetensors layout (F32 by
// default) with the metadata the "clip" adapter needs to rebuild it.
void export_clip_safetensors(const Backbone& backbone, const std::filesystem::path& path, bool double_precision = false);

std::string weights_fingerprint(const Backbone& backbone);

// Similarity logits cos(f_s, t_k) / tau as a 1 x K row.
ag::Var similarity_logits(const ag::Var& image_feature, const ag::Var& text_features, double temperature);

// Softmax over cosine similarities divided by tau. Throws NumericError for a
// zero-norm or non-finite feature and ShapeError for mismatched widths.
std::vector<double> classify(const RowVector& image_feature, const Matrix& text_features, double temperature);

// Plain (prompt-free) features.
RowVector encode_image(const Backbone& backbone, const RasterSketch& image);
Matrix encode_category_names(const Backbone& backbone, std::span<const std::string> names);

// Zero-shot scorer over the plain backbone, used to filter Edgemaps.
ZeroShotScorer make_zero_shot_scorer(const Backbone& backbone);

}  // namespace sketchclip
