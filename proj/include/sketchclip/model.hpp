#pragma once
// The prompt-learning model around a frozen backbone: configuration, the
// per-sample forward pass and the composite training loss.

#include "sketchclip/backbone.hpp"
#include "sketchclip/codebook.hpp"
#include "sketchclip/decoder.hpp"
#include "sketchclip/prompts.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sketchclip {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 64;
    int epochs = 7;
    int prompt_depth = 9;
    int context_tokens = 5;
    double beta1 = 1.0;  // sketch2vec
    double beta2 = 1.0;  // codebook classification
    double beta3 = 1.0;  // abstraction mixup
    double alpha = 1.0;
    std::uint64_t seed = 0;

    // Ablation switches.
    bool meta_net = true;
    bool layer_norm = true;
    bool codebook = true;
    bool mixup = true;
    bool sketch2vec = true;

    // Which encoders' layer norms are tuned when layer_norm is on.
    bool layer_norm_vision = true;
    bool layer_norm_text = true;
    int decoder_hidden = 256;
    int codebook_hidden = 0;  // 0: linear classifier
    int max_decode_steps = 196;
    bool mixup_detach_features = false;
    // Use the ground-truth one-hot abstraction for eta during training.
    bool teacher_forced_eta = false;
    // Score unseen samples against seen + unseen names instead of unseen only.
    bool joint_label_space = false;
    std::string init_text;
};

nlohmann::json to_json(const TrainConfig& c);
// Throws InputError on unknown keys or wrongly typed values.
TrainConfig train_config_from_json(const nlohmann::json& j);
void apply_train_config_key(TrainConfig& c, const std::string& key, const nlohmann::json& value);
bool is_train_config_key(const std::string& key);
// Throws InputError when a value is out of range.
void validate(const TrainConfig& c);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct Model {
    std::shared_ptr<Backbone> backbone;
    TrainConfig config;
    std::vector<std::string> categories;  // training label space
    PromptState prompts;
    AbstractionCodebook codebook;
    DecoderState decoder;
    // Layer-norm values when the backbone was loaded; checkpoints store deltas.
    std::vector<Matrix> layer_norm_initial;

    std::vector<Parameter*> layer_norm_parameters() const;
    // The declared trainable set for the active configuration.
    std::vector<Parameter*> trainable_parameters();
    // Prompts, Meta-Net, codebook and decoder, whether trainable or not.
    std::vector<Parameter*> owned_parameters();
};

// Initializes prompts, codebook and decoder from the config seed and marks
// the backbone's layer norms trainable according to the switches. Throws
// ShapeError when the prompt depth exceeds an encoder's layer count.
Model make_model(std::shared_ptr<Backbone> backbone, const TrainConfig& config, std::vector<std::string> categories);

// Prompt-independent embedded token streams per category name.
struct TextCache {
    int prompt_len = 0;
    std::vector<std::string> names;
    std::vector<Matrix> streams;
};
TextCache make_text_cache(const Model& model, std::span<const std::string> names);

struct SampleForward {
    ag::Var feature;         // f_s, 1 x d
    ag::Var abstraction;     // 1 x 3
    ag::Var pi;              // invalid when the Meta-Net is off
    ag::Var eta;             // invalid when the codebook is off
    ag::Var text_features;   // K x d
    ag::Var logits;          // 1 x K
};

// f_s -> (pi, abstraction -> eta) -> shifted text prompts -> text features
// for every cached category -> similarity logits. `eta_label` forces a
// one-hot abstraction for eta.
SampleForward forward_sample(ag::Tape& tape, const Model& model, const RasterSketch& image, const TextCache& cache,
                             std::optional<AbstractionLevel> eta_label = std::nullopt);

// -log p(label) under the similarity softmax.
ag::Var classification_loss(const ag::Var& logits, int label);

struct LossBreakdown {
    double classification = 0.0;
    double sketch2vec = 0.0;
    double codebook = 0.0;
    double mixup = 0.0;
    double total = 0.0;
    std::size_t mixup_skipped = 0;  // batches without all three sources
    std::size_t samples = 0;
};

struct BatchLoss {
    ag::Var total;
    LossBreakdown terms;
};

// L_CE + beta1 L_s2v + beta2 L_CB + beta3 L_mix over the batch; switched-off
// terms are zero. Throws std::invalid_argument for an empty batch.
BatchLoss total_loss(ag::Tape& tape, const Model& model, std::span<const LabeledSample* const> batch,
                     const TextCache& cache, std::mt19937_64& rng);

struct Prediction {
    std::vector<double> probabilities;
    AbstractionDistribution abstraction{};
    RowVector feature;
};

Prediction predict(const Model& model, const RasterSketch& image, const TextCache& cache);

// Bring a raster to the backbone resolution.
RasterSketch fit_to_backbone(const Backbone& backbone, const RasterSketch& raster);

}  // namespace sketchclip
