#pragma once
// Few-shot training loop and run checkpoints.

#include "sketchclip/model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace sketchclip {

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;  // sample-weighted means over the epoch's batches
    double learning_rate = 0.0;
    double train_accuracy = 0.0;        // percent, from a no-grad pass after the epoch
    double abstraction_accuracy = 0.0;  // percent
};

nlohmann::json to_json(const EpochLog& log);

struct TrainOptions {
    // When set: train_log.jsonl, checkpoint-epoch-<n>.safetensors and
    // checkpoint.safetensors (latest) are written here.
    std::filesystem::path output_dir;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochLog> history;
};

// Adam over model.trainable_parameters() only. `samples` carry category
// indices into model.categories. Throws NumericError naming the loss term
// when any term becomes non-finite.
TrainResult train(Model& model, std::span<const LabeledSample> samples, const TrainOptions& options = {});

struct Accuracy {
    double top1 = 0.0;         // percent
    double abstraction = 0.0;  // percent
};
Accuracy training_accuracy(const Model& model, std::span<const LabeledSample> samples);

// Sections by tensor-name prefix: prompts.*, codebook.*, decoder.* and
// layernorm.* (deltas from the pretrained values); metadata carries the
// format version, config, categories, epoch, RNG state and the backbone
// identity.
inline constexpr const char* kCheckpointFormat = "sketchclip-checkpoint";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path, int epoch, const std::string& rng_state);

struct LoadedCheckpoint {
    Model model;
    int epoch = 0;
    std::string rng_state;
};

// Rebuilds the model on `backbone`, or on the backbone named in the
// checkpoint when null. Throws InputError when the checkpoint does not
// belong to that backbone or is malformed.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::shared_ptr<Backbone> backbone = nullptr);

}  // namespace sketchclip
