#include "sketchclip/trainer.hpp"

#include "sketchclip/adam.hpp"
#include "sketchclip/errors.hpp"
#include "sketchclip/safetensors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sketchclip {

nlohmann::json to_json(const EpochLog& log) {
    return {{"epoch", log.epoch},
            {"loss_total", log.loss.total},
            {"loss_classification", log.loss.classification},
            {"loss_sketch2vec", log.loss.sketch2vec},
            {"loss_codebook", log.loss.codebook},
            {"loss_mixup", log.loss.mixup},
            {"mixup_skipped_batches", log.loss.mixup_skipped},
            {"samples", log.loss.samples},
            {"lr", log.learning_rate},
            {"train_accuracy", log.train_accuracy},
            {"abstraction_accuracy", log.abstraction_accuracy}};
}

Accuracy training_accuracy(const Model& model, std::span<const LabeledSample> samples) {
    if (samples.empty()) return {};
    const TextCache cache = make_text_cache(model, model.categories);
    std::size_t correct = 0, abstraction = 0;
    for (const auto& s : samples) {
        const Prediction p = predict(model, s.raster, cache);
        const auto top = std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin();
        if (top == s.category_index) ++correct;
        const auto a = std::max_element(p.abstraction.begin(), p.abstraction.end()) - p.abstraction.begin();
        if (a == static_cast<int>(s.abstraction)) ++abstraction;
    }
    const double n = static_cast<double>(samples.size());
    return {100.0 * static_cast<double>(correct) / n, 100.0 * static_cast<double>(abstraction) / n};
}

namespace {

void check_finite(const LossBreakdown& t, int epoch, std::size_t batch) {
    const std::pair<const char*, double> terms[] = {{"classification", t.classification},
                                                    {"sketch2vec", t.sketch2vec},
                                                    {"codebook", t.codebook},
                                                    {"mixup", t.mixup},
                                                    {"total", t.total}};
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite ") + name + " loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
        }
    }
}

std::string rng_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

TrainResult train(Model& model, std::span<const LabeledSample> samples, const TrainOptions& options) {
    if (samples.empty()) throw InputError("no training samples");
    const auto k = static_cast<int>(model.categories.size());
    for (const auto& s : samples) {
        if (s.category_index < 0 || s.category_index >= k) {
            throw InputError("training sample " + s.info.id + " has no category in the label space");
        }
    }
    const TrainConfig& cfg = model.config;
    const TextCache cache = make_text_cache(model, model.categories);
    Adam adam(model.trainable_parameters(), AdamOptions{cfg.learning_rate});
    std::mt19937_64 rng(derive_seed(cfg.seed, 4));

    std::ofstream log;
    if (!options.output_dir.empty()) {
        std::filesystem::create_directories(options.output_dir);
        log.open(options.output_dir / "train_log.jsonl", std::ios::trunc);
        if (!log) throw InputError("cannot write the training log in " + options.output_dir.string());
    }

    TrainResult result;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog entry;
        entry.epoch = epoch;
        entry.learning_rate = cfg.learning_rate;
        for (std::size_t start = 0, b = 0; start < order.size(); start += batch_size, ++b) {
            std::vector<const LabeledSample*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
                batch.push_back(&samples[order[i]]);
            }
            ag::Tape tape;
            const BatchLoss loss = total_loss(tape, model, batch, cache, rng);
            check_finite(loss.terms, epoch, b);
            adam.zero_grad();
            tape.backward(loss.total);
            adam.step();
            const auto n = static_cast<double>(batch.size());
            entry.loss.classification += n * loss.terms.classification;
            entry.loss.sketch2vec += n * loss.terms.sketch2vec;
            entry.loss.codebook += n * loss.terms.codebook;
            entry.loss.mixup += n * loss.terms.mixup;
            entry.loss.total += n * loss.terms.total;
            entry.loss.mixup_skipped += loss.terms.mixup_skipped;
            entry.loss.samples += batch.size();
        }
        const auto n = static_cast<double>(entry.loss.samples);
        for (double* v : {&entry.loss.classification, &entry.loss.sketch2vec, &entry.loss.codebook, &entry.loss.mixup,
                          &entry.loss.total}) {
            *v /= n;
        }
        const Accuracy acc = training_accuracy(model, samples);
        entry.train_accuracy = acc.top1;
        entry.abstraction_accuracy = acc.abstraction;
        result.history.push_back(entry);
        if (log) {
            log << to_json(entry).dump() << '\n';
            log.flush();
        }
        if (!options.output_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint-epoch-%03d.safetensors", epoch);
            save_checkpoint(model, options.output_dir / name, epoch, rng_string(rng));
            save_checkpoint(model, options.output_dir / "checkpoint.safetensors", epoch, rng_string(rng));
        }
        if (options.on_epoch) options.on_epoch(entry);
    }
    if (cfg.epochs == 0 && !options.output_dir.empty()) {
        save_checkpoint(model, options.output_dir / "checkpoint.safetensors", 0, rng_string(rng));
    }
    return result;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, int epoch, const std::string& rng_state) {
    auto& m = const_cast<Model&>(model);
    std::map<std::string, TensorToWrite> tensors;
    for (const Parameter* p : m.owned_parameters()) {
        tensors[p->name] = {{p->value.rows(), p->value.cols()}, p->value};
    }
    const auto ln = m.layer_norm_parameters();
    for (std::size_t i = 0; i < ln.size(); ++i) {
        tensors["layernorm." + ln[i]->name] = {{ln[i]->value.rows(), ln[i]->value.cols()},
                                               ln[i]->value - model.layer_norm_initial[i]};
    }
    const std::map<std::string, std::string> meta = {
        {"format", kCheckpointFormat},
        {"format_version", std::to_string(kCheckpointVersion)},
        {"config", to_json(model.config).dump()},
        {"categories", nlohmann::json(model.categories).dump()},
        {"epoch", std::to_string(epoch)},
        {"rng_state", rng_state},
        {"backbone_adapter", model.backbone->adapter},
        {"backbone_source", model.backbone->source},
        {"backbone_fingerprint", model.backbone->fingerprint}};
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    write_safetensors(tmp, tensors, meta, StoredType::F64);
    std::filesystem::rename(tmp, path);
}

namespace {

const std::string& meta_value(const SafetensorsReader& r, const std::string& key) {
    const auto it = r.metadata().find(key);
    if (it == r.metadata().end()) throw InputError("checkpoint lacks metadata entry '" + key + "'");
    return it->second;
}

void restore(const SafetensorsReader& r, const std::string& name, Parameter& p, const Matrix* base) {
    const Matrix m = r.matrix(name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
        throw InputError("checkpoint tensor " + name + " is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                         std::to_string(p.value.cols()));
    }
    p.value = base ? Matrix(*base + m) : m;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::shared_ptr<Backbone> backbone) {
    if (!std::filesystem::exists(path)) throw InputError("checkpoint not found: " + path.string());
    const SafetensorsReader r(path);
    if (meta_value(r, "format") != kCheckpointFormat) throw InputError(path.string() + " is not a run checkpoint");
    if (meta_value(r, "format_version") != std::to_string(kCheckpointVersion)) {
        throw InputError("unsupported checkpoint version " + meta_value(r, "format_version"));
    }
    TrainConfig cfg;
    std::vector<std::string> categories;
    try {
        cfg = train_config_from_json(nlohmann::json::parse(meta_value(r, "config")));
        categories = nlohmann::json::parse(meta_value(r, "categories")).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed checkpoint metadata: " + std::string(e.what()));
    }
    if (!backbone) {
        backbone = std::make_shared<Backbone>(load_pretrained(meta_value(r, "backbone_adapter"),
                                                              meta_value(r, "backbone_source")));
    }
    const std::string& expected = meta_value(r, "backbone_fingerprint");
    const std::string found = weights_fingerprint(*backbone);
    if (backbone->adapter != meta_value(r, "backbone_adapter") || found != expected) {
        throw InputError("checkpoint/backbone mismatch: checkpoint was trained on " + meta_value(r, "backbone_adapter") +
                         " (" + expected + "), got " + backbone->adapter + " (" + found + ")");
    }

    LoadedCheckpoint out{make_model(backbone, cfg, categories), 0, meta_value(r, "rng_state")};
    for (Parameter* p : out.model.owned_parameters()) restore(r, p->name, *p, nullptr);
    const auto ln = out.model.layer_norm_parameters();
    for (std::size_t i = 0; i < ln.size(); ++i) {
        restore(r, "layernorm." + ln[i]->name, *ln[i], &out.model.layer_norm_initial[i]);
    }
    try {
        out.epoch = std::stoi(meta_value(r, "epoch"));
    } catch (const std::exception&) {
        throw InputError("malformed checkpoint epoch");
    }
    return out;
}

}  // namespace sketchclip
