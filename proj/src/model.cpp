#include "sketchclip/model.hpp"

#include "sketchclip/errors.hpp"

#include <cmath>
#include <set>

namespace sketchclip {

namespace {

template <typename T>
T get_as(const std::string& key, const nlohmann::json& v) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw InputError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw InputError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw InputError("");
        } else {
            if (!v.is_number()) throw InputError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw InputError("config key '" + key + "' has a value of the wrong type: " + v.dump());
    }
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"prompt_depth", c.prompt_depth},
            {"context_tokens", c.context_tokens},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"beta3", c.beta3},
            {"alpha", c.alpha},
            {"seed", c.seed},
            {"meta_net", c.meta_net},
            {"layer_norm", c.layer_norm},
            {"codebook", c.codebook},
            {"mixup", c.mixup},
            {"sketch2vec", c.sketch2vec},
            {"layer_norm_vision", c.layer_norm_vision},
            {"layer_norm_text", c.layer_norm_text},
            {"decoder_hidden", c.decoder_hidden},
            {"codebook_hidden", c.codebook_hidden},
            {"max_decode_steps", c.max_decode_steps},
            {"mixup_detach_features", c.mixup_detach_features},
            {"teacher_forced_eta", c.teacher_forced_eta},
            {"joint_label_space", c.joint_label_space},
            {"init_text", c.init_text}};
}

bool is_train_config_key(const std::string& key) { return to_json(TrainConfig{}).contains(key); }

void apply_train_config_key(TrainConfig& c, const std::string& k, const nlohmann::json& v) {
    if (k == "learning_rate") c.learning_rate = get_as<double>(k, v);
    else if (k == "batch_size") c.batch_size = get_as<int>(k, v);
    else if (k == "epochs") c.epochs = get_as<int>(k, v);
    else if (k == "prompt_depth") c.prompt_depth = get_as<int>(k, v);
    else if (k == "context_tokens") c.context_tokens = get_as<int>(k, v);
    else if (k == "beta1") c.beta1 = get_as<double>(k, v);
    else if (k == "beta2") c.beta2 = get_as<double>(k, v);
    else if (k == "beta3") c.beta3 = get_as<double>(k, v);
    else if (k == "alpha") c.alpha = get_as<double>(k, v);
    else if (k == "seed") c.seed = get_as<std::uint64_t>(k, v);
    else if (k == "meta_net") c.meta_net = get_as<bool>(k, v);
    else if (k == "layer_norm") c.layer_norm = get_as<bool>(k, v);
    else if (k == "codebook") c.codebook = get_as<bool>(k, v);
    else if (k == "mixup") c.mixup = get_as<bool>(k, v);
    else if (k == "sketch2vec") c.sketch2vec = get_as<bool>(k, v);
    else if (k == "layer_norm_vision") c.layer_norm_vision = get_as<bool>(k, v);
    else if (k == "layer_norm_text") c.layer_norm_text = get_as<bool>(k, v);
    else if (k == "decoder_hidden") c.decoder_hidden = get_as<int>(k, v);
    else if (k == "codebook_hidden") c.codebook_hidden = get_as<int>(k, v);
    else if (k == "max_decode_steps") c.max_decode_steps = get_as<int>(k, v);
    else if (k == "mixup_detach_features") c.mixup_detach_features = get_as<bool>(k, v);
    else if (k == "teacher_forced_eta") c.teacher_forced_eta = get_as<bool>(k, v);
    else if (k == "joint_label_space") c.joint_label_space = get_as<bool>(k, v);
    else if (k == "init_text") c.init_text = get_as<std::string>(k, v);
    else throw InputError("unknown config key '" + k + "'");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("config must be a JSON object");
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) apply_train_config_key(c, it.key(), it.value());
    return c;
}

void validate(const TrainConfig& c) {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw InputError("invalid config: " + what);
    };
    need(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), "learning_rate must be positive");
    need(c.batch_size >= 1, "batch_size must be at least 1");
    need(c.epochs >= 0, "epochs must be non-negative");
    need(c.prompt_depth >= 1, "prompt_depth must be at least 1");
    need(c.context_tokens >= 1, "context_tokens must be at least 1");
    for (double b : {c.beta1, c.beta2, c.beta3}) need(b >= 0.0 && std::isfinite(b), "loss weights must be non-negative");
    need(c.alpha > 0.0 && std::isfinite(c.alpha), "alpha must be positive");
    need(c.decoder_hidden >= 1, "decoder_hidden must be at least 1");
    need(c.codebook_hidden >= 0, "codebook_hidden must be non-negative");
    need(c.max_decode_steps >= 1, "max_decode_steps must be at least 1");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over (seed, stream).
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::vector<Parameter*> Model::layer_norm_parameters() const {
    std::vector<Parameter*> out = backbone->layer_norm_parameters(true);
    for (Parameter* p : backbone->layer_norm_parameters(false)) out.push_back(p);
    return out;
}

std::vector<Parameter*> Model::owned_parameters() {
    std::vector<Parameter*> out = prompts.prompt_parameters();
    for (Parameter* p : prompts.meta_net_parameters()) out.push_back(p);
    for (Parameter* p : codebook.code_parameters()) out.push_back(p);
    for (Parameter* p : codebook.classifier_parameters()) out.push_back(p);
    for (Parameter* p : decoder.parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : owned_parameters()) {
        if (p->trainable) out.push_back(p);
    }
    for (Parameter* p : layer_norm_parameters()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

namespace {

void set_trainable(std::vector<Parameter*> params, bool on) {
    for (Parameter* p : params) p->trainable = on;
}

}  // namespace

Model make_model(std::shared_ptr<Backbone> backbone, const TrainConfig& config, std::vector<std::string> categories) {
    validate(config);
    if (!backbone) throw std::invalid_argument("model needs a backbone");
    if (categories.empty()) throw InputError("model needs at least one category");
    const Backbone& bb = *backbone;
    for (const auto& [name, layers] :
         {std::pair{"vision", bb.vision.config.layers}, std::pair{"text", bb.text.config.layers}}) {
        if (config.prompt_depth > layers) {
            throw ShapeError(std::string("prompt depth ") + std::to_string(config.prompt_depth) + " exceeds the " + name +
                             " encoder's " + std::to_string(layers) + " layers");
        }
    }
    Model m;
    m.backbone = backbone;
    m.config = config;
    m.categories = std::move(categories);

    std::optional<Matrix> init_text;
    if (!config.init_text.empty()) {
        const std::vector<int> tokens = bb.tokenize(config.init_text);
        Matrix rows(static_cast<Eigen::Index>(tokens.size()), bb.text.config.width);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            rows.row(static_cast<Eigen::Index>(i)) = bb.text.token_embed.value.row(tokens[i]);
        }
        init_text = rows;
    }
    const int d = bb.vision.config.output_dim;
    m.prompts = init_prompts(derive_seed(config.seed, 1), config.prompt_depth, config.context_tokens,
                             bb.vision.config.width, bb.text.config.width, d, init_text);
    m.codebook = init_codebook(derive_seed(config.seed, 2), config.context_tokens, bb.text.config.width, d,
                               config.codebook_hidden);
    m.decoder = init_decoder(derive_seed(config.seed, 3), d, config.decoder_hidden);

    set_trainable(m.prompts.meta_net_parameters(), config.meta_net);
    set_trainable(m.codebook.code_parameters(), config.codebook);
    set_trainable(m.codebook.classifier_parameters(), config.codebook || config.mixup);
    set_trainable(m.decoder.parameters(), config.sketch2vec);
    backbone->set_layer_norm_trainable(config.layer_norm && config.layer_norm_vision,
                                       config.layer_norm && config.layer_norm_text);
    for (Parameter* p : m.layer_norm_parameters()) m.layer_norm_initial.push_back(p->value);
    return m;
}

TextCache make_text_cache(const Model& model, std::span<const std::string> names) {
    TextCache c;
    c.prompt_len = model.prompts.prompt_len;
    for (const auto& n : names) {
        c.names.push_back(n);
        c.streams.push_back(model.backbone->text.token_stream(model.backbone->tokenize(n), c.prompt_len));
    }
    return c;
}

RasterSketch fit_to_backbone(const Backbone& backbone, const RasterSketch& raster) {
    const int side = backbone.vision.config.image_size;
    return raster.side == side ? raster : resize_raster(raster, side);
}

SampleForward forward_sample(ag::Tape& tape, const Model& model, const RasterSketch& image, const TextCache& cache,
                             std::optional<AbstractionLevel> eta_label) {
    if (cache.streams.empty()) throw InputError("no categories to score against");
    if (cache.prompt_len != model.prompts.prompt_len) throw ShapeError("text cache built for another prompt length");
    const Backbone& bb = *model.backbone;
    const TrainConfig& cfg = model.config;
    SampleForward out;
    const std::vector<ag::Var> vision_prompts = prompt_vars(tape, model.prompts.vision);
    out.feature = bb.vision.encode(tape, image, vision_prompts);
    out.abstraction = predict_abstraction(tape, out.feature, model.codebook);
    if (cfg.codebook) {
        if (eta_label) {
            Matrix onehot = Matrix::Zero(1, 3);
            onehot(0, static_cast<int>(*eta_label)) = 1.0;
            out.eta = abstraction_prompt(tape, tape.constant(onehot), model.codebook);
        } else {
            out.eta = abstraction_prompt(tape, out.abstraction, model.codebook);
        }
    }
    if (cfg.meta_net) out.pi = meta_context(tape, out.feature, model.prompts.meta_net);
    const std::vector<ag::Var> text_prompts =
        compose_text_prompts(prompt_vars(tape, model.prompts.text), out.pi, out.eta);
    std::vector<ag::Var> features;
    features.reserve(cache.streams.size());
    for (const Matrix& stream : cache.streams) features.push_back(bb.text.encode_stream(tape, stream, text_prompts));
    out.text_features = features.size() == 1 ? features.front() : ag::concat_rows(features);
    out.logits = similarity_logits(out.feature, out.text_features, bb.temperature);
    return out;
}

ag::Var classification_loss(const ag::Var& logits, int label) {
    if (label < 0 || label >= logits.cols()) throw std::out_of_range("classification label out of range");
    return ag::scale(ag::element(ag::log_softmax_rows(logits), 0, label), -1.0);
}

namespace {

ag::Var mean_of(ag::Tape& tape, const std::vector<ag::Var>& terms) {
    if (terms.empty()) return tape.constant(Matrix::Zero(1, 1));
    ag::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
    return ag::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

BatchLoss total_loss(ag::Tape& tape, const Model& model, std::span<const LabeledSample* const> batch,
                     const TextCache& cache, std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    const TrainConfig& cfg = model.config;
    std::vector<ag::Var> ce, s2v, cb, features;
    std::array<std::vector<std::size_t>, 3> by_source;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const LabeledSample& s = *batch[i];
        const auto eta_label = cfg.teacher_forced_eta ? std::optional(s.abstraction) : std::nullopt;
        const SampleForward f = forward_sample(tape, model, fit_to_backbone(*model.backbone, s.raster), cache, eta_label);
        features.push_back(f.feature);
        by_source[static_cast<std::size_t>(s.abstraction)].push_back(i);
        ce.push_back(classification_loss(f.logits, s.category_index));
        if (cfg.codebook) cb.push_back(codebook_loss(f.abstraction, s.abstraction));
        if (cfg.sketch2vec && s.vector) {
            const Matrix rows = s.vector->to_stroke5();
            const int steps = static_cast<int>(std::min<Eigen::Index>(rows.rows(), cfg.max_decode_steps));
            const ag::Var decoded = decode_sequence(tape, f.feature, model.decoder, steps, &rows);
            s2v.push_back(sketch2vec_loss(decoded, make_sketch2vec_target(*s.vector, steps)));
        }
    }

    std::vector<ag::Var> mix;
    std::size_t skipped = 0;
    if (cfg.mixup) {
        if (by_source[0].empty() || by_source[1].empty() || by_source[2].empty()) {
            skipped = 1;
        } else {
            const std::size_t triples = std::max<std::size_t>(1, batch.size() / 3);
            for (std::size_t t = 0; t < triples; ++t) {
                std::array<ag::Var, 3> f;
                for (std::size_t src = 0; src < 3; ++src) {
                    std::uniform_int_distribution<std::size_t> pick(0, by_source[src].size() - 1);
                    f[src] = features[by_source[src][pick(rng)]];
                    if (cfg.mixup_detach_features) f[src] = tape.constant(f[src].value());
                }
                const MixCoefficients coeffs = sample_mix_coefficients(cfg.alpha, rng);
                const ag::Var mixed = mixup_feature(f[0], f[1], f[2], coeffs);
                mix.push_back(mixup_loss(predict_abstraction(tape, mixed, model.codebook), coeffs));
            }
        }
    }

    const ag::Var l_ce = mean_of(tape, ce);
    const ag::Var l_s2v = mean_of(tape, s2v);
    const ag::Var l_cb = mean_of(tape, cb);
    const ag::Var l_mix = mean_of(tape, mix);

    BatchLoss out;
    out.total = l_ce;
    if (cfg.sketch2vec && !s2v.empty()) out.total = ag::add(out.total, ag::scale(l_s2v, cfg.beta1));
    if (cfg.codebook) out.total = ag::add(out.total, ag::scale(l_cb, cfg.beta2));
    if (cfg.mixup && !mix.empty()) out.total = ag::add(out.total, ag::scale(l_mix, cfg.beta3));
    out.terms.classification = l_ce.scalar();
    out.terms.sketch2vec = l_s2v.scalar();
    out.terms.codebook = l_cb.scalar();
    out.terms.mixup = l_mix.scalar();
    out.terms.total = out.total.scalar();
    out.terms.mixup_skipped = skipped;
    out.terms.samples = batch.size();
    return out;
}

Prediction predict(const Model& model, const RasterSketch& image, const TextCache& cache) {
    ag::Tape tape(false);
    const SampleForward f = forward_sample(tape, model, fit_to_backbone(*model.backbone, image), cache);
    Prediction p;
    p.feature = f.feature.value();
    p.abstraction = to_distribution(f.abstraction.value());
    p.probabilities = classify(p.feature, f.text_features.value(), model.backbone->temperature);
    return p;
}

}  // namespace sketchclip
