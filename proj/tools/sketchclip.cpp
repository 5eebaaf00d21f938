// sketchclip: data preparation, training, evaluation and prediction for
// prompt-learned open-set sketch classification on a frozen dual encoder.

#include "sketchclip/backbone.hpp"
#include "sketchclip/errors.hpp"
#include "sketchclip/evaluator.hpp"
#include "sketchclip/run_config.hpp"
#include "sketchclip/synthetic.hpp"
#include "sketchclip/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace sketchclip;

namespace {

// Flag overrides shared by the commands that read a run config. Flags win
// over the config file.
struct Overrides {
    std::string config_path;
    std::optional<std::string> backbone, backbone_weights, output_dir, manifest, split;
    std::optional<double> learning_rate, beta1, beta2, beta3, alpha, keep_fraction;
    std::optional<int> batch_size, epochs, prompt_depth, context_tokens, shots, decoder_hidden;
    std::optional<std::uint64_t> seed;
    bool no_meta_net = false, no_layer_norm = false, no_codebook = false, no_mixup = false, no_sketch2vec = false;
    bool joint_label_space = false, teacher_forced_eta = false, mixup_detach_features = false;

    void add_common(CLI::App* app) {
        app->add_option("-c,--config", config_path, "Flat JSON run config");
        app->add_option("--backbone", backbone, "Backbone adapter (toy, clip, clip-vit-b16)");
        app->add_option("--backbone-weights", backbone_weights, "Adapter weights path");
        app->add_option("-o,--out", output_dir, "Output directory");
        app->add_option("--seed", seed, "Random seed");
    }

    void add_training(CLI::App* app) {
        app->add_option("--manifest", manifest, "Dataset manifest (from prepare-data)");
        app->add_option("--split", split, "Split file (from prepare-data)");
        app->add_option("--learning-rate", learning_rate, "Adam learning rate");
        app->add_option("--batch-size", batch_size, "Batch size");
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--prompt-depth", prompt_depth, "Prompt depth J (layers receiving fresh prompts)");
        app->add_option("--context-tokens", context_tokens, "Prompt tokens per layer");
        app->add_option("--beta1", beta1, "Weight of the sketch2vec loss");
        app->add_option("--beta2", beta2, "Weight of the codebook loss");
        app->add_option("--beta3", beta3, "Weight of the mixup loss");
        app->add_option("--alpha", alpha, "Dirichlet concentration for abstraction mixup");
        app->add_option("--decoder-hidden", decoder_hidden, "sketch2vec GRU width");
        app->add_flag("--no-meta-net", no_meta_net, "Disable the Meta-Net (pi = 0)");
        app->add_flag("--no-layer-norm", no_layer_norm, "Keep backbone layer norms frozen");
        app->add_flag("--no-codebook", no_codebook, "Disable the abstraction codebook (eta = 0, no L_CB)");
        app->add_flag("--no-mixup", no_mixup, "Disable abstraction mixup");
        app->add_flag("--no-sketch2vec", no_sketch2vec, "Disable the raster-to-vector auxiliary loss");
        app->add_flag("--teacher-forced-eta", teacher_forced_eta, "Use ground-truth abstraction for eta in training");
        app->add_flag("--mixup-detach-features", mixup_detach_features, "Stop mixup gradients at the features");
        app->add_flag("--joint-label-space", joint_label_space, "Score unseen samples against seen + unseen names");
    }

    RunConfig resolve() const {
        RunConfig c = config_path.empty() ? RunConfig{} : read_run_config(config_path);
        if (backbone) c.backbone = *backbone;
        if (backbone_weights) c.backbone_weights = *backbone_weights;
        if (output_dir) c.output_dir = *output_dir;
        if (manifest) c.manifest = *manifest;
        if (split) c.split = *split;
        if (seed) c.train.seed = *seed;
        if (learning_rate) c.train.learning_rate = *learning_rate;
        if (batch_size) c.train.batch_size = *batch_size;
        if (epochs) c.train.epochs = *epochs;
        if (prompt_depth) c.train.prompt_depth = *prompt_depth;
        if (context_tokens) c.train.context_tokens = *context_tokens;
        if (beta1) c.train.beta1 = *beta1;
        if (beta2) c.train.beta2 = *beta2;
        if (beta3) c.train.beta3 = *beta3;
        if (alpha) c.train.alpha = *alpha;
        if (decoder_hidden) c.train.decoder_hidden = *decoder_hidden;
        if (shots) c.shots = *shots;
        if (keep_fraction) c.keep_fraction = *keep_fraction;
        if (no_meta_net) c.train.meta_net = false;
        if (no_layer_norm) c.train.layer_norm = false;
        if (no_codebook) c.train.codebook = false;
        if (no_mixup) c.train.mixup = false;
        if (no_sketch2vec) c.train.sketch2vec = false;
        if (teacher_forced_eta) c.train.teacher_forced_eta = true;
        if (mixup_detach_features) c.train.mixup_detach_features = true;
        if (joint_label_space) c.train.joint_label_space = true;
        validate(c);
        return c;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

std::shared_ptr<Backbone> open_backbone(const RunConfig& c) {
    return std::make_shared<Backbone>(load_pretrained(c.backbone, resolve_weights_path(c.backbone, c.backbone_weights)));
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// ---------------------------------------------------------------- prepare-data

int cmd_prepare_data(const Overrides& ov) {
    const RunConfig c = ov.resolve();
    const std::vector<std::string> categories = c.all_categories();
    if (categories.empty()) throw InputError("no categories configured (set 'categories' or 'seen'/'unseen')");
    if (c.seen.empty()) throw InputError("no seen categories configured");
    const auto backbone = open_backbone(c);
    IngestOptions io;
    io.raster_side = backbone->vision.config.image_size;
    io.stroke_width = c.stroke_width;
    io.max_points = static_cast<std::size_t>(c.max_points);

    std::vector<LabeledSample> samples;
    auto ingest = [&](const std::string& path, const std::string& format, SketchSource source) {
        if (path.empty()) return;
        IngestResult r = ingest_stroke_dataset(path, parse_stroke_format(format), source, categories, io);
        for (const auto& e : r.errors) {
            std::cerr << "warning: " << path << " record " << e.line << ": " << e.message << '\n';
        }
        if (r.rejected_unknown_category > 0) {
            std::cerr << "warning: " << path << ": " << r.rejected_unknown_category
                      << " record(s) rejected for unknown categories\n";
        }
        for (auto& s : r.samples) samples.push_back(std::move(s));
    };
    ingest(c.quickdraw_path, c.quickdraw_format, SketchSource::QuickDraw);
    ingest(c.tuberlin_path, c.tuberlin_format, SketchSource::TuBerlin);
    if (!c.edgemap_dir.empty()) {
        std::vector<LabeledSample> edgemaps = load_edgemap_directory(c.edgemap_dir, categories, io.raster_side);
        EdgemapFilterResult f = filter_edgemaps(std::move(edgemaps), categories, make_zero_shot_scorer(*backbone),
                                                c.keep_fraction);
        for (const auto& w : f.warnings) std::cerr << "warning: " << w << '\n';
        for (auto& s : f.kept) samples.push_back(std::move(s));
    }
    if (samples.empty()) throw InputError("no samples ingested; set quickdraw_path, tuberlin_path or edgemap_dir");

    const fs::path out(c.output_dir);
    fs::create_directories(out);
    const Manifest manifest = export_samples(samples, categories, out);
    write_manifest(manifest, out / "manifest.json");
    std::vector<SampleInfo> infos;
    for (const auto& s : samples) infos.push_back(s.info);
    const DatasetSplit split = build_split(infos, c.seen, c.unseen, c.shots, c.train.seed);
    write_split(split, out / "split.json");

    std::map<std::string, std::size_t> counts;
    for (const auto& s : samples) ++counts[source_code(s.info.source)];
    for (const auto& [src, n] : counts) std::cout << "source " << src << ": " << n << " samples\n";
    std::cout << "train " << split.train_samples.size() << ", eval_seen " << split.eval_seen_samples.size()
              << ", eval_unseen " << split.eval_unseen_samples.size() << '\n';
    std::cout << "manifest " << (out / "manifest.json").string() << '\n';
    std::cout << "split " << (out / "split.json").string() << '\n';
    return 0;
}

// ----------------------------------------------------------------------- train

int cmd_train(const Overrides& ov, bool print_config) {
    const RunConfig c = ov.resolve();
    if (print_config) {
        std::cout << to_json(c).dump(2) << '\n';
        return 0;
    }
    if (c.manifest.empty() || c.split.empty()) throw InputError("train needs a manifest and a split (--manifest, --split)");
    const DatasetSplit split = read_split(c.split);
    const Manifest manifest = read_manifest(c.manifest);
    if (split.seen_categories.empty()) throw InputError("split has no seen categories");
    const std::vector<LabeledSample> samples =
        load_samples(manifest, fs::path(c.manifest).parent_path(), split.train_samples, split.seen_categories);
    if (samples.empty()) throw InputError("split has no training samples");

    auto backbone = open_backbone(c);
    Model model = make_model(backbone, c.train, split.seen_categories);
    const fs::path out(c.output_dir);
    fs::create_directories(out);
    write_text(out / "config.json", to_json(c).dump(2) + "\n");
    std::cout << "training on " << samples.size() << " samples, " << model.trainable_parameters().size()
              << " trainable tensors, J=" << model.prompts.depth << ", prompt_len=" << model.prompts.prompt_len
              << '\n';

    TrainOptions opts;
    opts.output_dir = out;
    opts.on_epoch = [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << fmt(e.loss.total) << " ce " << fmt(e.loss.classification)
                  << " s2v " << fmt(e.loss.sketch2vec) << " cb " << fmt(e.loss.codebook) << " mix "
                  << fmt(e.loss.mixup) << " train_acc " << fmt(e.train_accuracy) << " abstraction_acc "
                  << fmt(e.abstraction_accuracy) << std::endl;
    };
    const TrainResult result = train(model, samples, opts);
    if (!result.history.empty()) {
        const EpochLog& last = result.history.back();
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.17g", last.loss.total);
        std::cout << "final_loss " << buf << '\n';
        std::cout << "final_train_accuracy " << fmt(last.train_accuracy) << '\n';
    }
    std::cout << "checkpoint " << (out / "checkpoint.safetensors").string() << '\n';
    return 0;
}

// ------------------------------------------------------------------------ eval

struct EvalArgs {
    std::string checkpoint, split, manifest, which = "seen", out = "eval";
    bool joint = false;
};

int cmd_eval(const EvalArgs& a) {
    if (!fs::exists(a.checkpoint)) throw InputError("checkpoint not found: " + a.checkpoint);
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const DatasetSplit split = read_split(a.split);
    const Manifest manifest = read_manifest(a.manifest);
    std::vector<std::string> label_space;
    std::vector<std::string> ids;
    if (a.which == "seen") {
        label_space = ck.model.categories;
        ids = split.eval_seen_samples;
    } else if (a.which == "unseen") {
        if (split.unseen_categories.empty()) throw InputError("the split has no unseen categories to evaluate");
        label_space = split.unseen_categories;
        if (a.joint || ck.model.config.joint_label_space) {
            label_space = ck.model.categories;
            label_space.insert(label_space.end(), split.unseen_categories.begin(), split.unseen_categories.end());
        }
        ids = split.eval_unseen_samples;
    } else {
        throw InputError("--which must be 'seen' or 'unseen'");
    }
    if (ids.empty()) throw InputError("the split has no " + a.which + " evaluation samples");
    const std::vector<LabeledSample> samples =
        load_samples(manifest, fs::path(a.manifest).parent_path(), ids, label_space);
    const EvalReport report = evaluate(ck.model, samples, label_space, a.which);
    write_report(report, a.out);
    std::cout << "top1_" << a.which << ' ' << fmt(report.top1) << '\n';
    std::cout << "abstraction_accuracy " << fmt(report.abstraction_accuracy) << '\n';
    for (const auto& [src, cc] : report.per_source) {
        std::cout << "source " << src << ' ' << fmt(cc.accuracy()) << " (" << cc.count << ")\n";
    }
    std::cout << "report " << (fs::path(a.out) / "report.json").string() << '\n';
    return 0;
}

// --------------------------------------------------------------------- predict

struct PredictArgs {
    std::string checkpoint, input, categories, format = "stroke3-delta";
    int top_k = 5;
    bool decode = false;
    int decode_steps = 0;
};

RasterSketch load_input(const PredictArgs& a, const Model& model, std::optional<VectorSketch>& vector) {
    const fs::path p(a.input);
    if (!fs::exists(p)) throw InputError("input not found: " + a.input);
    const Backbone& bb = *model.backbone;
    std::string ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext != ".json" && ext != ".ndjson") return load_image(p, bb.vision.config.image_size);

    std::ifstream in(p);
    std::string line;
    nlohmann::json j;
    try {
        if (ext == ".ndjson") {
            while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
            }
            j = nlohmann::json::parse(line);
        } else {
            j = nlohmann::json::parse(in);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("unreadable sketch file " + a.input + ": " + e.what());
    }
    const SketchLimits limits{static_cast<std::size_t>(model.config.max_decode_steps)};
    if (j.is_array()) {
        vector = vector_sketch_from_json(j);
    } else if (j.is_object() && j.contains("points")) {
        vector = parse_stroke_record(j, StrokeFormat::Stroke5Absolute, limits);
    } else if (j.is_object() && j.contains("strokes")) {
        vector = parse_stroke_record(j, parse_stroke_format(a.format), limits);
    } else {
        throw InputError("sketch file " + a.input + " holds neither stroke-5 points nor a stroke record");
    }
    return rasterize_for_backbone(*vector, bb.vision.config.image_size, 2.0);
}

int cmd_predict(const PredictArgs& a) {
    if (!fs::exists(a.checkpoint)) throw InputError("checkpoint not found: " + a.checkpoint);
    const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const Model& model = ck.model;
    std::vector<std::string> names = a.categories.empty() ? model.categories : split_list(a.categories);
    if (names.empty()) throw InputError("no categories to score against");
    std::optional<VectorSketch> vector;
    const RasterSketch image = load_input(a, model, vector);
    const TextCache cache = make_text_cache(model, names);
    const Prediction p = predict(model, image, cache);

    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return p.probabilities[x] > p.probabilities[y]; });
    nlohmann::json out;
    out["top_k"] = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(1, a.top_k)));
         ++i) {
        out["top_k"].push_back({{"category", names[order[i]]}, {"probability", p.probabilities[order[i]]}});
    }
    for (std::size_t i = 0; i < names.size(); ++i) out["probabilities"][names[i]] = p.probabilities[i];
    out["abstraction"] = {{"low", p.abstraction[0]}, {"medium", p.abstraction[1]}, {"high", p.abstraction[2]}};
    if (a.decode) {
        const int steps = a.decode_steps > 0 ? a.decode_steps : model.config.max_decode_steps;
        out["decoded_stroke5"] = to_json(decoded_to_sketch(decode_sequence(p.feature, model.decoder, steps)));
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

// ------------------------------------------------------------------ synth-data

struct SynthArgs {
    std::string out = "synthetic";
    std::string categories = "circle,square,triangle";
    std::string unseen;
    int per_source = 10;
    std::uint64_t seed = 0;
    double spread = 0.05;
    int side = 64;
};

int cmd_synth_data(const SynthArgs& a) {
    const std::vector<std::string> seen = split_list(a.categories);
    const std::vector<std::string> unseen = split_list(a.unseen);
    std::vector<std::string> all = seen;
    all.insert(all.end(), unseen.begin(), unseen.end());
    if (seen.empty()) throw InputError("synth-data needs at least one category");
    if (a.per_source < 1) throw InputError("--per-source must be at least 1");
    if (a.side < 8) throw InputError("--side must be at least 8");
    SyntheticOptions so;
    so.categories = all;
    for (auto& s : so.sources) s.spread = a.spread;
    so.per_source = a.per_source;
    so.raster_side = a.side;
    so.stroke_width = 1.5 * a.side / 16.0;
    so.seed = a.seed;
    const std::vector<LabeledSample> samples = make_synthetic_dataset(so);

    const fs::path out(a.out);
    fs::create_directories(out / "edgemaps");
    std::ofstream qd(out / "quickdraw.ndjson", std::ios::trunc), tu(out / "tuberlin.ndjson", std::ios::trunc);
    if (!qd || !tu) throw InputError("cannot write into " + out.string());
    for (const auto& s : samples) {
        if (s.info.source == SketchSource::Edgemap) {
            save_png(s.raster, out / "edgemaps" / s.info.category / (s.info.id + ".png"));
        } else if (s.info.source == SketchSource::QuickDraw) {
            // Integer stroke-3 offsets on a 255-unit canvas, as in QuickDraw dumps.
            nlohmann::json strokes = nlohmann::json::array();
            long px = 0, py = 0;
            for (const auto& pt : s.vector->points()) {
                const long x = std::lround(pt.x * 255.0), y = std::lround(pt.y * 255.0);
                strokes.push_back({x - px, y - py, pt.pen == PenState::Up ? 1 : 0});
                px = x;
                py = y;
            }
            qd << nlohmann::json{{"id", s.info.id}, {"category", s.info.category}, {"strokes", strokes}}.dump() << '\n';
        } else {
            tu << nlohmann::json{{"id", s.info.id}, {"category", s.info.category}, {"points", to_json(*s.vector)}}.dump()
               << '\n';
        }
    }
    RunConfig cfg;
    cfg.quickdraw_path = (out / "quickdraw.ndjson").string();
    cfg.tuberlin_path = (out / "tuberlin.ndjson").string();
    cfg.edgemap_dir = (out / "edgemaps").string();
    cfg.seen = seen;
    cfg.unseen = unseen;
    cfg.keep_fraction = 1.0;
    cfg.stroke_width = 1.5;
    write_text(out / "prepare_config.json", to_json(cfg).dump(2) + "\n");
    std::cout << "wrote " << samples.size() << " synthetic samples to " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-learned open-set sketch classification on a frozen vision-language backbone"};
    app.require_subcommand(1);

    Overrides prep_ov;
    auto* prep = app.add_subcommand("prepare-data", "Ingest stroke/Edgemap data, filter Edgemaps, write manifest + split");
    prep_ov.add_common(prep);
    prep->add_option("--shots", prep_ov.shots, "Training shots per category and source");
    prep->add_option("--keep-fraction", prep_ov.keep_fraction, "Fraction of Edgemaps kept per category");

    Overrides train_ov;
    bool print_config = false;
    auto* tr = app.add_subcommand("train", "Train prompts, Meta-Net, codebook, decoder and layer norms");
    train_ov.add_common(tr);
    train_ov.add_training(tr);
    tr->add_flag("--print-config,--dry-run", print_config, "Print the resolved config and exit");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the seen or unseen split");
    ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
    ev->add_option("--split", ea.split, "Split file")->required();
    ev->add_option("--manifest", ea.manifest, "Dataset manifest")->required();
    ev->add_option("--which", ea.which, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));
    ev->add_option("-o,--out", ea.out, "Report directory");
    ev->add_flag("--joint-label-space", ea.joint, "Score unseen samples against seen + unseen names");

    PredictArgs pa;
    auto* pr = app.add_subcommand("predict", "Classify one image or stroke file");
    pr->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
    pr->add_option("--input", pa.input, "Image (.png/.jpg) or sketch (.json stroke-5 / record, .ndjson)")->required();
    pr->add_option("--categories", pa.categories, "Comma-separated category names (default: training categories)");
    pr->add_option("--top-k", pa.top_k, "Number of categories listed");
    pr->add_option("--format", pa.format, "Stroke format of {\"strokes\": ...} records");
    pr->add_flag("--decode", pa.decode, "Include the decoded stroke-5 sequence");
    pr->add_option("--decode-steps", pa.decode_steps, "Decode length (default: max_decode_steps)");

    SynthArgs sa;
    auto* sy = app.add_subcommand("synth-data", "Write a procedural three-source sketch dataset");
    sy->add_option("-o,--out", sa.out, "Output directory");
    sy->add_option("--categories", sa.categories, "Comma-separated seen categories");
    sy->add_option("--unseen", sa.unseen, "Comma-separated unseen categories");
    sy->add_option("--per-source", sa.per_source, "Samples per category and source");
    sy->add_option("--seed", sa.seed, "Random seed");
    sy->add_option("--spread", sa.spread, "Half-width of each source's abstraction range");
    sy->add_option("--side", sa.side, "Edgemap image side in pixels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*prep) return cmd_prepare_data(prep_ov);
        if (*tr) return cmd_train(train_ov, print_config);
        if (*ev) return cmd_eval(ea);
        if (*pr) return cmd_predict(pa);
        if (*sy) return cmd_synth_data(sa);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
