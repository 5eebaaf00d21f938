#include "sketchclip/backbone.hpp"

#include "sketchclip/errors.hpp"
#include "sketchclip/safetensors.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <random>
#include <sstream>

namespace sketchclip {

namespace {

void block_layer_norms(TransformerBlock& b, std::vector<Parameter*>& out) {
    out.push_back(&b.ln1.gamma);
    out.push_back(&b.ln1.beta);
    out.push_back(&b.ln2.gamma);
    out.push_back(&b.ln2.beta);
}

bool is_layer_norm(const Backbone& bb, const Parameter* p) {
    auto& self = const_cast<Backbone&>(bb);
    for (bool v : {true, false}) {
        for (Parameter* q : self.layer_norm_parameters(v)) {
            if (q == p) return true;
        }
    }
    return false;
}

}  // namespace

std::vector<Parameter*> Backbone::layer_norm_parameters(bool vision_encoder) {
    std::vector<Parameter*> out;
    if (vision_encoder) {
        out.push_back(&vision.ln_pre.gamma);
        out.push_back(&vision.ln_pre.beta);
        for (auto& b : vision.blocks) block_layer_norms(b, out);
        out.push_back(&vision.ln_post.gamma);
        out.push_back(&vision.ln_post.beta);
    } else {
        for (auto& b : text.blocks) block_layer_norms(b, out);
        out.push_back(&text.ln_final.gamma);
        out.push_back(&text.ln_final.beta);
    }
    return out;
}

std::vector<Parameter*> Backbone::all_parameters() {
    std::vector<Parameter*> out = vision.parameters();
    for (Parameter* p : text.parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> Backbone::frozen_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : all_parameters()) {
        if (!is_layer_norm(*this, p)) out.push_back(p);
    }
    return out;
}

void Backbone::set_layer_norm_trainable(bool vision_encoder, bool text_encoder) {
    for (Parameter* p : layer_norm_parameters(true)) p->trainable = vision_encoder;
    for (Parameter* p : layer_norm_parameters(false)) p->trainable = text_encoder;
}

namespace {

// Parameter shapes shared by the toy initializer and the safetensors loader.
LayerNorm make_layer_norm(const std::string& name, int width) {
    return {Parameter(name + ".weight", Matrix::Ones(1, width), false),
            Parameter(name + ".bias", Matrix::Zero(1, width), false)};
}

TransformerBlock make_block(const std::string& prefix, int width, int heads, int mlp_width) {
    TransformerBlock b;
    b.ln1 = make_layer_norm(prefix + ".layer_norm1", width);
    b.ln2 = make_layer_norm(prefix + ".layer_norm2", width);
    b.attn.heads = heads;
    auto p = [&](const std::string& n, int r, int c) { return Parameter(prefix + "." + n, Matrix::Zero(r, c), false); };
    b.attn.q_w = p("self_attn.q_proj.weight", width, width);
    b.attn.q_b = p("self_attn.q_proj.bias", 1, width);
    b.attn.k_w = p("self_attn.k_proj.weight", width, width);
    b.attn.k_b = p("self_attn.k_proj.bias", 1, width);
    b.attn.v_w = p("self_attn.v_proj.weight", width, width);
    b.attn.v_b = p("self_attn.v_proj.bias", 1, width);
    b.attn.out_w = p("self_attn.out_proj.weight", width, width);
    b.attn.out_b = p("self_attn.out_proj.bias", 1, width);
    b.mlp.fc1_w = p("mlp.fc1.weight", mlp_width, width);
    b.mlp.fc1_b = p("mlp.fc1.bias", 1, mlp_width);
    b.mlp.fc2_w = p("mlp.fc2.weight", width, mlp_width);
    b.mlp.fc2_b = p("mlp.fc2.bias", 1, width);
    return b;
}

VisionEncoder make_vision(const VisionConfig& c) {
    if (c.width % c.heads != 0) throw InputError("vision width is not divisible by the head count");
    VisionEncoder v;
    v.config = c;
    v.patch_embed = Parameter("vision_model.embeddings.patch_embedding.weight",
                              Matrix::Zero(c.width, 3 * c.patch_size * c.patch_size), false);
    v.class_embed = Parameter("vision_model.embeddings.class_embedding", Matrix::Zero(1, c.width), false);
    v.pos_embed = Parameter("vision_model.embeddings.position_embedding.weight",
                            Matrix::Zero(c.patch_count() + 1, c.width), false);
    v.ln_pre = make_layer_norm("vision_model.pre_layrnorm", c.width);
    for (int i = 0; i < c.layers; ++i) {
        v.blocks.push_back(
            make_block("vision_model.encoder.layers." + std::to_string(i), c.width, c.heads, c.mlp_width));
    }
    v.ln_post = make_layer_norm("vision_model.post_layernorm", c.width);
    v.proj = Parameter("visual_projection.weight", Matrix::Zero(c.output_dim, c.width), false);
    return v;
}

TextEncoder make_text(const TextConfig& c) {
    if (c.width % c.heads != 0) throw InputError("text width is not divisible by the head count");
    TextEncoder t;
    t.config = c;
    t.token_embed = Parameter("text_model.embeddings.token_embedding.weight", Matrix::Zero(c.vocab_size, c.width), false);
    t.pos_embed =
        Parameter("text_model.embeddings.position_embedding.weight", Matrix::Zero(c.context_length, c.width), false);
    for (int i = 0; i < c.layers; ++i) {
        t.blocks.push_back(make_block("text_model.encoder.layers." + std::to_string(i), c.width, c.heads, c.mlp_width));
    }
    t.ln_final = make_layer_norm("text_model.final_layer_norm", c.width);
    t.proj = Parameter("text_projection.weight", Matrix::Zero(c.output_dim, c.width), false);
    return t;
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
    }
    return m;
}

void init_block(TransformerBlock& b, std::mt19937_64& rng) {
    for (Parameter* w : {&b.attn.q_w, &b.attn.k_w, &b.attn.v_w, &b.attn.out_w, &b.mlp.fc1_w, &b.mlp.fc2_w}) {
        w->value = gaussian(rng, w->value.rows(), w->value.cols(), 1.0 / std::sqrt(static_cast<double>(w->value.cols())));
    }
    for (Parameter* bias : {&b.attn.q_b, &b.attn.k_b, &b.attn.v_b, &b.attn.out_b, &b.mlp.fc1_b, &b.mlp.fc2_b}) {
        bias->value = gaussian(rng, 1, bias->value.cols(), 0.02);
    }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string weights_fingerprint(const Backbone& backbone) {
    auto& bb = const_cast<Backbone&>(backbone);
    std::uint64_t h = 1469598103934665603ull;
    for (const Parameter* p : bb.all_parameters()) {
        h = fnv1a(h, p->name.data(), p->name.size());
        const std::int64_t dims[2] = {p->value.rows(), p->value.cols()};
        h = fnv1a(h, dims, sizeof dims);
        h = fnv1a(h, p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()));
    }
    h = fnv1a(h, &backbone.temperature, sizeof backbone.temperature);
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

Backbone make_toy_backbone(std::uint64_t seed) {
    VisionConfig vc;
    vc.image_size = 16;
    vc.patch_size = 4;
    vc.width = 16;
    vc.layers = 2;
    vc.heads = 2;
    vc.mlp_width = 64;
    vc.output_dim = 8;
    TextConfig tc;
    tc.vocab_size = 258;
    tc.context_length = 32;
    tc.width = 12;
    tc.layers = 2;
    tc.heads = 2;
    tc.mlp_width = 48;
    tc.output_dim = 8;

    Backbone bb;
    bb.adapter = "toy";
    bb.source = "seed:" + std::to_string(seed);
    bb.vision = make_vision(vc);
    bb.text = make_text(tc);
    auto tok = std::make_shared<ByteTokenizer>();
    bb.text.start_token = tok->start_token();
    bb.text.end_token = tok->end_token();
    bb.tokenizer = tok;
    bb.temperature = 0.07;

    std::mt19937_64 rng(seed);
    VisionEncoder& v = bb.vision;
    v.patch_embed.value = gaussian(rng, vc.width, 3 * vc.patch_size * vc.patch_size,
                                   1.0 / std::sqrt(3.0 * vc.patch_size * vc.patch_size));
    v.class_embed.value = gaussian(rng, 1, vc.width, 0.5);
    v.pos_embed.value = gaussian(rng, vc.patch_count() + 1, vc.width, 0.2);
    for (auto& b : v.blocks) init_block(b, rng);
    v.proj.value = gaussian(rng, vc.output_dim, vc.width, 1.0 / std::sqrt(static_cast<double>(vc.width)));

    TextEncoder& t = bb.text;
    t.token_embed.value = gaussian(rng, tc.vocab_size, tc.width, 1.0);
    t.pos_embed.value = gaussian(rng, tc.context_length, tc.width, 0.2);
    for (auto& b : t.blocks) init_block(b, rng);
    t.proj.value = gaussian(rng, tc.output_dim, tc.width, 1.0 / std::sqrt(static_cast<double>(tc.width)));

    bb.fingerprint = weights_fingerprint(bb);
    return bb;
}

namespace {

std::vector<std::int64_t> hf_shape(const Parameter& p, const VisionConfig& vc) {
    if (p.name == "vision_model.embeddings.patch_embedding.weight") {
        return {vc.width, 3, vc.patch_size, vc.patch_size};
    }
    if (p.value.rows() == 1 && p.name.find("projection") == std::string::npos &&
        p.name.find("position_embedding") == std::string::npos && p.name.find("token_embedding") == std::string::npos) {
        return {p.value.cols()};
    }
    return {p.value.rows(), p.value.cols()};
}

int count_layers(const SafetensorsReader& r, const std::string& prefix) {
    int n = 0;
    while (r.contains(prefix + std::to_string(n) + ".self_attn.q_proj.weight")) ++n;
    return n;
}

int metadata_int(const SafetensorsReader& r, const std::string& key, int fallback) {
    const auto it = r.metadata().find(key);
    if (it == r.metadata().end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw InputError("metadata entry " + key + " is not an integer");
    }
}

void fill(const SafetensorsReader& r, Parameter& p) {
    Matrix m = r.matrix(p.name);
    if (m.size() != p.value.size()) {
        throw InputError("tensor " + p.name + " has " + std::to_string(m.size()) + " values, expected " +
                         std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = ag::reshape_row_major(m, p.value.rows(), p.value.cols());
}

Backbone load_clip(const std::string& path_string, const std::string& adapter) {
    std::filesystem::path path(path_string);
    if (path_string.empty()) throw InputError("adapter '" + adapter + "' needs a weights path");
    if (std::filesystem::is_directory(path)) path /= "model.safetensors";
    if (!std::filesystem::exists(path)) throw InputError("weights file not found: " + path.string());
    const SafetensorsReader r(path);

    const Matrix patch = r.matrix("vision_model.embeddings.patch_embedding.weight");
    const auto& pinfo = r.info("vision_model.embeddings.patch_embedding.weight");
    VisionConfig vc;
    vc.width = static_cast<int>(patch.rows());
    vc.patch_size = pinfo.shape.size() == 4 ? static_cast<int>(pinfo.shape[3])
                                            : static_cast<int>(std::lround(std::sqrt(patch.cols() / 3.0)));
    const auto vpos = r.info("vision_model.embeddings.position_embedding.weight").shape.at(0);
    const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(vpos - 1))));
    if (grid * grid + 1 != vpos) throw InputError("vision position embedding count is not a square grid plus one");
    vc.image_size = grid * vc.patch_size;
    vc.layers = count_layers(r, "vision_model.encoder.layers.");
    vc.mlp_width = static_cast<int>(r.info("vision_model.encoder.layers.0.mlp.fc1.weight").shape.at(0));
    vc.output_dim = static_cast<int>(r.info("visual_projection.weight").shape.at(0));
    vc.heads = metadata_int(r, "vision_heads", std::max(1, vc.width / 64));

    TextConfig tc;
    const auto& tinfo = r.info("text_model.embeddings.token_embedding.weight");
    tc.vocab_size = static_cast<int>(tinfo.shape.at(0));
    tc.width = static_cast<int>(tinfo.shape.at(1));
    tc.context_length = static_cast<int>(r.info("text_model.embeddings.position_embedding.weight").shape.at(0));
    tc.layers = count_layers(r, "text_model.encoder.layers.");
    tc.mlp_width = static_cast<int>(r.info("text_model.encoder.layers.0.mlp.fc1.weight").shape.at(0));
    tc.output_dim = static_cast<int>(r.info("text_projection.weight").shape.at(0));
    tc.heads = metadata_int(r, "text_heads", std::max(1, tc.width / 64));

    Backbone bb;
    bb.adapter = adapter;
    bb.source = path.string();
    bb.vision = make_vision(vc);
    bb.text = make_text(tc);
    for (Parameter* p : bb.all_parameters()) fill(r, *p);
    bb.temperature = r.contains("logit_scale") ? 1.0 / std::exp(r.matrix("logit_scale")(0, 0)) : 0.01;

    const auto tk = r.metadata().find("tokenizer");
    const std::filesystem::path dir = path.parent_path();
    if (tk != r.metadata().end() && tk->second == "byte") {
        bb.tokenizer = std::make_shared<ByteTokenizer>();
    } else {
        bb.tokenizer = std::make_shared<BpeTokenizer>(dir / "vocab.json", dir / "merges.txt");
    }
    if (bb.tokenizer->vocab_size() > tc.vocab_size) {
        throw InputError("tokenizer has " + std::to_string(bb.tokenizer->vocab_size()) +
                         " entries but the text encoder only " + std::to_string(tc.vocab_size));
    }
    bb.text.start_token = bb.tokenizer->start_token();
    bb.text.end_token = bb.tokenizer->end_token();
    bb.fingerprint = weights_fingerprint(bb);
    return bb;
}

void require_vit_b16(const Backbone& bb) {
    struct Dim {
        const char* name;
        int expected;
        int found;
    };
    const Dim dims[] = {{"vision width d_p", 768, bb.vision.config.width},
                        {"text width d_t", 512, bb.text.config.width},
                        {"output dim d", 512, bb.vision.config.output_dim},
                        {"text output dim", 512, bb.text.config.output_dim},
                        {"vision layers", 12, bb.vision.config.layers},
                        {"text layers", 12, bb.text.config.layers},
                        {"patch size", 16, bb.vision.config.patch_size},
                        {"image size", 224, bb.vision.config.image_size}};
    std::string mismatch;
    for (const auto& d : dims) {
        if (d.expected != d.found) {
            mismatch += std::string("\n  ") + d.name + ": expected " + std::to_string(d.expected) + ", found " +
                        std::to_string(d.found);
        }
    }
    if (!mismatch.empty()) throw InputError("architecture mismatch for adapter clip-vit-b16:" + mismatch);
}

}  // namespace

std::vector<std::string> adapter_names() { return {"toy", "clip", "clip-vit-b16"}; }

Backbone load_pretrained(const std::string& adapter_name, const std::string& path) {
    if (adapter_name == "toy") {
        std::uint64_t seed = 0;
        if (path.rfind("seed:", 0) == 0) {
            try {
                seed = std::stoull(path.substr(5));
            } catch (const std::exception&) {
                throw InputError("bad toy seed specification '" + path + "'");
            }
        } else if (!path.empty()) {
            throw InputError("the toy adapter takes no weights file (got '" + path + "')");
        }
        return make_toy_backbone(seed);
    }
    if (adapter_name == "clip") return load_clip(path, adapter_name);
    if (adapter_name == "clip-vit-b16") {
        Backbone bb = load_clip(path, adapter_name);
        require_vit_b16(bb);
        return bb;
    }
    std::string known;
    for (const auto& n : adapter_names()) known += (known.empty() ? "" : ", ") + n;
    throw InputError("unknown backbone adapter '" + adapter_name + "' (known: " + known + ")");
}

void export_clip_safetensors(const Backbone& backbone, const std::filesystem::path& path, bool double_precision) {
    auto& bb = const_cast<Backbone&>(backbone);
    std::map<std::string, TensorToWrite> tensors;
    for (const Parameter* p : bb.all_parameters()) tensors[p->name] = {hf_shape(*p, bb.vision.config), p->value};
    tensors["logit_scale"] = {{}, Matrix::Constant(1, 1, std::log(1.0 / backbone.temperature))};
    std::map<std::string, std::string> meta = {{"vision_heads", std::to_string(bb.vision.config.heads)},
                                               {"text_heads", std::to_string(bb.text.config.heads)},
                                               {"tokenizer", backbone.tokenizer->kind()}};
    write_safetensors(path, tensors, meta, double_precision ? StoredType::F64 : StoredType::F32);
}

ag::Var similarity_logits(const ag::Var& image_feature, const ag::Var& text_features, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (image_feature.cols() != text_features.cols()) throw ShapeError("image and text feature widths differ");
    const ag::Var fs = ag::l2_normalize_rows(image_feature);
    const ag::Var ft = ag::l2_normalize_rows(text_features);
    return ag::scale(ag::matmul(fs, ag::transpose(ft)), 1.0 / temperature);
}

std::vector<double> classify(const RowVector& image_feature, const Matrix& text_features, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (image_feature.size() != text_features.cols()) throw ShapeError("image and text feature widths differ");
    if (!image_feature.allFinite() || !text_features.allFinite()) throw NumericError("non-finite feature");
    const double ni = image_feature.norm();
    if (!(ni > 0.0)) throw NumericError("cosine similarity undefined for a zero-norm image feature");
    const auto k = text_features.rows();
    std::vector<double> logits(static_cast<std::size_t>(k));
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
        const double nt = text_features.row(i).norm();
        if (!(nt > 0.0)) throw NumericError("cosine similarity undefined for a zero-norm text feature");
        logits[static_cast<std::size_t>(i)] = image_feature.dot(text_features.row(i)) / (ni * nt) / temperature;
        top = std::max(top, logits[static_cast<std::size_t>(i)]);
    }
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp(l - top);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

RowVector encode_image(const Backbone& backbone, const RasterSketch& image) {
    ag::Tape tape(false);
    return backbone.vision.encode(tape, image, {}).value();
}

Matrix encode_category_names(const Backbone& backbone, std::span<const std::string> names) {
    Matrix out(static_cast<Eigen::Index>(names.size()), backbone.text.config.output_dim);
    for (std::size_t i = 0; i < names.size(); ++i) {
        ag::Tape tape(false);
        out.row(static_cast<Eigen::Index>(i)) = backbone.text.encode(tape, backbone.tokenize(names[i]), {}).value();
    }
    return out;
}

ZeroShotScorer make_zero_shot_scorer(const Backbone& backbone) {
    return [&backbone](const RasterSketch& image, std::span<const std::string> names) {
        const RasterSketch input =
            image.side == backbone.vision.config.image_size ? image : resize_raster(image, backbone.vision.config.image_size);
        return classify(encode_image(backbone, input), encode_category_names(backbone, names), backbone.temperature);
    };
}

}  // namespace sketchclip
