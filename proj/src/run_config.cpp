#include "sketchclip/run_config.hpp"

#include "sketchclip/errors.hpp"

#include <cstdlib>
#include <fstream>

namespace sketchclip {

std::vector<std::string> RunConfig::all_categories() const {
    if (!categories.empty()) return categories;
    std::vector<std::string> out = seen;
    out.insert(out.end(), unseen.begin(), unseen.end());
    return out;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j = to_json(c.train);
    j["backbone"] = c.backbone;
    j["backbone_weights"] = c.backbone_weights;
    j["output_dir"] = c.output_dir;
    j["manifest"] = c.manifest;
    j["split"] = c.split;
    j["quickdraw_path"] = c.quickdraw_path;
    j["quickdraw_format"] = c.quickdraw_format;
    j["tuberlin_path"] = c.tuberlin_path;
    j["tuberlin_format"] = c.tuberlin_format;
    j["edgemap_dir"] = c.edgemap_dir;
    j["categories"] = c.categories;
    j["seen"] = c.seen;
    j["unseen"] = c.unseen;
    j["shots"] = c.shots;
    j["keep_fraction"] = c.keep_fraction;
    j["stroke_width"] = c.stroke_width;
    j["max_points"] = c.max_points;
    return j;
}

namespace {

std::string str(const std::string& k, const nlohmann::json& v) {
    if (!v.is_string()) throw InputError("config key '" + k + "' must be a string");
    return v.get<std::string>();
}

std::vector<std::string> names(const std::string& k, const nlohmann::json& v) {
    if (!v.is_array()) throw InputError("config key '" + k + "' must be a list of names");
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(str(k, e));
    return out;
}

}  // namespace

void apply_run_config_key(RunConfig& c, const std::string& k, const nlohmann::json& v) {
    if (is_train_config_key(k)) {
        apply_train_config_key(c.train, k, v);
    } else if (k == "backbone") c.backbone = str(k, v);
    else if (k == "backbone_weights") c.backbone_weights = str(k, v);
    else if (k == "output_dir") c.output_dir = str(k, v);
    else if (k == "manifest") c.manifest = str(k, v);
    else if (k == "split") c.split = str(k, v);
    else if (k == "quickdraw_path") c.quickdraw_path = str(k, v);
    else if (k == "quickdraw_format") c.quickdraw_format = str(k, v);
    else if (k == "tuberlin_path") c.tuberlin_path = str(k, v);
    else if (k == "tuberlin_format") c.tuberlin_format = str(k, v);
    else if (k == "edgemap_dir") c.edgemap_dir = str(k, v);
    else if (k == "categories") c.categories = names(k, v);
    else if (k == "seen") c.seen = names(k, v);
    else if (k == "unseen") c.unseen = names(k, v);
    else if (k == "shots") {
        if (!v.is_number_integer()) throw InputError("config key 'shots' must be an integer");
        c.shots = v.get<int>();
    } else if (k == "keep_fraction") {
        if (!v.is_number()) throw InputError("config key 'keep_fraction' must be a number");
        c.keep_fraction = v.get<double>();
    } else if (k == "stroke_width") {
        if (!v.is_number()) throw InputError("config key 'stroke_width' must be a number");
        c.stroke_width = v.get<double>();
    } else if (k == "max_points") {
        if (!v.is_number_integer()) throw InputError("config key 'max_points' must be an integer");
        c.max_points = v.get<int>();
    } else {
        throw InputError("unknown config key '" + k + "'");
    }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("run config must be a flat JSON object");
    RunConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_object()) throw InputError("config key '" + it.key() + "' must not be a nested object");
        apply_run_config_key(c, it.key(), it.value());
    }
    return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path.string());
    try {
        return run_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("malformed config file " + path.string() + ": " + e.what());
    }
}

void validate(const RunConfig& c) {
    validate(c.train);
    if (c.shots < 1) throw InputError("invalid config: shots must be at least 1");
    if (!(c.keep_fraction > 0.0 && c.keep_fraction <= 1.0)) {
        throw InputError("invalid config: keep_fraction must lie in (0, 1]");
    }
    if (!(c.stroke_width > 0.0)) throw InputError("invalid config: stroke_width must be positive");
    if (c.max_points < 1) throw InputError("invalid config: max_points must be at least 1");
    for (const auto& s : c.seen) {
        for (const auto& u : c.unseen) {
            if (s == u) throw InputError("category '" + s + "' is both seen and unseen");
        }
    }
}

std::filesystem::path cache_dir() {
    if (const char* env = std::getenv("SKETCHCLIP_CACHE_DIR"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "sketchclip";
    return ".sketchclip-cache";
}

std::string resolve_weights_path(const std::string& adapter, const std::string& path) {
    if (adapter == "toy") return path;
    if (path.empty()) return (cache_dir() / adapter).string();
    const std::filesystem::path p(path);
    if (p.is_relative() && !std::filesystem::exists(p) && std::filesystem::exists(cache_dir() / p)) {
        return (cache_dir() / p).string();
    }
    return path;
}

}  // namespace sketchclip
