#include "sketchclip/dataset.hpp"

#include "sketchclip/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace sketchclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string padded(std::size_t v, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << v;
    return os.str();
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

std::string to_string(AbstractionLevel level) {
    switch (level) {
        case AbstractionLevel::Low: return "LOW";
        case AbstractionLevel::Medium: return "MEDIUM";
        case AbstractionLevel::High: return "HIGH";
    }
    return "?";
}

std::string to_string(SketchSource source) {
    switch (source) {
        case SketchSource::Edgemap: return "edgemap";
        case SketchSource::TuBerlin: return "tu-berlin";
        case SketchSource::QuickDraw: return "quickdraw";
    }
    return "?";
}

std::string source_code(SketchSource source) {
    switch (source) {
        case SketchSource::Edgemap: return "EM";
        case SketchSource::TuBerlin: return "TU";
        case SketchSource::QuickDraw: return "QD";
    }
    return "?";
}

SketchSource parse_source(const std::string& name) {
    const std::string n = lower(name);
    if (n == "em" || n == "edgemap" || n == "edgemaps") return SketchSource::Edgemap;
    if (n == "tu" || n == "tu-berlin" || n == "tuberlin") return SketchSource::TuBerlin;
    if (n == "qd" || n == "quickdraw") return SketchSource::QuickDraw;
    throw InputError("unknown sketch source '" + name + "'");
}

AbstractionLevel parse_abstraction(const std::string& name) {
    const std::string n = lower(name);
    if (n == "low") return AbstractionLevel::Low;
    if (n == "medium") return AbstractionLevel::Medium;
    if (n == "high") return AbstractionLevel::High;
    throw InputError("unknown abstraction level '" + name + "'");
}

StrokeFormat parse_stroke_format(const std::string& name) {
    const std::string n = lower(name);
    if (n == "stroke3-delta" || n == "stroke3") return StrokeFormat::Stroke3Delta;
    if (n == "stroke5-absolute" || n == "stroke5") return StrokeFormat::Stroke5Absolute;
    throw InputError("unknown stroke format '" + name + "'");
}

int index_of(std::span<const std::string> names, const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

VectorSketch parse_stroke_record(const json& rec, StrokeFormat format, const SketchLimits& limits) {
    if (format == StrokeFormat::Stroke3Delta) {
        if (!rec.contains("strokes") || !rec["strokes"].is_array()) throw InputError("missing \"strokes\" array");
        std::vector<Stroke3Point> deltas;
        for (const auto& p : rec["strokes"]) {
            if (!p.is_array() || p.size() != 3) throw InputError("stroke-3 entries must be [dx, dy, lift]");
            const double pen = p[2].get<double>();
            if (pen != 0.0 && pen != 1.0) throw InputError("stroke-3 lift flag must be 0 or 1");
            deltas.push_back({p[0].get<double>(), p[1].get<double>(), pen == 1.0});
        }
        if (deltas.empty()) throw InputError("record has no points");
        return from_stroke3(deltas, limits);
    }
    if (!rec.contains("points") || !rec["points"].is_array()) throw InputError("missing \"points\" array");
    std::vector<StrokePoint> pts;
    for (const auto& p : rec["points"]) {
        if (!p.is_array() || p.size() != 5) throw InputError("stroke-5 entries must be [x, y, q1, q2, q3]");
        const int q1 = p[2].get<int>(), q2 = p[3].get<int>(), q3 = p[4].get<int>();
        if (q1 < 0 || q2 < 0 || q3 < 0 || q1 + q2 + q3 != 1) throw InputError("pen state is not one-hot");
        pts.push_back({p[0].get<double>(), p[1].get<double>(),
                       q1 ? PenState::Down : (q2 ? PenState::Up : PenState::End)});
    }
    if (pts.empty()) throw InputError("record has no points");
    return from_absolute(pts, limits);
}

IngestResult ingest_stroke_dataset(const fs::path& path, StrokeFormat format, SketchSource source,
                                   std::span<const std::string> categories, const IngestOptions& options) {
    if (source == SketchSource::Edgemap) throw InputError("Edgemaps are image sets, not stroke datasets");
    if (!fs::exists(path)) throw InputError("stroke dataset not found: " + path.string());
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());

    IngestResult result;
    const SketchLimits limits{options.max_points};
    std::string line;
    std::size_t index = 0;
    for (; std::getline(in, line); ++index) {
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        try {
            const json rec = json::parse(line);
            std::string category;
            if (rec.contains("category")) {
                category = rec["category"].get<std::string>();
            } else if (rec.contains("word")) {
                category = rec["word"].get<std::string>();
            } else {
                throw InputError("missing \"category\"");
            }
            const int cat = index_of(categories, category);
            if (cat < 0) {
                ++result.rejected_unknown_category;
                continue;
            }
            LabeledSample s;
            s.info.category = category;
            s.info.source = source;
            s.info.id = rec.contains("id") ? rec["id"].get<std::string>()
                                           : source_code(source) + "-" + category + "-" + padded(index, 6);
            s.category_index = cat;
            s.abstraction = abstraction_of(source);
            s.vector = parse_stroke_record(rec, format, limits);
            s.raster = rasterize_for_backbone(*s.vector, options.raster_side, options.stroke_width);
            result.samples.push_back(std::move(s));
        } catch (const std::exception& e) {
            result.errors.push_back({index, e.what()});
        }
    }
    return result;
}

std::vector<LabeledSample> load_edgemap_directory(const fs::path& dir, std::span<const std::string> categories,
                                                  int raster_side) {
    if (!fs::is_directory(dir)) throw InputError("Edgemap directory not found: " + dir.string());
    std::vector<LabeledSample> out;
    for (std::size_t c = 0; c < categories.size(); ++c) {
        const fs::path cat_dir = dir / categories[c];
        if (!fs::is_directory(cat_dir)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(cat_dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string ext = lower(entry.path().extension().string());
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            LabeledSample s;
            s.info = {"EM-" + categories[c] + "-" + f.stem().string(), categories[c], SketchSource::Edgemap};
            s.category_index = static_cast<int>(c);
            s.abstraction = AbstractionLevel::Low;
            s.raster = load_image(f, raster_side);
            out.push_back(std::move(s));
        }
    }
    return out;
}

EdgemapFilterResult filter_edgemaps(std::vector<LabeledSample> images, std::span<const std::string> category_names,
                                    const ZeroShotScorer& scorer, double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw InputError("keep_fraction must lie in (0, 1]");
    EdgemapFilterResult result;
    std::vector<std::vector<std::pair<double, LabeledSample>>> buckets(category_names.size());
    for (auto& img : images) {
        const int own = index_of(category_names, img.info.category);
        if (own < 0) {
            result.warnings.push_back("image " + img.info.id + " has unknown category '" + img.info.category + "'");
            continue;
        }
        const std::vector<double> probs = scorer(img.raster, category_names);
        if (probs.size() != category_names.size()) throw std::logic_error("scorer returned the wrong number of scores");
        buckets[static_cast<std::size_t>(own)].emplace_back(probs[static_cast<std::size_t>(own)], std::move(img));
    }
    for (std::size_t c = 0; c < buckets.size(); ++c) {
        auto& bucket = buckets[c];
        if (bucket.empty()) {
            result.warnings.push_back("category '" + category_names[c] + "' has no Edgemap images; dropped");
            continue;
        }
        std::sort(bucket.begin(), bucket.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second.info.id < b.second.info.id;
        });
        const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(bucket.size()) - 1e-9));
        for (std::size_t i = 0; i < keep && i < bucket.size(); ++i) result.kept.push_back(std::move(bucket[i].second));
    }
    return result;
}

DatasetSplit build_split(std::span<const SampleInfo> samples, std::span<const std::string> seen,
                         std::span<const std::string> unseen, int shots, std::uint64_t seed) {
    if (shots < 1) throw InputError("shots per class must be positive");
    const std::set<std::string> seen_set(seen.begin(), seen.end());
    const std::set<std::string> unseen_set(unseen.begin(), unseen.end());
    for (const auto& s : seen_set) {
        if (unseen_set.count(s)) throw InputError("category '" + s + "' is both seen and unseen");
    }

    std::set<SketchSource> sources;
    std::map<std::pair<std::string, SketchSource>, std::vector<std::string>> groups;
    std::set<std::string> ids;
    DatasetSplit split;
    split.seen_categories.assign(seen.begin(), seen.end());
    split.unseen_categories.assign(unseen.begin(), unseen.end());
    split.shots_per_class = shots;
    split.seed = seed;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second) throw InputError("duplicate sample id '" + s.id + "'");
        sources.insert(s.source);
        if (seen_set.count(s.category)) {
            groups[{s.category, s.source}].push_back(s.id);
        } else if (unseen_set.count(s.category)) {
            split.eval_unseen_samples.push_back(s.id);
        }
    }

    std::mt19937_64 rng(seed);
    for (const auto& category : seen) {
        for (SketchSource src : sources) {
            auto& ids_in_group = groups[{category, src}];
            if (ids_in_group.size() < static_cast<std::size_t>(shots)) {
                throw InputError("category '" + category + "' source " + source_code(src) + " has " +
                                 std::to_string(ids_in_group.size()) + " samples, need " + std::to_string(shots));
            }
            std::sort(ids_in_group.begin(), ids_in_group.end());
            std::shuffle(ids_in_group.begin(), ids_in_group.end(), rng);
            for (std::size_t i = 0; i < ids_in_group.size(); ++i) {
                (i < static_cast<std::size_t>(shots) ? split.train_samples : split.eval_seen_samples)
                    .push_back(ids_in_group[i]);
            }
        }
    }
    std::sort(split.eval_seen_samples.begin(), split.eval_seen_samples.end());
    std::sort(split.eval_unseen_samples.begin(), split.eval_unseen_samples.end());
    return split;
}

json to_json(const DatasetSplit& split) {
    return json{{"version", 1},
                {"seen_categories", split.seen_categories},
                {"unseen_categories", split.unseen_categories},
                {"shots_per_class", split.shots_per_class},
                {"seed", split.seed},
                {"train_samples", split.train_samples},
                {"eval_seen_samples", split.eval_seen_samples},
                {"eval_unseen_samples", split.eval_unseen_samples}};
}

DatasetSplit split_from_json(const json& j) {
    try {
        DatasetSplit s;
        s.seen_categories = j.at("seen_categories").get<std::vector<std::string>>();
        s.unseen_categories = j.at("unseen_categories").get<std::vector<std::string>>();
        s.shots_per_class = j.at("shots_per_class").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train_samples = j.at("train_samples").get<std::vector<std::string>>();
        s.eval_seen_samples = j.at("eval_seen_samples").get<std::vector<std::string>>();
        s.eval_unseen_samples = j.at("eval_unseen_samples").get<std::vector<std::string>>();
        return s;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed split file: ") + e.what());
    }
}

void write_split(const DatasetSplit& split, const fs::path& path) { write_json_file(to_json(split), path); }

DatasetSplit read_split(const fs::path& path) { return split_from_json(read_json_file(path)); }

void write_manifest(const Manifest& manifest, const fs::path& path) {
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back({{"id", e.info.id},
                           {"category", e.info.category},
                           {"source", source_code(e.info.source)},
                           {"abstraction", to_string(abstraction_of(e.info.source))},
                           {"raster", e.raster_path},
                           {"vector", e.vector_path ? json(*e.vector_path) : json(nullptr)}});
    }
    write_json_file(json{{"version", 1},
                         {"categories", manifest.categories},
                         {"raster_side", manifest.raster_side},
                         {"samples", entries}},
                    path);
}

Manifest read_manifest(const fs::path& path) {
    const json j = read_json_file(path);
    try {
        Manifest m;
        m.categories = j.at("categories").get<std::vector<std::string>>();
        m.raster_side = j.at("raster_side").get<int>();
        for (const auto& e : j.at("samples")) {
            ManifestEntry entry;
            entry.info = {e.at("id").get<std::string>(), e.at("category").get<std::string>(),
                          parse_source(e.at("source").get<std::string>())};
            entry.raster_path = e.at("raster").get<std::string>();
            if (!e.at("vector").is_null()) entry.vector_path = e.at("vector").get<std::string>();
            m.entries.push_back(std::move(entry));
        }
        return m;
    } catch (const json::exception& e) {
        throw InputError("malformed manifest " + path.string() + ": " + e.what());
    }
}

Manifest export_samples(std::span<const LabeledSample> samples, std::span<const std::string> categories,
                        const fs::path& dir) {
    Manifest m;
    m.categories.assign(categories.begin(), categories.end());
    fs::create_directories(dir / "rasters");
    fs::create_directories(dir / "vectors");
    for (const auto& s : samples) {
        if (m.raster_side == 0) m.raster_side = s.raster.side;
        ManifestEntry e;
        e.info = s.info;
        e.raster_path = "rasters/" + s.info.id + ".png";
        save_png(s.raster, dir / e.raster_path);
        if (s.vector) {
            e.vector_path = "vectors/" + s.info.id + ".json";
            write_json_file(to_json(*s.vector), dir / *e.vector_path);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<LabeledSample> load_samples(const Manifest& manifest, const fs::path& manifest_dir,
                                        std::span<const std::string> ids, std::span<const std::string> label_space) {
    std::map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : manifest.entries) by_id[e.info.id] = &e;
    std::vector<const ManifestEntry*> wanted;
    if (ids.empty()) {
        for (const auto& e : manifest.entries) wanted.push_back(&e);
    } else {
        for (const auto& id : ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) throw InputError("sample '" + id + "' is not in the manifest");
            wanted.push_back(it->second);
        }
    }
    std::vector<LabeledSample> out;
    for (const ManifestEntry* e : wanted) {
        const int k = index_of(label_space, e->info.category);
        if (k < 0) continue;
        LabeledSample s;
        s.info = e->info;
        s.category_index = k;
        s.abstraction = abstraction_of(e->info.source);
        s.raster = load_image(manifest_dir / e->raster_path, manifest.raster_side);
        if (e->vector_path) s.vector = vector_sketch_from_json(read_json_file(manifest_dir / *e->vector_path));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace sketchclip
