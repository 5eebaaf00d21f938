#pragma once
// Flat JSON run configuration shared by the CLI commands: every training
// option plus dataset paths, backbone choice and output directory.

#include "sketchclip/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sketchclip {

struct RunConfig {
    TrainConfig train;
    std::string backbone = "toy";
    std::string backbone_weights;  // adapter-specific; see resolve_weights_path
    std::string output_dir = "run";
    std::string manifest;
    std::string split;

    // Data preparation.
    std::string quickdraw_path;
    std::string quickdraw_format = "stroke3-delta";
    std::string tuberlin_path;
    std::string tuberlin_format = "stroke5-absolute";
    std::string edgemap_dir;
    std::vector<std::string> categories;  // empty: seen followed by unseen
    std::vector<std::string> seen;
    std::vector<std::string> unseen;
    int shots = 10;
    double keep_fraction = 0.5;
    double stroke_width = 2.0;
    int max_points = 196;

    std::vector<std::string> all_categories() const;
};

nlohmann::json to_json(const RunConfig& c);
// Unknown keys, nested objects and wrongly typed values throw InputError.
RunConfig run_config_from_json(const nlohmann::json& j);
void apply_run_config_key(RunConfig& c, const std::string& key, const nlohmann::json& value);
RunConfig read_run_config(const std::filesystem::path& path);
void validate(const RunConfig& c);

// Relative weight paths that do not exist are looked up under
// $SKETCHCLIP_CACHE_DIR; an empty path for a CLIP adapter defaults to
// $SKETCHCLIP_CACHE_DIR/<adapter>.
std::string resolve_weights_path(const std::string& adapter, const std::string& path);
std::filesystem::path cache_dir();

}  // namespace sketchclip
