#pragma once

#include "sagkit/dataset.hpp"
#include "sagkit/image.hpp"
#include "sagkit/mask_optimizer.hpp"
#include "sagkit/metrics.hpp"
#include "sagkit/perturbation.hpp"
#include "sagkit/sag.hpp"
#include "sagkit/srae.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sagkit {

using Json = nlohmann::json;

/// 8-bit grayscale or RGB PNG. Palette, 16-bit and alpha inputs are converted;
/// values are quantised as round(255 v).
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

Json mask_to_json(const Mask& mask);
Mask mask_from_json(const Json& j);

Json curve_to_json(const Curve& curve);
Json optimizer_config_to_json(const OptimizerConfig& config);
/// Everything except wall time, so the output is reproducible byte for byte.
Json heatmap_result_to_json(const HeatmapResult& result, const std::string& image_id, int class_index);

/// Rows of metric,step,fraction,confidence,auc for both curves.
std::string curves_csv(const Curve& deletion, const Curve& insertion);

struct CurvePair {
    Curve deletion;
    Curve insertion;
};
/// Throws InputError on malformed rows.
CurvePair parse_curves_csv(const std::string& text);

/// Line plot of both curves.
std::string curves_svg(const Curve& deletion, const Curve& insertion);

Json mse_records_to_json(const std::vector<MseRecord>& records);
Json sag_to_json(const Sag& sag);
/// Throws InputError on schema violations.
Sag sag_from_json(const Json& j);
std::string sag_to_dot(const Sag& sag);

Json mse_summary_to_json(const MseSummary& summary);

Json faithfulness_to_json(const FaithfulnessReport& report);

/// Grayscale image of a heatmap (1 - M) upsampled to the given size; brighter is more important.
Image heatmap_image(const Mask& heatmap, int height, int width);

/// Writes <dir>/images/<index>.png and <dir>/labels.csv; returns the written paths.
std::vector<std::filesystem::path> dump_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);

/// Parses "3,5,7" (or "" for the empty set) into a subset of the grid.
PatchSubset parse_patch_list(const std::string& text, int patch_count);

}  // namespace sagkit
