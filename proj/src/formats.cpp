#include "sagkit/formats.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/errors.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sagkit {

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels() != 1 && image.channels() != 3) throw InputError("PNG export supports 1 or 3 channels");
    std::vector<std::uint8_t> px(image.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::uint8_t(std::lround(image.data()[i] * 255.0));

    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(image.width());
    img.height = png_uint_32(image.height());
    img.format = image.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr))
        throw IoError(std::string("PNG encoding failed: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr))
        throw IoError(std::string("PNG encoding failed: ") + img.message);
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw IoError(std::string("cannot decode PNG: ") + img.message);
    const bool color = img.format & PNG_FORMAT_FLAG_COLOR;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int channels = color ? 3 : 1;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError(std::string("cannot decode PNG: ") + img.message);
    }
    std::vector<double> values(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) values[i] = double(px[i]) / 255.0;
    return Image({int(img.height), int(img.width), channels}, std::move(values));
}

Image read_png(const std::filesystem::path& path) {
    try {
        return decode_png(binio::read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const Image& image) { binio::write_file(path, encode_png(image)); }

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Json mask_to_json(const Mask& mask) { return {{"rows", mask.rows()}, {"cols", mask.cols()}, {"values", mask.values()}}; }

Mask mask_from_json(const Json& j) {
    try {
        return Mask(j.at("rows").get<int>(), j.at("cols").get<int>(), j.at("values").get<std::vector<double>>());
    } catch (const Json::exception& e) {
        throw InputError(std::string("malformed mask JSON: ") + e.what());
    }
}

Json curve_to_json(const Curve& curve) {
    return {{"fractions", curve.fractions}, {"confidences", curve.confidences}, {"auc", curve.auc}};
}

Json optimizer_config_to_json(const OptimizerConfig& c) {
    return {{"resolution", c.resolution},
            {"lambda_l1", c.lambda_l1},
            {"lambda_tv", c.lambda_tv},
            {"tv_beta", c.tv_beta},
            {"btv_sigma", c.btv_sigma},
            {"bilateral", c.bilateral},
            {"btv_full_resolution", c.btv_full_resolution},
            {"lambda_ins", c.lambda_ins},
            {"ig_steps", c.ig_steps},
            {"noise_sigma", c.noise_sigma},
            {"max_iterations", c.max_iterations},
            {"initial_step", c.initial_step},
            {"shrink", c.shrink},
            {"max_halvings", c.max_halvings},
            {"armijo_c", c.armijo_c},
            {"init_value", c.init_value},
            {"curve_steps", c.curve_steps},
            {"blur_sigma", c.blur_sigma},
            {"baseline_epsilon", c.baseline_epsilon},
            {"seed", c.seed}};
}

Json heatmap_result_to_json(const HeatmapResult& r, const std::string& image_id, int class_index) {
    return {{"image_id", image_id},
            {"class_index", class_index},
            {"method", to_string(r.method)},
            {"mask", mask_to_json(r.mask)},
            {"heatmap", mask_to_json(r.heatmap)},
            {"loss_trace", r.loss_trace},
            {"accepted_steps", r.accepted_steps},
            {"baseline_sigma", r.baseline_sigma},
            {"baseline_confidence", r.baseline_confidence},
            {"deletion", curve_to_json(r.deletion)},
            {"insertion", curve_to_json(r.insertion)},
            {"config", optimizer_config_to_json(r.config)}};
}

std::string curves_csv(const Curve& deletion, const Curve& insertion) {
    std::string out = "metric,step,fraction,confidence,auc\n";
    auto rows = [&](const char* name, const Curve& c) {
        for (std::size_t i = 0; i < c.fractions.size(); ++i)
            out += std::string(name) + "," + std::to_string(i) + "," + format_double(c.fractions[i]) + "," +
                   format_double(c.confidences[i]) + "," + format_double(c.auc) + "\n";
    };
    rows("deletion", deletion);
    rows("insertion", insertion);
    return out;
}

namespace {

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError("not a number: \"" + s + "\"");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

CurvePair parse_curves_csv(const std::string& text) {
    CurvePair out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "metric,step,fraction,confidence,auc")
        throw InputError("curves CSV has an unexpected header");
    bool seen_del = false, seen_ins = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 5) throw InputError("curves CSV row has " + std::to_string(f.size()) + " fields");
        Curve* c = nullptr;
        if (f[0] == "deletion") {
            c = &out.deletion;
            seen_del = true;
        } else if (f[0] == "insertion") {
            c = &out.insertion;
            seen_ins = true;
        } else {
            throw InputError("unknown curve \"" + f[0] + "\"");
        }
        if (f[1] != std::to_string(c->fractions.size())) throw InputError("curves CSV steps out of order");
        c->fractions.push_back(parse_double(f[2]));
        c->confidences.push_back(parse_double(f[3]));
        c->auc = parse_double(f[4]);
    }
    if (!seen_del || !seen_ins) throw InputError("curves CSV needs both deletion and insertion rows");
    return out;
}

std::string curves_svg(const Curve& deletion, const Curve& insertion) {
    constexpr int W = 360, H = 240, pad = 30;
    auto polyline = [&](const Curve& c, const char* colour) {
        std::string pts;
        for (std::size_t i = 0; i < c.fractions.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", pad + c.fractions[i] * (W - 2 * pad),
                          H - pad - c.confidences[i] * (H - 2 * pad));
            pts += buf;
        }
        return "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" + pts +
               "\"/>\n";
    };
    char axes[512];
    std::snprintf(axes, sizeof axes,
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" stroke=\"#999\"/>\n", pad, pad,
                  W - 2 * pad, H - 2 * pad);
    char legend[256];
    std::snprintf(legend, sizeof legend,
                  "<text x=\"%d\" y=\"20\" font-size=\"12\" font-family=\"sans-serif\">deletion auc %.3f, "
                  "insertion auc %.3f</text>\n",
                  pad, deletion.auc, insertion.auc);
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" +
           std::to_string(H) + "\">\n" + axes + polyline(deletion, "#c0392b") + polyline(insertion, "#2471a3") +
           legend + "</svg>\n";
}

Json mse_records_to_json(const std::vector<MseRecord>& records) {
    Json arr = Json::array();
    for (const MseRecord& r : records)
        arr.push_back({{"patches", r.subset.members()}, {"confidence", r.confidence}, {"minimal", r.minimal}});
    return arr;
}

Json sag_to_json(const Sag& sag) {
    Json nodes = Json::array(), edges = Json::array();
    for (const SagNode& n : sag.nodes)
        nodes.push_back(
            {{"id", n.id}, {"patches", n.subset.members()}, {"confidence", n.confidence}, {"is_root", n.is_root}});
    for (const SagEdge& e : sag.edges) edges.push_back({{"from", e.from}, {"to", e.to}});
    return {{"image_id", sag.image_id},
            {"class_index", sag.class_index},
            {"grid", {{"rows", sag.grid_rows}, {"cols", sag.grid_cols}}},
            {"full_confidence", sag.full_confidence},
            {"nodes", nodes},
            {"edges", edges}};
}

Sag sag_from_json(const Json& j) {
    try {
        Sag sag;
        sag.image_id = j.at("image_id").get<std::string>();
        sag.class_index = j.at("class_index").get<int>();
        sag.grid_rows = j.at("grid").at("rows").get<int>();
        sag.grid_cols = j.at("grid").at("cols").get<int>();
        sag.full_confidence = j.at("full_confidence").get<double>();
        const int patches = sag.grid_rows * sag.grid_cols;
        if (sag.grid_rows <= 0 || sag.grid_cols <= 0 || patches > kMaxPatchCount)
            throw InputError("SAG grid is out of range");
        for (const Json& n : j.at("nodes")) {
            const auto members = n.at("patches").get<std::vector<int>>();
            sag.nodes.push_back({n.at("id").get<int>(), PatchSubset::of(patches, members),
                                 n.at("confidence").get<double>(), n.at("is_root").get<bool>()});
        }
        for (const Json& e : j.at("edges")) sag.edges.push_back({e.at("from").get<int>(), e.at("to").get<int>()});
        return sag;
    } catch (const Json::exception& e) {
        throw InputError(std::string("malformed SAG JSON: ") + e.what());
    }
}

std::string sag_to_dot(const Sag& sag) {
    std::string out = "digraph sag {\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n";
    for (const SagNode& n : sag.nodes) {
        std::string members;
        for (int m : n.subset.members()) members += (members.empty() ? "" : ",") + std::to_string(m);
        char conf[32];
        std::snprintf(conf, sizeof conf, "%.1f%%", 100.0 * n.confidence);
        out += "  n" + std::to_string(n.id) + " [label=\"{" + members + "}\\n" + conf + "\"" +
               (n.is_root ? ", style=bold" : "") + "];\n";
    }
    for (const SagEdge& e : sag.edges) out += "  n" + std::to_string(e.from) + " -> n" + std::to_string(e.to) + ";\n";
    return out + "}\n";
}

Json mse_summary_to_json(const MseSummary& s) {
    return {{"images", s.images},
            {"explainable_fraction", s.explainable_fraction},
            {"mse_count_histogram", s.mse_count_histogram},
            {"diverse_count_histogram", s.diverse_count_histogram},
            {"multiple_fraction", s.multiple_fraction},
            {"multiple_diverse_fraction", s.multiple_diverse_fraction}};
}

Json faithfulness_to_json(const FaithfulnessReport& r) {
    Json j = {{"mse", r.mse}};
    j["correlation"] = r.correlation ? Json(*r.correlation) : Json(nullptr);
    return j;
}

Image heatmap_image(const Mask& heatmap, int height, int width) {
    const Mask full = upsample(heatmap, height, width);
    return Image({height, width, 1}, full.values());
}

std::vector<std::filesystem::path> dump_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::vector<std::filesystem::path> written;
    std::string csv = "file,label,motifs\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", i);
        const auto path = dir / "images" / name;
        write_png(path, ds.images[i]);
        written.push_back(path);
        std::string boxes;
        for (const Box& b : ds.features[i])
            boxes += (boxes.empty() ? "" : ";") + std::to_string(b.y) + ":" + std::to_string(b.x) + ":" +
                     std::to_string(b.size);
        csv += std::string("images/") + name + "," + std::to_string(ds.labels[i]) + "," + boxes + "\n";
    }
    binio::write_text(dir / "labels.csv", csv);
    written.push_back(dir / "labels.csv");
    return written;
}

PatchSubset parse_patch_list(const std::string& text, int patch_count) {
    std::vector<int> idx;
    if (!text.empty())
        for (const std::string& tok : split(text, ',')) {
            int v = 0;
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
                throw InputError("malformed patch index \"" + tok + "\"");
            idx.push_back(v);
        }
    return PatchSubset::of(patch_count, idx);
}

}  // namespace sagkit
