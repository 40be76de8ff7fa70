#include "sagkit/dataset.hpp"

#include "sagkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sagkit {
namespace {

constexpr int kMotifCount = 4;

bool motif_pixel(int motif, int size, int y, int x) {
    const int mid = size / 2;
    switch (motif) {
        case 0: return y == mid || x == mid;                                 // plus
        case 1: return y == 0 || x == 0 || y == size - 1 || x == size - 1;  // ring
        case 2: return y == x || y == size - 1 - x;                          // cross
        case 3: return y == 0 || x == mid;                                   // tee
        default: return false;
    }
}

bool boxes_clear(const Box& a, const Box& b, int gap) {
    return a.y + a.size + gap <= b.y || b.y + b.size + gap <= a.y || a.x + a.size + gap <= b.x ||
           b.x + b.size + gap <= a.x;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

int synthetic_motif_count() { return kMotifCount; }

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
    if (config.count <= 0) throw InputError("dataset count must be positive");
    if (config.classes < 2 || config.classes > kMotifCount + 1)
        throw InputError("synthetic dataset supports 2.." + std::to_string(kMotifCount + 1) + " classes");
    if (config.motif_size < 3 || config.motif_size % 2 == 0) throw InputError("motif size must be odd and >= 3");
    const int n = config.image_size;
    const int ms = config.motif_size;
    if (n < 2 * ms + config.min_motif_separation) throw InputError("image too small for two separated motifs");

    SyntheticDataset ds;
    ds.config = config;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    for (int idx = 0; idx < config.count; ++idx) {
        const int label = uniform_int(0, config.classes - 1);
        std::vector<double> px(std::size_t(n * n));

        // Smooth background: base level plus a gentle linear ramp.
        const double base = 0.12 + 0.18 * unit(rng);
        const double gy = (unit(rng) - 0.5) * 0.12, gx = (unit(rng) - 0.5) * 0.12;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                px[std::size_t(y * n + x)] = base + gy * (double(y) / n - 0.5) + gx * (double(x) / n - 0.5);

        std::vector<Box> motifs;
        if (label > 0) {
            while (motifs.size() < 2) {
                Box b{uniform_int(1, n - ms - 1), uniform_int(1, n - ms - 1), ms};
                if (motifs.empty() || std::max(std::abs(b.y - motifs[0].y), std::abs(b.x - motifs[0].x)) >=
                                          config.min_motif_separation)
                    motifs.push_back(b);
            }
        }

        // Class-agnostic clutter: filled 3x3 blocks that never touch a motif.
        const int clutter = uniform_int(1, 3);
        std::vector<Box> blocks;
        for (int attempt = 0; attempt < 200 && int(blocks.size()) < clutter; ++attempt) {
            Box b{uniform_int(0, n - 3), uniform_int(0, n - 3), 3};
            bool ok = std::all_of(motifs.begin(), motifs.end(), [&](const Box& m) { return boxes_clear(b, m, 1); }) &&
                      std::all_of(blocks.begin(), blocks.end(), [&](const Box& o) { return boxes_clear(b, o, 1); });
            if (ok) blocks.push_back(b);
        }
        for (const Box& b : blocks) {
            const double level = 0.3 + 0.4 * unit(rng);
            for (int y = b.y; y < b.y + 3; ++y)
                for (int x = b.x; x < b.x + 3; ++x) px[std::size_t(y * n + x)] += level;
        }

        for (const Box& m : motifs) {
            const double contrast = 0.55 + 0.2 * unit(rng);
            for (int y = 0; y < ms; ++y)
                for (int x = 0; x < ms; ++x)
                    if (motif_pixel(label - 1, ms, y, x)) px[std::size_t((m.y + y) * n + m.x + x)] += contrast;
        }

        for (double& v : px) v = quantize(v + noise(rng));
        ds.images.emplace_back(Shape{n, n, 1}, std::move(px));
        ds.labels.push_back(label);
        ds.features.push_back(std::move(motifs));
    }
    return ds;
}

}  // namespace sagkit
