#include "sagkit/metrics.hpp"

#include "sagkit/errors.hpp"
#include "sagkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sagkit {

double auc(const Curve& curve) {
    if (curve.fractions.size() < 2 || curve.fractions.size() != curve.confidences.size())
        throw InputError("a curve needs at least 2 matching points");
    double area = 0.0;
    for (std::size_t i = 1; i < curve.fractions.size(); ++i)
        area += 0.5 * (curve.confidences[i] + curve.confidences[i - 1]) * (curve.fractions[i] - curve.fractions[i - 1]);
    return area;
}

std::vector<int> rank_pixels(const Mask& heatmap) {
    std::vector<int> order(heatmap.size());
    std::iota(order.begin(), order.end(), 0);
    const auto& v = heatmap.values();
    std::stable_sort(order.begin(), order.end(),
                     [&v](int a, int b) { return v[std::size_t(a)] > v[std::size_t(b)]; });
    return order;
}

namespace {

enum class Direction { deletion, insertion };

Curve sweep(const Scorer& scorer, const Image& image, const Mask& heatmap, int class_index, int steps,
            const Image& baseline, Direction dir) {
    if (steps < 2) throw InputError("curve needs at least 2 steps");
    if (heatmap.rows() != image.height() || heatmap.cols() != image.width())
        throw InputError("heatmap must be at image resolution; upsample first");
    if (image.shape() != baseline.shape()) throw InputError("image and baseline shapes differ");
    check_scorer_input(scorer, image, class_index);

    const std::vector<int> order = rank_pixels(heatmap);
    const std::size_t total = order.size();
    const int ch = image.channels();
    Curve curve;
    curve.fractions.resize(std::size_t(steps + 1));
    curve.confidences.resize(std::size_t(steps + 1));
    const Image& start = dir == Direction::deletion ? image : baseline;
    const Image& fill = dir == Direction::deletion ? baseline : image;

    parallel_for(std::size_t(steps + 1), [&](std::size_t k) {
        const std::size_t count = (k * total + std::size_t(steps) - 1) / std::size_t(steps);
        std::vector<double> px(start.values());
        for (std::size_t r = 0; r < std::min(count, total); ++r) {
            const std::size_t p = std::size_t(order[r]);
            for (int c = 0; c < ch; ++c) px[p * std::size_t(ch) + std::size_t(c)] = fill.data()[p * std::size_t(ch) + std::size_t(c)];
        }
        curve.fractions[k] = double(k) / double(steps);
        curve.confidences[k] = scorer.probabilities(Image(image.shape(), std::move(px)))[std::size_t(class_index)];
    });
    curve.auc = auc(curve);
    return curve;
}

}  // namespace

Curve deletion_curve(const Scorer& scorer, const Image& image, const Mask& heatmap, int class_index, int steps,
                     const Image& baseline) {
    return sweep(scorer, image, heatmap, class_index, steps, baseline, Direction::deletion);
}

Curve insertion_curve(const Scorer& scorer, const Image& image, const Mask& heatmap, int class_index, int steps,
                      const Image& baseline) {
    return sweep(scorer, image, heatmap, class_index, steps, baseline, Direction::insertion);
}

Mask random_heatmap(int height, int width, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> v(std::size_t(height) * std::size_t(width));
    for (double& x : v) x = unit(rng);
    return Mask(height, width, std::move(v));
}

}  // namespace sagkit
