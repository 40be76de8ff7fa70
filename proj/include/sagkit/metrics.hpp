#pragma once

#include "sagkit/image.hpp"
#include "sagkit/perturbation.hpp"
#include "sagkit/scorer.hpp"

#include <vector>

namespace sagkit {

/// Confidence sampled at increasing fractions of perturbed pixels.
struct Curve {
    std::vector<double> fractions;    // 0 .. 1, increasing
    std::vector<double> confidences;  // f_c at each fraction
    double auc = 0.0;
};

inline constexpr int kDefaultCurveSteps = 49;

/// Trapezoidal area under the curve; throws InputError for fewer than 2 points.
double auc(const Curve& curve);

/// Pixel ranking by descending importance, ties broken by raster (row, col) order.
std::vector<int> rank_pixels(const Mask& heatmap);

/// Replaces the top ceil(k/steps * H*W) pixels with baseline pixels for k = 0..steps.
/// The heatmap holds importances (1 - M) at image resolution.
Curve deletion_curve(const Scorer& scorer, const Image& image, const Mask& heatmap, int class_index, int steps,
                     const Image& baseline);

/// Starts from the baseline and restores the top-ranked original pixels.
Curve insertion_curve(const Scorer& scorer, const Image& image, const Mask& heatmap, int class_index, int steps,
                      const Image& baseline);

/// Uniform i.i.d. heatmap at image resolution, used as the chance reference.
Mask random_heatmap(int height, int width, unsigned long long seed);

}  // namespace sagkit
