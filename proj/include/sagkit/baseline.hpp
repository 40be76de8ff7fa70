#pragma once

#include "sagkit/image.hpp"
#include "sagkit/scorer.hpp"

namespace sagkit {

/// Separable Gaussian blur, kernel radius ceil(3 sigma), half-sample symmetric
/// reflection at the borders (repeated for radii larger than the image).
Image gaussian_blur(const Image& image, double sigma);

struct Baseline {
    Image image;
    double sigma = 0.0;       // sigma actually used after escalation
    double confidence = 0.0;  // f_c(image) of the returned baseline
};

inline constexpr int kMaxBlurDoublings = 8;
inline constexpr double kDefaultBlurSigma = 4.0;
inline constexpr double kDefaultBaselineEpsilon = 0.05;

/// Blurs the image, doubling sigma (at most kMaxBlurDoublings times) until the
/// class confidence drops to epsilon or below. Throws BaselineError otherwise.
Baseline blur_baseline(const Image& image, double sigma, const Scorer& scorer, int class_index,
                       double epsilon = kDefaultBaselineEpsilon);

}  // namespace sagkit
