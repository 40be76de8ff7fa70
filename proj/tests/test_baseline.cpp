#include "helpers.hpp"

#include "sagkit/baseline.hpp"
#include "sagkit/errors.hpp"

#include <doctest.h>

using namespace sagkit;
using namespace testing;

TEST_CASE("blur of a constant image is the same constant") {
    const Image img({9, 13, 2}, 0.3);
    const Image out = gaussian_blur(img, 2.5);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("blur keeps values in range and smooths an impulse symmetrically") {
    Image img({15, 15, 1});
    img.set(7, 7, 0, 1.0);
    const Image out = gaussian_blur(img, 1.5);
    CHECK(out.at(7, 7) < 1.0);
    CHECK(out.at(7, 6) == doctest::Approx(out.at(7, 8)));
    CHECK(out.at(6, 7) == doctest::Approx(out.at(8, 7)));
    CHECK(out.at(6, 7) == doctest::Approx(out.at(7, 6)));
    double sum = 0.0;
    for (double v : out.data()) sum += v;
    // The kernel fits inside the image, so mass is conserved.
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("blur rejects a non-positive sigma") {
    CHECK_THROWS_AS(gaussian_blur(Image({4, 4, 1}), 0.0), InputError);
}

TEST_CASE("epsilon of one accepts the first blur") {
    const FunctionScorer always({8, 8, 1}, [](const Image&) { return 0.9; });
    const Baseline b = blur_baseline(random_image({8, 8, 1}, 1), 2.0, always, 1, 1.0);
    CHECK(b.sigma == 2.0);
    CHECK(b.confidence == doctest::Approx(0.9));
}

TEST_CASE("sigma doubles until the confidence drops") {
    // Confidence tracks the image's contrast, which blurring removes.
    const FunctionScorer contrast({16, 16, 1}, [](const Image& img) {
        const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
        return std::min(1.0, *hi - *lo);
    });
    Image img({16, 16, 1});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) img.set(y, x, 0, (x / 2 + y / 2) % 2 ? 1.0 : 0.0);
    const Baseline b = blur_baseline(img, 0.25, contrast, 1, 0.05);
    CHECK(b.sigma > 0.25);
    CHECK(b.confidence <= 0.05);
    CHECK(score(contrast, b.image, 1) == b.confidence);
}

TEST_CASE("an unreachable epsilon is reported, not accepted") {
    const FunctionScorer stubborn({8, 8, 1}, [](const Image&) { return 0.7; });
    CHECK_THROWS_AS(blur_baseline(random_image({8, 8, 1}, 2), 1.0, stubborn, 1, 0.05), BaselineError);
    CHECK_THROWS_AS(blur_baseline(random_image({8, 8, 1}, 2), 1.0, stubborn, 1, 0.0), InputError);
}

TEST_CASE("fixture positive gets a baseline under the default epsilon") {
    const auto& ds = fixture_data();
    const std::size_t i = first_positive(ds);
    const Baseline b = blur_baseline(ds.images[i], 64.0, fixture_model(), ds.labels[i]);
    CHECK(b.confidence <= kDefaultBaselineEpsilon);
    CHECK(score(fixture_model(), b.image, ds.labels[i]) <= 0.05);
    // Frozen: the default sigma already suffices for this image.
    const Baseline d = blur_baseline(ds.images[i], kDefaultBlurSigma, fixture_model(), ds.labels[i]);
    CHECK(d.sigma == kDefaultBlurSigma);
    CHECK(d.confidence == doctest::Approx(7.0710754419136327e-06).epsilon(1e-6));
}
