#pragma once

#include "sagkit/dataset.hpp"
#include "sagkit/scorer.hpp"
#include "sagkit/toy_cnn.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

namespace testing {

using namespace sagkit;

inline std::filesystem::path fixture_dir() { return SAGKIT_FIXTURE_DIR; }

inline const ToyCnn& fixture_model() {
    static const ToyCnn model = ToyCnn::load(fixture_dir() / "model.sfm");
    return model;
}

inline const SyntheticDataset& fixture_data() {
    static const SyntheticDataset ds = [] {
        SyntheticConfig sc;
        sc.count = 40;
        sc.seed = 1234;
        return generate_synthetic(sc);
    }();
    return ds;
}

inline std::size_t first_positive(const SyntheticDataset& ds, std::size_t from = 0) {
    for (std::size_t i = from; i < ds.size(); ++i)
        if (ds.labels[i] != 0) return i;
    return ds.size();
}

inline Image random_image(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(shape.size());
    for (double& x : v) x = u(rng);
    return Image(shape, std::move(v));
}

/// p_1 = w . x (weights small enough to stay in [0,1]), p_0 = 1 - p_1.
class LinearScorer final : public Scorer {
public:
    LinearScorer(Shape shape, std::vector<double> w) : shape_(shape), w_(std::move(w)) {}
    Shape input_shape() const override { return shape_; }
    int class_count() const override { return 2; }
    Capability capability() const override { return Capability::gradient_capable; }
    std::vector<double> probabilities(const Image& image) const override {
        double f = 0.0;
        for (std::size_t i = 0; i < w_.size(); ++i) f += w_[i] * image.data()[i];
        return {1.0 - f, f};
    }
    std::vector<double> probability_gradient(const Image&, int class_index) const override {
        std::vector<double> g = w_;
        if (class_index == 0)
            for (double& x : g) x = -x;
        return g;
    }
    const std::vector<double>& weights() const { return w_; }

private:
    Shape shape_;
    std::vector<double> w_;
};

inline LinearScorer random_linear_scorer(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> w(shape.size());
    double sum = 0.0;
    for (double& x : w) sum += (x = u(rng));
    for (double& x : w) x /= sum;
    return LinearScorer(shape, std::move(w));
}

/// Forward-only scorer driven by a function of the image.
class FunctionScorer final : public Scorer {
public:
    FunctionScorer(Shape shape, std::function<double(const Image&)> f) : shape_(shape), f_(std::move(f)) {}
    Shape input_shape() const override { return shape_; }
    int class_count() const override { return 2; }
    std::vector<double> probabilities(const Image& image) const override {
        const double p = f_(image);
        return {1.0 - p, p};
    }

private:
    Shape shape_;
    std::function<double(const Image&)> f_;
};

inline double rel_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testing
