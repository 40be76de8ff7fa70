#include "sagkit/scorer.hpp"

#include "sagkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sagkit {

std::vector<double> Scorer::probability_gradient(const Image&, int) const {
    throw CapabilityError("scorer does not provide input gradients");
}

void check_scorer_input(const Scorer& scorer, const Image& image, int class_index) {
    const Shape expected = scorer.input_shape();
    if (image.shape() != expected)
        throw InputError("image shape " + std::to_string(image.height()) + "x" + std::to_string(image.width()) + "x" +
                         std::to_string(image.channels()) + " does not match scorer input " +
                         std::to_string(expected.height) + "x" + std::to_string(expected.width) + "x" +
                         std::to_string(expected.channels));
    if (class_index < 0 || class_index >= scorer.class_count())
        throw InputError("class index " + std::to_string(class_index) + " out of range");
    for (double v : image.data())
        if (!std::isfinite(v)) throw InputError("image contains a non-finite pixel");
}

double score(const Scorer& scorer, const Image& image, int class_index) {
    check_scorer_input(scorer, image, class_index);
    return scorer.probabilities(image)[std::size_t(class_index)];
}

std::vector<double> input_gradient(const Scorer& scorer, const Image& image, int class_index) {
    if (scorer.capability() != Capability::gradient_capable)
        throw CapabilityError("scorer does not provide input gradients");
    check_scorer_input(scorer, image, class_index);
    return scorer.probability_gradient(image, class_index);
}

std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

}  // namespace sagkit
