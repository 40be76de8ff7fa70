#pragma once

#include "sagkit/image.hpp"

#include <vector>

namespace sagkit {

enum class Capability { forward_only, gradient_capable };

/// A classifier evaluated as a black box. Implementations must be pure and
/// safe to call concurrently on the same instance.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual Shape input_shape() const = 0;
    virtual int class_count() const = 0;
    virtual Capability capability() const { return Capability::forward_only; }

    /// Class probability vector for an image of shape input_shape().
    virtual std::vector<double> probabilities(const Image& image) const = 0;

    /// d p_c / d image, laid out like Image::data(). Only for gradient-capable scorers.
    virtual std::vector<double> probability_gradient(const Image& image, int class_index) const;
};

/// f_c(image) with input validation.
double score(const Scorer& scorer, const Image& image, int class_index);

/// d f_c / d image with input validation; throws CapabilityError for forward-only scorers.
std::vector<double> input_gradient(const Scorer& scorer, const Image& image, int class_index);

void check_scorer_input(const Scorer& scorer, const Image& image, int class_index);

/// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace sagkit
