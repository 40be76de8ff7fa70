#include "sagkit/image.hpp"

#include "sagkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sagkit {

void validate_image(const Shape& shape, std::span<const double> data) {
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
        throw InputError("image dimensions must be positive");
    if (data.size() != shape.size())
        throw InputError("image data length " + std::to_string(data.size()) + " does not match " +
                         std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
                         std::to_string(shape.channels));
    for (double v : data) {
        if (!std::isfinite(v)) throw InputError("image contains a non-finite pixel");
        if (v < 0.0 || v > 1.0) throw InputError("image pixel outside [0,1]");
    }
}

Image::Image(Shape shape, double fill) : shape_(shape), data_(shape.size(), std::clamp(fill, 0.0, 1.0)) {
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
        throw InputError("image dimensions must be positive");
}

Image::Image(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    validate_image(shape_, data_);
}

void Image::set(int y, int x, int c, double v) { data_[index(y, x, c)] = std::clamp(v, 0.0, 1.0); }

Image clamped_image(Shape shape, std::span<const double> values) {
    std::vector<double> data(values.begin(), values.end());
    for (double& v : data) {
        if (!std::isfinite(v)) throw InputError("image contains a non-finite pixel");
        v = std::clamp(v, 0.0, 1.0);
    }
    return Image(shape, std::move(data));
}

}  // namespace sagkit
