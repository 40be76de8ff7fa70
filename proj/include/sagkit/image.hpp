#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sagkit {

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const { return std::size_t(height) * std::size_t(width) * std::size_t(channels); }
    std::size_t pixels() const { return std::size_t(height) * std::size_t(width); }
    bool operator==(const Shape&) const = default;
};

/// Dense H x W x C image with values in [0,1], stored row-major with interleaved channels.
class Image {
public:
    Image() = default;
    explicit Image(Shape shape, double fill = 0.0);
    /// Throws InputError if the data length mismatches or a value is non-finite / outside [0,1].
    Image(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int y, int x, int c) const {
        return (std::size_t(y) * std::size_t(shape_.width) + std::size_t(x)) * std::size_t(shape_.channels) +
               std::size_t(c);
    }
    double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }
    /// Writes are clamped to [0,1].
    void set(int y, int x, int c, double v);

    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool operator==(const Image&) const = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

/// Validates shape positivity and that every value is finite and inside [0,1].
void validate_image(const Shape& shape, std::span<const double> data);

/// Builds an image from arbitrary reals, clamping each value into [0,1].
Image clamped_image(Shape shape, std::span<const double> values);

}  // namespace sagkit
