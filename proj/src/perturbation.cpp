#include "sagkit/perturbation.hpp"

#include "sagkit/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace sagkit {

Mask::Mask(int rows, int cols, double fill) : rows_(rows), cols_(cols) {
    if (rows <= 0 || cols <= 0) throw InputError("mask dimensions must be positive");
    if (!(fill >= 0.0 && fill <= 1.0)) throw InputError("mask value outside [0,1]");
    values_.assign(std::size_t(rows) * std::size_t(cols), fill);
}

Mask::Mask(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (rows <= 0 || cols <= 0) throw InputError("mask dimensions must be positive");
    if (values_.size() != std::size_t(rows) * std::size_t(cols))
        throw InputError("mask has " + std::to_string(values_.size()) + " values, expected " +
                         std::to_string(rows * cols));
    for (double v : values_)
        if (!(v >= 0.0 && v <= 1.0)) throw InputError("mask value outside [0,1]");
}

PatchGrid::PatchGrid(int rows, int cols, int image_height, int image_width)
    : rows_(rows), cols_(cols), height_(image_height), width_(image_width) {
    if (rows <= 0 || cols <= 0) throw InputError("patch grid dimensions must be positive");
    if (rows > image_height || cols > image_width) throw InputError("patch grid finer than the image");
}

PixelRect PatchGrid::rect(int patch) const {
    const int r = patch / cols_, c = patch % cols_;
    return {row_start(r), row_end(r), col_start(c), col_end(c)};
}

int PatchGrid::patch_of(int y, int x) const {
    const int r = std::min(y / (height_ / rows_), rows_ - 1);
    const int c = std::min(x / (width_ / cols_), cols_ - 1);
    return r * cols_ + c;
}

PatchSubset::PatchSubset(int patch_count) : patch_count_(patch_count) {
    if (patch_count < 0 || patch_count > kMaxPatchCount)
        throw InputError("patch count must be in [0," + std::to_string(kMaxPatchCount) + "]");
}

PatchSubset PatchSubset::of(int patch_count, std::span<const int> indices) {
    PatchSubset s(patch_count);
    for (int i : indices) {
        if (i < 0 || i >= patch_count) throw InputError("patch index " + std::to_string(i) + " out of range");
        if (s.contains(i)) throw InputError("duplicate patch index " + std::to_string(i));
        s.bits_ |= std::uint64_t(1) << i;
    }
    return s;
}

PatchSubset PatchSubset::full(int patch_count) {
    PatchSubset s(patch_count);
    s.bits_ = patch_count == 64 ? ~std::uint64_t(0) : (std::uint64_t(1) << patch_count) - 1;
    return s;
}

int PatchSubset::size() const { return std::popcount(bits_); }

PatchSubset PatchSubset::with(int i) const {
    PatchSubset s = *this;
    s.bits_ |= std::uint64_t(1) << i;
    return s;
}

PatchSubset PatchSubset::without(int i) const {
    PatchSubset s = *this;
    s.bits_ &= ~(std::uint64_t(1) << i);
    return s;
}

int PatchSubset::overlap(const PatchSubset& other) const { return std::popcount(bits_ & other.bits_); }

int PatchSubset::symmetric_difference(const PatchSubset& other) const { return std::popcount(bits_ ^ other.bits_); }

std::vector<int> PatchSubset::members() const {
    std::vector<int> out;
    out.reserve(std::size_t(size()));
    for (std::uint64_t b = bits_; b; b &= b - 1) out.push_back(std::countr_zero(b));
    return out;
}

std::strong_ordering PatchSubset::operator<=>(const PatchSubset& other) const {
    if (auto c = patch_count_ <=> other.patch_count_; c != 0) return c;
    // Lexicographic on ascending members: the first differing lowest bit decides.
    const std::uint64_t diff = bits_ ^ other.bits_;
    if (diff == 0) return std::strong_ordering::equal;
    const std::uint64_t low = diff & (~diff + 1);
    const bool mine = bits_ & low;
    // The set holding the smaller differing element sorts first, unless the other
    // set has already ended (a proper prefix sorts first).
    const std::uint64_t above = ~((low << 1) - 1);
    if (mine) return (other.bits_ & above) ? std::strong_ordering::less : std::strong_ordering::greater;
    return (bits_ & above) ? std::strong_ordering::greater : std::strong_ordering::less;
}

namespace {

struct AxisWeights {
    std::vector<int> lo, hi;
    std::vector<double> t;
};

AxisWeights axis_weights(int src, int dst) {
    AxisWeights w;
    w.lo.resize(std::size_t(dst));
    w.hi.resize(std::size_t(dst));
    w.t.resize(std::size_t(dst));
    const double scale = double(src) / double(dst);
    for (int d = 0; d < dst; ++d) {
        double pos = (double(d) + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, double(src - 1));
        const int i0 = std::min(int(std::floor(pos)), src - 1);
        const int i1 = std::min(i0 + 1, src - 1);
        w.lo[std::size_t(d)] = i0;
        w.hi[std::size_t(d)] = i1;
        w.t[std::size_t(d)] = src == dst ? 0.0 : pos - double(i0);
    }
    return w;
}

void check_target(const Mask& mask, int h, int w) {
    if (h < mask.rows() || w < mask.cols()) throw InputError("upsampling target smaller than the mask");
}

}  // namespace

Mask upsample(const Mask& mask, int target_height, int target_width) {
    check_target(mask, target_height, target_width);
    if (target_height == mask.rows() && target_width == mask.cols()) return mask;
    const AxisWeights wy = axis_weights(mask.rows(), target_height);
    const AxisWeights wx = axis_weights(mask.cols(), target_width);
    std::vector<double> out(std::size_t(target_height) * std::size_t(target_width));
    for (int y = 0; y < target_height; ++y) {
        const double ty = wy.t[std::size_t(y)];
        const int y0 = wy.lo[std::size_t(y)], y1 = wy.hi[std::size_t(y)];
        for (int x = 0; x < target_width; ++x) {
            const double tx = wx.t[std::size_t(x)];
            const int x0 = wx.lo[std::size_t(x)], x1 = wx.hi[std::size_t(x)];
            const double top = (1.0 - tx) * mask.at(y0, x0) + tx * mask.at(y0, x1);
            const double bottom = (1.0 - tx) * mask.at(y1, x0) + tx * mask.at(y1, x1);
            // Convex combination; clamp only guards the last ulp.
            out[std::size_t(y * target_width + x)] = std::clamp((1.0 - ty) * top + ty * bottom, 0.0, 1.0);
        }
    }
    return Mask(target_height, target_width, std::move(out));
}

std::vector<double> upsample_adjoint(std::span<const double> field, int field_height, int field_width, int rows,
                                     int cols) {
    if (field.size() != std::size_t(field_height) * std::size_t(field_width))
        throw InputError("field size does not match its dimensions");
    if (field_height < rows || field_width < cols) throw InputError("field smaller than the mask");
    if (field_height == rows && field_width == cols) return {field.begin(), field.end()};
    const AxisWeights wy = axis_weights(rows, field_height);
    const AxisWeights wx = axis_weights(cols, field_width);
    std::vector<double> out(std::size_t(rows) * std::size_t(cols), 0.0);
    for (int y = 0; y < field_height; ++y) {
        const double ty = wy.t[std::size_t(y)];
        const int y0 = wy.lo[std::size_t(y)], y1 = wy.hi[std::size_t(y)];
        for (int x = 0; x < field_width; ++x) {
            const double g = field[std::size_t(y * field_width + x)];
            const double tx = wx.t[std::size_t(x)];
            const int x0 = wx.lo[std::size_t(x)], x1 = wx.hi[std::size_t(x)];
            out[std::size_t(y0 * cols + x0)] += g * (1.0 - ty) * (1.0 - tx);
            out[std::size_t(y0 * cols + x1)] += g * (1.0 - ty) * tx;
            out[std::size_t(y1 * cols + x0)] += g * ty * (1.0 - tx);
            out[std::size_t(y1 * cols + x1)] += g * ty * tx;
        }
    }
    return out;
}

Mask patch_expand(const Mask& mask, int target_height, int target_width) {
    check_target(mask, target_height, target_width);
    const PatchGrid grid(mask.rows(), mask.cols(), target_height, target_width);
    std::vector<double> out(std::size_t(target_height) * std::size_t(target_width));
    for (int y = 0; y < target_height; ++y)
        for (int x = 0; x < target_width; ++x) {
            const int p = grid.patch_of(y, x);
            out[std::size_t(y * target_width + x)] = mask.values()[std::size_t(p)];
        }
    return Mask(target_height, target_width, std::move(out));
}

Mask upsample(const Mask& mask, int target_height, int target_width, Upsampling mode) {
    return mode == Upsampling::patch ? patch_expand(mask, target_height, target_width)
                                     : upsample(mask, target_height, target_width);
}

Image apply_mask(const Image& image, const Image& baseline, const Mask& mask, Upsampling mode) {
    if (image.shape() != baseline.shape()) throw InputError("image and baseline shapes differ");
    const Mask full = upsample(mask, image.height(), image.width(), mode);
    const int ch = image.channels();
    std::vector<double> out(image.size());
    const auto& m = full.values();
    const auto a = image.data();
    const auto b = baseline.data();
    for (std::size_t p = 0; p < m.size(); ++p) {
        const double keep = m[p];
        for (int c = 0; c < ch; ++c) {
            const std::size_t i = p * std::size_t(ch) + std::size_t(c);
            // Exact endpoints: M=1 gives I and M=0 gives I0 bit for bit.
            out[i] = keep == 1.0 ? a[i] : keep == 0.0 ? b[i] : a[i] * keep + b[i] * (1.0 - keep);
        }
    }
    return clamped_image(image.shape(), out);
}

Mask subset_to_mask(const PatchSubset& subset, int grid_rows, int grid_cols) {
    if (grid_rows * grid_cols != subset.patch_count()) throw InputError("subset does not belong to this grid");
    std::vector<double> v(std::size_t(grid_rows) * std::size_t(grid_cols), 0.0);
    for (int i : subset.members()) v[std::size_t(i)] = 1.0;
    return Mask(grid_rows, grid_cols, std::move(v));
}

Mask complement_mask(const Mask& mask) {
    std::vector<double> v = mask.values();
    for (double& x : v) x = 1.0 - x;
    return Mask(mask.rows(), mask.cols(), std::move(v));
}

std::vector<double> average_pool(const Image& image, int rows, int cols) {
    const PatchGrid grid(rows, cols, image.height(), image.width());
    const int ch = image.channels();
    std::vector<double> out(std::size_t(rows * cols * ch), 0.0);
    for (int p = 0; p < grid.patch_count(); ++p) {
        const PixelRect r = grid.rect(p);
        const double area = double((r.y1 - r.y0) * (r.x1 - r.x0));
        for (int c = 0; c < ch; ++c) {
            double s = 0.0;
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) s += image.at(y, x, c);
            out[std::size_t(p * ch + c)] = s / area;
        }
    }
    return out;
}

}  // namespace sagkit
