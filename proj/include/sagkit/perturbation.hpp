#pragma once

#include "sagkit/image.hpp"

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

namespace sagkit {

/// Low-resolution blending weights in [0,1]: 1 keeps the original pixel, 0 takes the baseline.
/// The importance heatmap shown to users is the complement 1 - M.
class Mask {
public:
    Mask() = default;
    Mask(int rows, int cols, double fill);
    /// Throws InputError on size mismatch or values outside [0,1].
    Mask(int rows, int cols, std::vector<double> values);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    double at(int r, int c) const { return values_[std::size_t(r) * std::size_t(cols_) + std::size_t(c)]; }
    const std::vector<double>& values() const { return values_; }

    bool operator==(const Mask&) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
};

struct PixelRect {
    int y0, y1, x0, x1;  // half-open
};

/// rows x cols tiling of an image; the last row/column absorbs remainder pixels.
class PatchGrid {
public:
    PatchGrid(int rows, int cols, int image_height, int image_width);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int image_height() const { return height_; }
    int image_width() const { return width_; }
    int patch_count() const { return rows_ * cols_; }

    int row_start(int r) const { return r * (height_ / rows_); }
    int row_end(int r) const { return r == rows_ - 1 ? height_ : (r + 1) * (height_ / rows_); }
    int col_start(int c) const { return c * (width_ / cols_); }
    int col_end(int c) const { return c == cols_ - 1 ? width_ : (c + 1) * (width_ / cols_); }
    PixelRect rect(int patch) const;
    int patch_of(int y, int x) const;

    bool operator==(const PatchGrid&) const = default;

private:
    int rows_, cols_, height_, width_;
};

inline constexpr int kMaxPatchCount = 64;

/// A set of patch indices on a grid of at most kMaxPatchCount patches.
class PatchSubset {
public:
    PatchSubset() = default;
    explicit PatchSubset(int patch_count);
    /// Throws InputError on duplicates or out-of-range indices.
    static PatchSubset of(int patch_count, std::span<const int> indices);
    static PatchSubset full(int patch_count);

    int patch_count() const { return patch_count_; }
    std::uint64_t bits() const { return bits_; }
    bool contains(int i) const { return (bits_ >> i) & 1u; }
    int size() const;
    bool empty() const { return bits_ == 0; }
    PatchSubset with(int i) const;
    PatchSubset without(int i) const;
    bool is_subset_of(const PatchSubset& other) const { return (bits_ & ~other.bits_) == 0; }
    int overlap(const PatchSubset& other) const;
    int symmetric_difference(const PatchSubset& other) const;
    /// Members in ascending order.
    std::vector<int> members() const;

    bool operator==(const PatchSubset& other) const {
        return patch_count_ == other.patch_count_ && bits_ == other.bits_;
    }
    /// Lexicographic order of the ascending member lists.
    std::strong_ordering operator<=>(const PatchSubset& other) const;

private:
    int patch_count_ = 0;
    std::uint64_t bits_ = 0;
};

struct PatchSubsetHash {
    std::size_t operator()(const PatchSubset& s) const noexcept {
        return std::hash<std::uint64_t>{}(s.bits() * 0x9E3779B97F4A7C15ull ^ std::uint64_t(s.patch_count()));
    }
};

enum class Upsampling {
    bilinear,  // pixel-centre aligned (half-pixel offsets), edge-clamped
    patch      // piecewise constant over the PatchGrid tiling
};

/// Bilinear upsampling with pixel-centre alignment. Throws InputError if the
/// target is smaller than the mask.
Mask upsample(const Mask& mask, int target_height, int target_width);

/// Transpose of upsample(): maps a full-resolution field back onto mask cells.
std::vector<double> upsample_adjoint(std::span<const double> field, int field_height, int field_width, int rows,
                                     int cols);

/// Expands a grid-resolution mask so each cell covers its PatchGrid rectangle.
Mask patch_expand(const Mask& mask, int target_height, int target_width);

Mask upsample(const Mask& mask, int target_height, int target_width, Upsampling mode);

/// Phi(I, M) = I * M + I0 * (1 - M), with M upsampled to the image when coarser.
Image apply_mask(const Image& image, const Image& baseline, const Mask& mask, Upsampling mode = Upsampling::bilinear);

/// Binary grid mask: 1 on member patches, 0 elsewhere.
Mask subset_to_mask(const PatchSubset& subset, int grid_rows, int grid_cols);

Mask complement_mask(const Mask& mask);

/// Mean of each PatchGrid cell, per channel; result is rows x cols x channels.
std::vector<double> average_pool(const Image& image, int rows, int cols);

}  // namespace sagkit
