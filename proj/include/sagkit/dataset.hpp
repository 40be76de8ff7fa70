#pragma once

#include "sagkit/image.hpp"

#include <cstdint>
#include <vector>

namespace sagkit {

/// Axis-aligned square region in pixel coordinates.
struct Box {
    int y = 0;
    int x = 0;
    int size = 0;

    bool operator==(const Box&) const = default;
};

struct SyntheticConfig {
    int count = 1500;
    int classes = 3;  // class 0 carries no evidence; classes 1.. each own a motif
    int image_size = 32;
    int motif_size = 5;
    int min_motif_separation = 12;  // Chebyshev distance between the two motif corners
    std::uint64_t seed = 7;
};

/// Grayscale images where every positive image holds two spatially disjoint
/// copies of its class motif, each sufficient for the class on its own.
/// Pixel values are multiples of 1/255 so PNG round trips are exact.
struct SyntheticDataset {
    SyntheticConfig config;
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<std::vector<Box>> features;  // planted motif boxes per image (empty for class 0)

    std::size_t size() const { return images.size(); }
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

/// Number of distinct motifs available, i.e. the largest supported class count minus one.
int synthetic_motif_count();

}  // namespace sagkit
