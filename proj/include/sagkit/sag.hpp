#pragma once

#include "sagkit/image.hpp"
#include "sagkit/perturbation.hpp"
#include "sagkit/scorer.hpp"

#include <cstdint>
#include <memory>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace sagkit {

struct SearchConfig {
    int grid_rows = 7;
    int grid_cols = 7;
    int beam_width = 50;
    int max_subset_size = 10;
    double threshold_ratio = 0.9;  // tau: an MSE keeps >= tau * full-image confidence
    int diversity_overlap = 1;
    int max_roots = 10;

    int patch_count() const { return grid_rows * grid_cols; }
    /// Throws InputError on any invariant violation.
    void validate() const;
};

/// Scores patch subsets of one (image, baseline, class) and memoises the results.
/// Thread-safe; the scorer must outlive it.
class SubsetScorer {
public:
    SubsetScorer(const Scorer& scorer, Image image, Image baseline, int class_index, int grid_rows, int grid_cols,
                 bool use_cache = true);

    /// f_c(Phi(I, subset mask)), the mask expanded patch-wise.
    double confidence_of(const PatchSubset& subset) const;
    double full_confidence() const;

    const Image& image() const { return image_; }
    const Image& baseline() const { return baseline_; }
    int class_index() const { return class_index_; }
    int grid_rows() const { return rows_; }
    int grid_cols() const { return cols_; }
    int patch_count() const { return rows_ * cols_; }
    /// Number of forward passes actually run (cache misses).
    std::size_t evaluations() const;

private:
    double evaluate(const PatchSubset& subset) const;

    const Scorer* scorer_;
    Image image_;
    Image baseline_;
    int class_index_;
    int rows_, cols_;
    bool use_cache_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<std::uint64_t, double> cache_;
    mutable std::size_t evaluations_ = 0;
};

/// Single-use helper for callers that do not keep a SubsetScorer around.
double confidence_of(const Scorer& scorer, const Image& image, const Image& baseline, const PatchSubset& subset,
                     int class_index, int grid_rows, int grid_cols);

struct MseRecord {
    PatchSubset subset;
    double confidence = 0.0;
    bool minimal = false;

    bool operator==(const MseRecord&) const = default;
};

/// Level-wise beam search. Candidates that contain an already recorded MSE are
/// dropped; qualifying candidates are kept only if every one-patch removal falls
/// below the threshold. Sorted by (size asc, confidence desc, subset asc).
std::vector<MseRecord> beam_search_mse(const SubsetScorer& scorer, const SearchConfig& config);

/// All subsets up to max_subset_size that qualify while no proper subset does.
/// Throws CapacityError above 16 patches.
std::vector<MseRecord> exhaustive_mse(const SubsetScorer& scorer, const SearchConfig& config);

inline constexpr int kMaxExhaustivePatches = 16;

/// Greedy scan over `mses` (already in ranking order), keeping an entry iff its
/// overlap with every kept entry is <= overlap_bound, up to max_roots.
std::vector<MseRecord> diverse_roots(const std::vector<MseRecord>& mses, int overlap_bound, int max_roots);

struct SagNode {
    int id = 0;
    PatchSubset subset;
    double confidence = 0.0;
    bool is_root = false;

    bool operator==(const SagNode&) const = default;
};

struct SagEdge {
    int from = 0;
    int to = 0;

    bool operator==(const SagEdge&) const = default;
};

struct Sag {
    std::string image_id;
    int class_index = 0;
    int grid_rows = 0;
    int grid_cols = 0;
    double full_confidence = 0.0;
    std::vector<SagNode> nodes;
    std::vector<SagEdge> edges;

    const SagNode* find(const PatchSubset& subset) const;
    bool operator==(const Sag&) const = default;
};

/// Roots, their one-patch removals and two-patch removals, deduplicated by subset.
/// Node ids follow discovery order: roots first, then children, then grandchildren.
Sag build_sag(const SubsetScorer& scorer, const std::vector<MseRecord>& roots, const std::string& image_id);

/// Throws InputError when an edge does not remove exactly one patch, a node is
/// deeper than 2, ids are inconsistent, or roots overlap more than `overlap_bound`.
void check_sag(const Sag& sag, int overlap_bound);

struct ImageMseResult {
    std::vector<MseRecord> mses;     // beam_search_mse output
    std::vector<MseRecord> diverse;  // diverse_roots output
};

struct MseSummary {
    std::size_t images = 0;
    // explainable_fraction[k]: fraction of images with an MSE of size <= k, k = 0..max_size
    std::vector<double> explainable_fraction;
    // histograms indexed by count per image
    std::vector<std::size_t> mse_count_histogram;
    std::vector<std::size_t> diverse_count_histogram;
    double multiple_fraction = 0.0;          // images with >= 2 MSEs
    double multiple_diverse_fraction = 0.0;  // images with >= 2 diverse MSEs
};

/// Throws InputError on an empty corpus.
MseSummary mse_statistics(const std::vector<ImageMseResult>& corpus, int max_subset_size);

/// Nodes ordered by symmetric difference to `query`, ties by id.
std::vector<std::pair<int, int>> nearest_nodes(const Sag& sag, const PatchSubset& query);

}  // namespace sagkit
