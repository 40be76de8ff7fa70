#include "sagkit/sag.hpp"

#include "sagkit/errors.hpp"
#include "sagkit/parallel.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <mutex>
#include <set>

namespace sagkit {

void SearchConfig::validate() const {
    if (grid_rows <= 0 || grid_cols <= 0) throw InputError("grid dimensions must be positive");
    if (patch_count() > kMaxPatchCount)
        throw CapacityError("grid has " + std::to_string(patch_count()) + " patches; at most " +
                            std::to_string(kMaxPatchCount) + " are supported");
    if (beam_width < 1) throw InputError("beam_width must be >= 1");
    if (max_subset_size < 1 || max_subset_size > patch_count())
        throw InputError("max_subset_size must be in [1, patch_count]");
    if (!(threshold_ratio > 0.0 && threshold_ratio <= 1.0)) throw InputError("threshold ratio must be in (0,1]");
    if (diversity_overlap < 0) throw InputError("diversity_overlap must be >= 0");
    if (max_roots < 1) throw InputError("max_roots must be >= 1");
}

SubsetScorer::SubsetScorer(const Scorer& scorer, Image image, Image baseline, int class_index, int grid_rows,
                           int grid_cols, bool use_cache)
    : scorer_(&scorer),
      image_(std::move(image)),
      baseline_(std::move(baseline)),
      class_index_(class_index),
      rows_(grid_rows),
      cols_(grid_cols),
      use_cache_(use_cache) {
    check_scorer_input(scorer, image_, class_index);
    if (baseline_.shape() != image_.shape()) throw InputError("baseline shape differs from the image");
    if (rows_ * cols_ > kMaxPatchCount) throw CapacityError("too many patches for a subset search");
    PatchGrid(rows_, cols_, image_.height(), image_.width());  // validates the tiling
}

double SubsetScorer::evaluate(const PatchSubset& subset) const {
    const Mask m = subset_to_mask(subset, rows_, cols_);
    return score(*scorer_, apply_mask(image_, baseline_, m, Upsampling::patch), class_index_);
}

double SubsetScorer::confidence_of(const PatchSubset& subset) const {
    if (subset.patch_count() != patch_count()) throw InputError("subset does not belong to this grid");
    if (use_cache_) {
        std::shared_lock lock(mutex_);
        if (auto it = cache_.find(subset.bits()); it != cache_.end()) return it->second;
    }
    const double value = evaluate(subset);
    std::unique_lock lock(mutex_);
    ++evaluations_;
    if (use_cache_) cache_.emplace(subset.bits(), value);
    return value;
}

double SubsetScorer::full_confidence() const { return confidence_of(PatchSubset::full(patch_count())); }

std::size_t SubsetScorer::evaluations() const {
    std::shared_lock lock(mutex_);
    return evaluations_;
}

double confidence_of(const Scorer& scorer, const Image& image, const Image& baseline, const PatchSubset& subset,
                     int class_index, int grid_rows, int grid_cols) {
    return SubsetScorer(scorer, image, baseline, class_index, grid_rows, grid_cols, false).confidence_of(subset);
}

namespace {

void check_grid(const SubsetScorer& scorer, const SearchConfig& config) {
    config.validate();
    if (config.grid_rows != scorer.grid_rows() || config.grid_cols != scorer.grid_cols())
        throw InputError("search grid differs from the scorer's grid");
}

bool record_order(const MseRecord& a, const MseRecord& b) {
    if (a.subset.size() != b.subset.size()) return a.subset.size() < b.subset.size();
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.subset < b.subset;
}

std::vector<double> score_all(const SubsetScorer& scorer, const std::vector<PatchSubset>& subsets) {
    std::vector<double> out(subsets.size());
    parallel_for(subsets.size(), [&](std::size_t i) { out[i] = scorer.confidence_of(subsets[i]); });
    return out;
}

}  // namespace

std::vector<MseRecord> beam_search_mse(const SubsetScorer& scorer, const SearchConfig& config) {
    check_grid(scorer, config);
    const int n = scorer.patch_count();
    const double threshold = config.threshold_ratio * scorer.full_confidence();

    const PatchSubset empty(n);
    if (const double c0 = scorer.confidence_of(empty); c0 >= threshold) return {{empty, c0, true}};

    std::vector<PatchSubset> recorded;
    std::vector<MseRecord> found;
    std::vector<PatchSubset> beam{empty};

    for (int size = 1; size <= config.max_subset_size && !beam.empty(); ++size) {
        std::set<PatchSubset> unique;
        for (const PatchSubset& b : beam)
            for (int i = 0; i < n; ++i) {
                if (b.contains(i)) continue;
                const PatchSubset cand = b.with(i);
                const bool pruned = std::any_of(recorded.begin(), recorded.end(),
                                                [&](const PatchSubset& r) { return r.is_subset_of(cand); });
                if (!pruned) unique.insert(cand);
            }
        std::vector<PatchSubset> candidates(unique.begin(), unique.end());
        const std::vector<double> conf = score_all(scorer, candidates);

        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        // `candidates` is already in subset order, so a stable sort keeps ties lexicographic.
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });

        std::vector<PatchSubset> next;
        for (std::size_t k : order) {
            const PatchSubset& cand = candidates[k];
            if (conf[k] >= threshold) {
                recorded.push_back(cand);
                bool minimal = true;
                for (int i : cand.members())
                    if (scorer.confidence_of(cand.without(i)) >= threshold) {
                        minimal = false;
                        break;
                    }
                if (minimal) found.push_back({cand, conf[k], true});
            } else if (int(next.size()) < config.beam_width) {
                next.push_back(cand);
            }
        }
        beam = std::move(next);
    }
    std::sort(found.begin(), found.end(), record_order);
    return found;
}

std::vector<MseRecord> exhaustive_mse(const SubsetScorer& scorer, const SearchConfig& config) {
    check_grid(scorer, config);
    const int n = scorer.patch_count();
    if (n > kMaxExhaustivePatches)
        throw CapacityError("exhaustive search supports at most " + std::to_string(kMaxExhaustivePatches) +
                            " patches, grid has " + std::to_string(n));
    const double threshold = config.threshold_ratio * scorer.full_confidence();
    const std::uint64_t total = std::uint64_t(1) << n;

    std::vector<PatchSubset> subsets;
    for (std::uint64_t bits = 0; bits < total; ++bits)
        if (std::popcount(bits) <= config.max_subset_size) {
            std::vector<int> idx;
            for (std::uint64_t b = bits; b; b &= b - 1) idx.push_back(std::countr_zero(b));
            subsets.push_back(PatchSubset::of(n, idx));
        }
    const std::vector<double> conf = score_all(scorer, subsets);

    // dominated[m]: m or one of its subsets qualifies. Subsets have smaller bit patterns,
    // so a single ascending pass sees them first.
    std::vector<char> dominated(total, 0);
    std::vector<MseRecord> found;
    for (std::size_t k = 0; k < subsets.size(); ++k) {
        const PatchSubset& s = subsets[k];
        bool below = false;
        for (int i : s.members())
            if (dominated[s.without(i).bits()]) {
                below = true;
                break;
            }
        const bool qualifies = conf[k] >= threshold;
        dominated[s.bits()] = below || qualifies;
        if (qualifies && !below) found.push_back({s, conf[k], true});
    }
    std::sort(found.begin(), found.end(), record_order);
    return found;
}

std::vector<MseRecord> diverse_roots(const std::vector<MseRecord>& mses, int overlap_bound, int max_roots) {
    if (overlap_bound < 0) throw InputError("overlap bound must be >= 0");
    std::vector<MseRecord> kept;
    for (const MseRecord& m : mses) {
        if (int(kept.size()) >= max_roots) break;
        const bool ok = std::all_of(kept.begin(), kept.end(),
                                    [&](const MseRecord& k) { return k.subset.overlap(m.subset) <= overlap_bound; });
        if (ok) kept.push_back(m);
    }
    return kept;
}

const SagNode* Sag::find(const PatchSubset& subset) const {
    for (const SagNode& n : nodes)
        if (n.subset == subset) return &n;
    return nullptr;
}

Sag build_sag(const SubsetScorer& scorer, const std::vector<MseRecord>& roots, const std::string& image_id) {
    Sag sag;
    sag.image_id = image_id;
    sag.class_index = scorer.class_index();
    sag.grid_rows = scorer.grid_rows();
    sag.grid_cols = scorer.grid_cols();
    sag.full_confidence = scorer.full_confidence();

    std::map<std::uint64_t, int> ids;
    std::set<std::pair<int, int>> edge_set;
    auto node_for = [&](const PatchSubset& s) {
        auto [it, inserted] = ids.emplace(s.bits(), int(sag.nodes.size()));
        if (inserted) sag.nodes.push_back({it->second, s, 0.0, false});
        return it->second;
    };
    auto link = [&](int from, int to) {
        if (edge_set.insert({from, to}).second) sag.edges.push_back({from, to});
    };

    std::vector<int> level;
    for (const MseRecord& r : roots) {
        if (r.subset.patch_count() != scorer.patch_count()) throw InputError("root does not belong to this grid");
        const int id = node_for(r.subset);
        sag.nodes[std::size_t(id)].is_root = true;
        level.push_back(id);
    }
    for (int depth = 0; depth < 2; ++depth) {
        std::vector<int> next;
        for (int parent : level) {
            const PatchSubset s = sag.nodes[std::size_t(parent)].subset;
            for (int i : s.members()) {
                const std::size_t before = sag.nodes.size();
                const int child = node_for(s.without(i));
                if (sag.nodes.size() > before) next.push_back(child);
                link(parent, child);
            }
        }
        level = std::move(next);
    }

    parallel_for(sag.nodes.size(),
                 [&](std::size_t i) { sag.nodes[i].confidence = scorer.confidence_of(sag.nodes[i].subset); });
    return sag;
}

void check_sag(const Sag& sag, int overlap_bound) {
    const std::size_t n = sag.nodes.size();
    for (std::size_t i = 0; i < n; ++i)
        if (sag.nodes[i].id != int(i)) throw InputError("SAG node ids must equal their positions");
    std::vector<std::vector<int>> children(n);
    for (const SagEdge& e : sag.edges) {
        if (e.from < 0 || e.to < 0 || std::size_t(e.from) >= n || std::size_t(e.to) >= n)
            throw InputError("SAG edge references a missing node");
        const PatchSubset& p = sag.nodes[std::size_t(e.from)].subset;
        const PatchSubset& c = sag.nodes[std::size_t(e.to)].subset;
        if (!c.is_subset_of(p) || p.size() != c.size() + 1)
            throw InputError("SAG edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                             " does not remove exactly one patch");
        children[std::size_t(e.from)].push_back(e.to);
    }
    std::vector<int> depth(n, -1);
    std::vector<int> frontier;
    std::vector<const SagNode*> root_nodes;
    for (const SagNode& node : sag.nodes)
        if (node.is_root) {
            depth[std::size_t(node.id)] = 0;
            frontier.push_back(node.id);
            root_nodes.push_back(&node);
        }
    while (!frontier.empty()) {
        std::vector<int> next;
        for (int u : frontier)
            for (int v : children[std::size_t(u)])
                if (depth[std::size_t(v)] < 0) {
                    depth[std::size_t(v)] = depth[std::size_t(u)] + 1;
                    next.push_back(v);
                }
        frontier = std::move(next);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (depth[i] < 0) throw InputError("SAG node " + std::to_string(i) + " is unreachable from the roots");
        if (depth[i] > 2) throw InputError("SAG node " + std::to_string(i) + " is deeper than 2");
    }
    for (std::size_t a = 0; a < root_nodes.size(); ++a)
        for (std::size_t b = a + 1; b < root_nodes.size(); ++b)
            if (root_nodes[a]->subset.overlap(root_nodes[b]->subset) > overlap_bound)
                throw InputError("SAG roots overlap by more than the diversity bound");
}

MseSummary mse_statistics(const std::vector<ImageMseResult>& corpus, int max_subset_size) {
    if (corpus.empty()) throw InputError("MSE statistics need at least one image");
    if (max_subset_size < 0) throw InputError("max_subset_size must be >= 0");
    MseSummary s;
    s.images = corpus.size();
    std::vector<std::size_t> explained(std::size_t(max_subset_size) + 1, 0);
    std::size_t multiple = 0, multiple_diverse = 0;
    for (const ImageMseResult& r : corpus) {
        int smallest = -1;
        for (const MseRecord& m : r.mses)
            if (smallest < 0 || m.subset.size() < smallest) smallest = m.subset.size();
        if (smallest >= 0)
            for (int k = smallest; k <= max_subset_size; ++k) ++explained[std::size_t(k)];
        const std::size_t nm = r.mses.size(), nd = r.diverse.size();
        if (s.mse_count_histogram.size() <= nm) s.mse_count_histogram.resize(nm + 1, 0);
        if (s.diverse_count_histogram.size() <= nd) s.diverse_count_histogram.resize(nd + 1, 0);
        ++s.mse_count_histogram[nm];
        ++s.diverse_count_histogram[nd];
        if (nm >= 2) ++multiple;
        if (nd >= 2) ++multiple_diverse;
    }
    for (std::size_t e : explained) s.explainable_fraction.push_back(double(e) / double(s.images));
    s.multiple_fraction = double(multiple) / double(s.images);
    s.multiple_diverse_fraction = double(multiple_diverse) / double(s.images);
    return s;
}

std::vector<std::pair<int, int>> nearest_nodes(const Sag& sag, const PatchSubset& query) {
    std::vector<std::pair<int, int>> out;
    for (const SagNode& n : sag.nodes) {
        if (n.subset.patch_count() != query.patch_count()) throw InputError("query does not belong to the SAG grid");
        out.emplace_back(n.id, n.subset.symmetric_difference(query));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    return out;
}

}  // namespace sagkit
