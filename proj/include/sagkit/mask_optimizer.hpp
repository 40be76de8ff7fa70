#pragma once

#include "sagkit/baseline.hpp"
#include "sagkit/image.hpp"
#include "sagkit/metrics.hpp"
#include "sagkit/perturbation.hpp"
#include "sagkit/scorer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sagkit {

enum class Method {
    mask2018,  // plain projected gradient on f_c + L1 + TV
    igos,      // integrated-gradient direction, deletion objective only
    igospp     // igos + insertion objective + bilateral TV
};

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct OptimizerConfig {
    int resolution = 7;         // mask is resolution x resolution
    double lambda_l1 = 0.03;    // weight on ||1 - M||_1 (raw sum over mask cells)
    double lambda_tv = 0.05;    // weight on the (bilateral) TV term
    double tv_beta = 2.0;       // exponent beta >= 1
    double btv_sigma = 0.1;     // image-edge scale in exp(-|grad I|^2 / sigma^2)
    bool bilateral = true;      // false: plain TV, every edge weighted 1
    bool btv_full_resolution = false;  // evaluate BTV on the upsampled mask against the full image
    double lambda_ins = 1.0;    // insertion-term weight; 0 recovers I-GOS
    int ig_steps = 20;          // number of blend weights w_s = s / S
    double noise_sigma = 0.01;  // std of the Gaussian noise added to each blend
    int max_iterations = 20;
    double initial_step = 1.0;  // largest per-cell change of the first trial step
    double shrink = 0.5;
    int max_halvings = 6;
    double armijo_c = 1e-4;
    double init_value = 1.0;    // initial mask value
    int curve_steps = kDefaultCurveSteps;
    double blur_sigma = kDefaultBlurSigma;
    double baseline_epsilon = kDefaultBaselineEpsilon;
    std::uint64_t seed = 0;

    /// Defaults for a method at the given mask resolution. The L1 weight is
    /// normalised by mask area (0.03 per cell at 7x7).
    static OptimizerConfig defaults(Method method, int resolution = 7);
    /// Throws InputError for negative weights, beta < 1, non-positive sigma, etc.
    void validate() const;
};

struct RegularizerValue {
    double value = 0.0;
    std::vector<double> gradient;  // rows x cols
};

/// lambda_l1 * ||1 - M||_1 + lambda_tv * BTV(M) and its exact gradient. `pooled`
/// is the image average-pooled to mask resolution (rows x cols x channels).
/// Forward differences; cells on the last row/column have no forward neighbour.
RegularizerValue regularizer(const Mask& mask, std::span<const double> pooled, int channels,
                             const OptimizerConfig& config);

/// Mean over s = 1..S of d/dM f_c(Phi(J_s, M)) with J_s = w_s I + (1 - w_s) I0 + eps_s.
std::vector<double> integrated_descent_direction(const Scorer& scorer, const Image& image, const Image& baseline,
                                                 const Mask& mask, int class_index, const OptimizerConfig& config,
                                                 std::uint64_t noise_seed);

/// Integrated direction for the insertion term 1 - f_c(Phi(I, 1 - M)), walking the
/// reverse blend K_s = w_s I0 + (1 - w_s) I + eps_s in place of I0.
std::vector<double> integrated_insertion_direction(const Scorer& scorer, const Image& image, const Image& baseline,
                                                   const Mask& mask, int class_index, const OptimizerConfig& config,
                                                   std::uint64_t noise_seed);

struct LossTerms {
    double deletion = 0.0;   // f_c(Phi(I, M))
    double insertion = 0.0;  // lambda_ins * (1 - f_c(Phi(I, 1 - M)))
    double regularizer = 0.0;
    double total = 0.0;
};

LossTerms total_loss_terms(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask,
                           int class_index, const OptimizerConfig& config);

double total_loss(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask, int class_index,
                  const OptimizerConfig& config);

struct HeatmapResult {
    Mask mask;     // final M at mask resolution
    Mask heatmap;  // 1 - M at mask resolution
    std::vector<double> loss_trace;  // total loss after each iteration
    int accepted_steps = 0;
    Curve deletion;
    Curve insertion;
    OptimizerConfig config;
    Method method = Method::igospp;
    double baseline_sigma = 0.0;
    double baseline_confidence = 0.0;
    double wall_time_seconds = 0.0;
};

/// One projected Armijo step from `mask` along `direction`; returns false when
/// no trial step satisfies the sufficient-decrease test.
struct StepOutcome {
    bool accepted = false;
    Mask mask;
    double loss = 0.0;
};
StepOutcome projected_line_search(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask,
                                  double current_loss, std::span<const double> direction, int class_index,
                                  const OptimizerConfig& config);

/// Builds the blurred baseline, then iterates integrated-gradient directions with
/// projected backtracking until max_iterations or two consecutive failed line searches.
HeatmapResult optimize(const Scorer& scorer, const Image& image, int class_index, const OptimizerConfig& config,
                       Method method = Method::igospp);

/// Same, with a caller-supplied baseline (which must already satisfy the epsilon check).
HeatmapResult optimize_with_baseline(const Scorer& scorer, const Image& image, const Baseline& baseline,
                                     int class_index, const OptimizerConfig& config, Method method = Method::igospp);

}  // namespace sagkit
