#include "sagkit/mask_optimizer.hpp"

#include "sagkit/errors.hpp"
#include "sagkit/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace sagkit {

std::string to_string(Method m) {
    switch (m) {
        case Method::mask2018: return "mask2018";
        case Method::igos: return "igos";
        case Method::igospp: return "igospp";
    }
    return "igospp";
}

Method parse_method(const std::string& name) {
    if (name == "mask2018") return Method::mask2018;
    if (name == "igos") return Method::igos;
    if (name == "igospp") return Method::igospp;
    throw InputError("unknown method \"" + name + "\" (expected igos, igospp or mask2018)");
}

OptimizerConfig OptimizerConfig::defaults(Method method, int resolution) {
    OptimizerConfig c;
    c.resolution = resolution;
    c.lambda_l1 = 0.03 * 49.0 / double(resolution * resolution);
    switch (method) {
        case Method::igospp: break;
        case Method::igos:
            c.lambda_ins = 0.0;
            c.bilateral = false;
            break;
        case Method::mask2018:
            c.lambda_ins = 0.0;
            c.bilateral = false;
            c.ig_steps = 1;
            c.noise_sigma = 0.0;
            break;
    }
    return c;
}

void OptimizerConfig::validate() const {
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (resolution <= 0) throw InputError("mask resolution must be positive");
    if (!finite_nonneg(lambda_l1) || !finite_nonneg(lambda_tv) || !finite_nonneg(lambda_ins) ||
        !finite_nonneg(noise_sigma))
        throw InputError("optimizer weights must be finite and non-negative");
    if (!(tv_beta >= 1.0) || !std::isfinite(tv_beta)) throw InputError("tv_beta must be >= 1");
    if (!(btv_sigma > 0.0)) throw InputError("btv_sigma must be positive");
    if (ig_steps <= 0 || max_iterations <= 0 || max_halvings < 0) throw InputError("iteration counts must be positive");
    if (!(initial_step > 0.0) || !(shrink > 0.0 && shrink < 1.0) || !(armijo_c >= 0.0 && armijo_c < 1.0))
        throw InputError("invalid line-search parameters");
    if (!(init_value >= 0.0 && init_value <= 1.0)) throw InputError("init_value must lie in [0,1]");
    if (curve_steps < 2) throw InputError("curve_steps must be >= 2");
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Weighted TV on a rows x cols field against an image field of the same size.
double tv_term(std::span<const double> m, int rows, int cols, std::span<const double> img, int channels,
               const OptimizerConfig& cfg, std::vector<double>* grad) {
    const double beta = cfg.tv_beta;
    const double inv_s2 = 1.0 / (cfg.btv_sigma * cfg.btv_sigma);
    auto idx = [cols](int r, int c) { return std::size_t(r * cols + c); };
    auto pow_abs = [beta](double d) { return beta == 2.0 ? d * d : std::pow(std::abs(d), beta); };
    auto dpow = [beta](double d) {
        if (beta == 2.0) return 2.0 * d;
        if (d == 0.0) return 0.0;
        return beta * std::pow(std::abs(d), beta - 1.0) * (d > 0.0 ? 1.0 : -1.0);
    };
    double total = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double weight = 1.0;
            if (cfg.bilateral) {
                double g2 = 0.0;
                for (int k = 0; k < channels; ++k) {
                    const double here = img[idx(r, c) * std::size_t(channels) + std::size_t(k)];
                    if (c + 1 < cols) {
                        const double d = img[idx(r, c + 1) * std::size_t(channels) + std::size_t(k)] - here;
                        g2 += d * d;
                    }
                    if (r + 1 < rows) {
                        const double d = img[idx(r + 1, c) * std::size_t(channels) + std::size_t(k)] - here;
                        g2 += d * d;
                    }
                }
                weight = std::exp(-g2 * inv_s2);
            }
            if (c + 1 < cols) {
                const double d = m[idx(r, c + 1)] - m[idx(r, c)];
                total += weight * pow_abs(d);
                if (grad) {
                    const double g = weight * dpow(d);
                    (*grad)[idx(r, c + 1)] += g;
                    (*grad)[idx(r, c)] -= g;
                }
            }
            if (r + 1 < rows) {
                const double d = m[idx(r + 1, c)] - m[idx(r, c)];
                total += weight * pow_abs(d);
                if (grad) {
                    const double g = weight * dpow(d);
                    (*grad)[idx(r + 1, c)] += g;
                    (*grad)[idx(r, c)] -= g;
                }
            }
        }
    return total;
}

RegularizerValue regularizer_for(const Image& image, const Mask& mask, const OptimizerConfig& cfg) {
    if (!cfg.btv_full_resolution)
        return regularizer(mask, average_pool(image, mask.rows(), mask.cols()), image.channels(), cfg);

    RegularizerValue out;
    out.gradient.assign(mask.size(), 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out.value += cfg.lambda_l1 * (1.0 - mask.values()[i]);
        out.gradient[i] -= cfg.lambda_l1;
    }
    const Mask up = upsample(mask, image.height(), image.width());
    std::vector<double> full_grad(up.size(), 0.0);
    out.value += cfg.lambda_tv *
                 tv_term(up.values(), up.rows(), up.cols(), image.data(), image.channels(), cfg, &full_grad);
    const auto back = upsample_adjoint(full_grad, up.rows(), up.cols(), mask.rows(), mask.cols());
    for (std::size_t i = 0; i < mask.size(); ++i) out.gradient[i] += cfg.lambda_tv * back[i];
    return out;
}

void check_inputs(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask,
                  int class_index) {
    check_scorer_input(scorer, image, class_index);
    if (baseline.shape() != image.shape()) throw InputError("image and baseline shapes differ");
    if (mask.rows() > image.height() || mask.cols() > image.width())
        throw InputError("mask resolution exceeds the image resolution");
}

// Shared body of the two integrated directions. `path_end` is the endpoint of the
// blend reached at w = 1 and `fixed` is the image blended in where M = 0.
std::vector<double> integrated_direction(const Scorer& scorer, const Image& path_end, const Image& path_start,
                                         const Image& fixed, const Mask& mask, int class_index,
                                         const OptimizerConfig& cfg, std::uint64_t noise_seed) {
    if (scorer.capability() != Capability::gradient_capable)
        throw CapabilityError("integrated gradients need a gradient-capable scorer");
    const int h = path_end.height(), w = path_end.width(), ch = path_end.channels();
    const int steps = cfg.ig_steps;
    std::vector<std::vector<double>> per_step(static_cast<std::size_t>(steps));

    parallel_for(std::size_t(steps), [&](std::size_t si) {
        const double ws = double(si + 1) / double(steps);
        std::vector<double> blend(path_end.size());
        std::mt19937_64 rng(mix_seed(noise_seed, si));
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
        for (std::size_t i = 0; i < blend.size(); ++i) {
            double v = ws * path_end.data()[i] + (1.0 - ws) * path_start.data()[i];
            if (cfg.noise_sigma > 0.0) v += noise(rng);
            blend[i] = std::clamp(v, 0.0, 1.0);
        }
        const Image blend_image(path_end.shape(), std::move(blend));
        const Image perturbed = apply_mask(blend_image, fixed, mask);
        const std::vector<double> g = scorer.probability_gradient(perturbed, class_index);
        // d Phi / d M_up = blend - fixed, summed over channels.
        std::vector<double> field(std::size_t(h * w), 0.0);
        for (std::size_t p = 0; p < field.size(); ++p)
            for (int c = 0; c < ch; ++c) {
                const std::size_t i = p * std::size_t(ch) + std::size_t(c);
                field[p] += g[i] * (blend_image.data()[i] - fixed.data()[i]);
            }
        per_step[si] = upsample_adjoint(field, h, w, mask.rows(), mask.cols());
    });

    std::vector<double> dir(mask.size(), 0.0);
    for (const auto& d : per_step)
        for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += d[i];
    for (double& v : dir) v /= double(steps);
    return dir;
}

}  // namespace

RegularizerValue regularizer(const Mask& mask, std::span<const double> pooled, int channels,
                             const OptimizerConfig& config) {
    if (pooled.size() != mask.size() * std::size_t(channels))
        throw InputError("pooled image does not match the mask resolution");
    RegularizerValue out;
    out.gradient.assign(mask.size(), 0.0);
    double l1 = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        l1 += 1.0 - mask.values()[i];
        out.gradient[i] = -config.lambda_l1;
    }
    std::vector<double> tv_grad(mask.size(), 0.0);
    const double tv = tv_term(mask.values(), mask.rows(), mask.cols(), pooled, channels, config, &tv_grad);
    for (std::size_t i = 0; i < mask.size(); ++i) out.gradient[i] += config.lambda_tv * tv_grad[i];
    out.value = config.lambda_l1 * l1 + config.lambda_tv * tv;
    return out;
}

std::vector<double> integrated_descent_direction(const Scorer& scorer, const Image& image, const Image& baseline,
                                                 const Mask& mask, int class_index, const OptimizerConfig& config,
                                                 std::uint64_t noise_seed) {
    check_inputs(scorer, image, baseline, mask, class_index);
    return integrated_direction(scorer, image, baseline, baseline, mask, class_index, config, noise_seed);
}

std::vector<double> integrated_insertion_direction(const Scorer& scorer, const Image& image, const Image& baseline,
                                                   const Mask& mask, int class_index, const OptimizerConfig& config,
                                                   std::uint64_t noise_seed) {
    check_inputs(scorer, image, baseline, mask, class_index);
    // Phi(I, 1 - M) = I0 * M + I * (1 - M): the baseline plays the image role.
    std::vector<double> d =
        integrated_direction(scorer, baseline, image, image, mask, class_index, config, noise_seed);
    for (double& v : d) v = -v;
    return d;
}

LossTerms total_loss_terms(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask,
                           int class_index, const OptimizerConfig& config) {
    check_inputs(scorer, image, baseline, mask, class_index);
    LossTerms t;
    t.deletion = scorer.probabilities(apply_mask(image, baseline, mask))[std::size_t(class_index)];
    if (config.lambda_ins > 0.0) {
        const double inserted =
            scorer.probabilities(apply_mask(image, baseline, complement_mask(mask)))[std::size_t(class_index)];
        t.insertion = config.lambda_ins * (1.0 - inserted);
    }
    t.regularizer = regularizer_for(image, mask, config).value;
    t.total = t.deletion + t.insertion + t.regularizer;
    return t;
}

double total_loss(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask, int class_index,
                  const OptimizerConfig& config) {
    return total_loss_terms(scorer, image, baseline, mask, class_index, config).total;
}

StepOutcome projected_line_search(const Scorer& scorer, const Image& image, const Image& baseline, const Mask& mask,
                                  double current_loss, std::span<const double> direction, int class_index,
                                  const OptimizerConfig& config) {
    double largest = 0.0;
    for (double d : direction) largest = std::max(largest, std::abs(d));
    StepOutcome out{false, mask, current_loss};
    if (largest == 0.0 || !std::isfinite(largest)) return out;

    double step = config.initial_step / largest;
    for (int attempt = 0; attempt <= config.max_halvings; ++attempt, step *= config.shrink) {
        std::vector<double> next(mask.size());
        double predicted = 0.0;
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = std::clamp(mask.values()[i] - step * direction[i], 0.0, 1.0);
            predicted += direction[i] * (mask.values()[i] - next[i]);
        }
        Mask candidate(mask.rows(), mask.cols(), std::move(next));
        const double loss = total_loss(scorer, image, baseline, candidate, class_index, config);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "non-finite loss during line search (step " << step << ", attempt " << attempt << ")";
            throw NumericError(msg.str());
        }
        if (loss <= current_loss - config.armijo_c * predicted && loss <= current_loss) {
            out.accepted = true;
            out.mask = std::move(candidate);
            out.loss = loss;
            return out;
        }
    }
    return out;
}

HeatmapResult optimize(const Scorer& scorer, const Image& image, int class_index, const OptimizerConfig& config,
                       Method method) {
    config.validate();
    const Baseline baseline = blur_baseline(image, config.blur_sigma, scorer, class_index, config.baseline_epsilon);
    return optimize_with_baseline(scorer, image, baseline, class_index, config, method);
}

HeatmapResult optimize_with_baseline(const Scorer& scorer, const Image& image, const Baseline& baseline,
                                     int class_index, const OptimizerConfig& config, Method method) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    check_scorer_input(scorer, image, class_index);
    if (config.resolution > image.height() || config.resolution > image.width())
        throw InputError("mask resolution " + std::to_string(config.resolution) + " exceeds the image size");
    if (baseline.confidence > config.baseline_epsilon) throw BaselineError("baseline fails its confidence check");

    const Image& base = baseline.image;
    Mask mask(config.resolution, config.resolution, config.init_value);
    double loss = total_loss(scorer, image, base, mask, class_index, config);
    if (!std::isfinite(loss)) throw NumericError("initial loss is not finite");

    HeatmapResult result;
    result.config = config;
    result.method = method;
    result.baseline_sigma = baseline.sigma;
    result.baseline_confidence = baseline.confidence;

    int failures = 0;
    for (int it = 0; it < config.max_iterations; ++it) {
        const std::uint64_t seed = mix_seed(config.seed, std::uint64_t(it));
        std::vector<double> dir = integrated_descent_direction(scorer, image, base, mask, class_index, config, seed);
        if (config.lambda_ins > 0.0) {
            const auto ins = integrated_insertion_direction(scorer, image, base, mask, class_index, config,
                                                            mix_seed(seed, 0xC0FFEE));
            for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += config.lambda_ins * ins[i];
        }
        const RegularizerValue reg = regularizer_for(image, mask, config);
        for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += reg.gradient[i];

        StepOutcome step = projected_line_search(scorer, image, base, mask, loss, dir, class_index, config);
        if (step.accepted) {
            mask = std::move(step.mask);
            loss = step.loss;
            ++result.accepted_steps;
            failures = 0;
        } else {
            ++failures;
        }
        result.loss_trace.push_back(loss);
        if (failures >= 2) break;
    }

    result.mask = mask;
    result.heatmap = complement_mask(mask);
    const Mask full_heatmap = upsample(result.heatmap, image.height(), image.width());
    result.deletion = deletion_curve(scorer, image, full_heatmap, class_index, config.curve_steps, base);
    result.insertion = insertion_curve(scorer, image, full_heatmap, class_index, config.curve_steps, base);
    result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace sagkit
