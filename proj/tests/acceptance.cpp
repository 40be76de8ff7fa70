// One PASS/FAIL line per acceptance criterion. Exit status 1 if any fails.
#include "sagkit/baseline.hpp"
#include "sagkit/binary_io.hpp"
#include "sagkit/dataset.hpp"
#include "sagkit/manifest.hpp"
#include "sagkit/mask_optimizer.hpp"
#include "sagkit/metrics.hpp"
#include "sagkit/sag.hpp"
#include "sagkit/srae.hpp"
#include "sagkit/toy_cnn.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace sagkit;

namespace {

// Tolerances and sizes, fixed here.
constexpr double kTau = 0.9;
constexpr double kOracleSeconds = 10.0;
constexpr int kMinimalityCount = 200;
constexpr int kDirectionImages = 50;
constexpr double kDirectionSeconds = 300.0;
constexpr double kSignTestAlpha = 0.05;
constexpr int kRandomHeatmapSeeds = 20;
constexpr double kCausalityFraction = 0.90;
constexpr int kGradientProbes = 120;
constexpr double kGradientRelTol = 1e-3;
constexpr double kGradientFloor = 1e-6;  // denominators below this count as absolute error
constexpr double kLinearAucTol = 1e-9;
constexpr int kMultipleImages = 20;
constexpr double kMultipleFraction = 0.30;
constexpr double kSraeMseMax = 1e-3;
constexpr double kSraeCorrMin = 0.99;
constexpr std::uint64_t kDirectionDataSeed = 1234;
constexpr std::uint64_t kCorpusDataSeed = 99;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double seconds) {
    if (!pass) ++failures;
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(1);
    line << (pass ? "PASS " : "FAIL ") << name << ": " << detail << " [" << seconds << " s]";
    std::cout << line.str() << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

// ------------------------------------------------------------ oracle equivalence

// Reads which patches of a 12x12 image are kept (value 1 vs baseline 0) and
// returns a planted confidence for that set.
class PlantedScorer final : public Scorer {
public:
    PlantedScorer(int grid, std::function<double(std::uint64_t)> g) : grid_(grid), g_(std::move(g)) {}
    Shape input_shape() const override { return {12, 12, 1}; }
    int class_count() const override { return 2; }
    std::vector<double> probabilities(const Image& image) const override {
        const double p = g_(kept(image));
        return {1.0 - p, p};
    }
    std::uint64_t kept(const Image& image) const {
        const int cell = 12 / grid_;
        std::uint64_t bits = 0;
        for (int r = 0; r < grid_; ++r)
            for (int c = 0; c < grid_; ++c) {
                double sum = 0.0;
                for (int y = r * cell; y < (r + 1) * cell; ++y)
                    for (int x = c * cell; x < (c + 1) * cell; ++x) sum += image.at(y, x, 0);
                if (sum > 0.5 * cell * cell) bits |= std::uint64_t(1) << (r * grid_ + c);
            }
        return bits;
    }
    int grid() const { return grid_; }
    double planted(std::uint64_t bits) const { return g_(bits); }

private:
    int grid_;
    std::function<double(std::uint64_t)> g_;
};

bool contains(std::uint64_t s, std::initializer_list<int> members) {
    for (int m : members)
        if (!(s >> m & 1)) return false;
    return true;
}

std::vector<PlantedScorer> planted_scorers() {
    std::vector<PlantedScorer> out;
    out.emplace_back(3, [](std::uint64_t s) { return contains(s, {0, 4}) || contains(s, {8}) ? 1.0 : 0.1; });
    {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> u(0.05, 1.0);
        std::vector<double> w(9);
        for (double& x : w) x = u(rng);
        out.emplace_back(3, [w](std::uint64_t s) {
            double num = 0.0, den = 0.0;
            for (int i = 0; i < 9; ++i) {
                den += w[std::size_t(i)];
                if (s >> i & 1) num += w[std::size_t(i)];
            }
            return num / den;
        });
    }
    out.emplace_back(4, [](std::uint64_t s) {
        return contains(s, {0, 5}) || contains(s, {3, 10, 15}) || contains(s, {7}) ? 1.0
                                                                                     : 0.3 * std::popcount(s) / 16.0;
    });
    {
        // Non-monotone: negative weights and pairwise terms.
        std::mt19937_64 rng(23);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> w(16), pair(16 * 16);
        for (double& x : w) x = n(rng);
        for (double& x : pair) x = 0.5 * n(rng);
        out.emplace_back(4, [w, pair](std::uint64_t s) {
            double a = -1.0;
            for (int i = 0; i < 16; ++i) {
                if (!(s >> i & 1)) continue;
                a += w[std::size_t(i)];
                for (int j = i + 1; j < 16; ++j)
                    if (s >> j & 1) a += pair[std::size_t(i * 16 + j)];
            }
            return 1.0 / (1.0 + std::exp(-a));
        });
    }
    out.emplace_back(4, [](std::uint64_t s) {
        const int hits = int(s >> 1 & 1) + int(s >> 6 & 1) + int(s >> 11 & 1) + int(s >> 12 & 1);
        return 0.1 + 0.9 * (hits >= 2 ? 1.0 : 0.0) * (1.0 - 0.01 * std::popcount(s));
    });
    return out;
}

// Brute-force minimal family straight from the planted function.
std::set<std::uint64_t> brute_minimal(const PlantedScorer& p) {
    const int n = p.grid() * p.grid();
    const std::uint64_t all = (std::uint64_t(1) << n) - 1;
    const double thr = kTau * p.planted(all);
    std::vector<char> q(std::size_t(all) + 1);
    for (std::uint64_t s = 0; s <= all; ++s) q[s] = p.planted(s) >= thr;
    std::set<std::uint64_t> out;
    for (std::uint64_t s = 0; s <= all; ++s) {
        if (!q[s]) continue;
        bool minimal = true;
        for (std::uint64_t t = (s - 1) & s; minimal; t = (t - 1) & s) {
            if (t != s && q[t]) minimal = false;
            if (t == 0) break;
        }
        if (s == 0) minimal = true;
        if (minimal) out.insert(s);
    }
    return out;
}

std::set<std::uint64_t> as_bits(const std::vector<MseRecord>& recs) {
    std::set<std::uint64_t> out;
    for (const auto& r : recs) {
        std::uint64_t b = 0;
        for (int m : r.subset.members()) b |= std::uint64_t(1) << m;
        out.insert(b);
    }
    return out;
}

void oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    int agree = 0, total = 0;
    std::string detail;
    for (const PlantedScorer& p : planted_scorers()) {
        const Image image({12, 12, 1}, 1.0), baseline({12, 12, 1}, 0.0);
        const SubsetScorer ss(p, image, baseline, 1, p.grid(), p.grid());
        SearchConfig cfg;
        cfg.grid_rows = cfg.grid_cols = p.grid();
        cfg.threshold_ratio = kTau;
        cfg.max_subset_size = p.grid() * p.grid();
        cfg.beam_width = p.grid() == 3 ? 126 : 12870;  // C(n, n/2): nothing is ever cut
        const auto beam = as_bits(beam_search_mse(ss, cfg));
        const auto exact = as_bits(exhaustive_mse(ss, cfg));
        const auto brute = brute_minimal(p);
        ++total;
        if (beam == exact && exact == brute) ++agree;
        detail += std::to_string(beam.size()) + (beam == exact && exact == brute ? "=" : "!=") + " ";
    }
    const double secs = seconds_since(t0);
    report("oracle-equivalence", agree == total && secs < kOracleSeconds,
           std::to_string(agree) + "/" + std::to_string(total) + " scorers equal (family sizes " + detail +
               "), limit " + fmt(kOracleSeconds) + " s",
           secs);
}

// ------------------------------------------------------------ fixture corpus

struct Positive {
    std::size_t index;
    Image image;
    int label;
    Baseline baseline;
};

std::vector<Positive> positives(const ToyCnn& model, std::uint64_t seed, int limit) {
    SyntheticConfig sc;
    sc.count = 200;
    sc.seed = seed;
    const SyntheticDataset ds = generate_synthetic(sc);
    std::vector<Positive> out;
    for (std::size_t i = 0; i < ds.size() && int(out.size()) < limit; ++i)
        if (ds.labels[i] != 0)
            out.push_back({i, ds.images[i], ds.labels[i], blur_baseline(ds.images[i], kDefaultBlurSigma, model,
                                                                      ds.labels[i])});
    return out;
}

// ------------------------------------------------------------ multiple explanations + minimality

void multiple_and_minimality(const ToyCnn& model) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto corpus = positives(model, kCorpusDataSeed, kMultipleImages);
    SearchConfig cfg;
    cfg.threshold_ratio = kTau;
    cfg.diversity_overlap = 1;
    int multiple = 0;
    std::vector<std::vector<MseRecord>> per_image;
    for (const Positive& p : corpus) {
        const SubsetScorer ss(model, p.image, p.baseline.image, p.label, 7, 7);
        auto mses = beam_search_mse(ss, cfg);
        if (diverse_roots(mses, cfg.diversity_overlap, cfg.max_roots).size() >= 2) ++multiple;
        per_image.push_back(std::move(mses));
    }
    const double frac = double(multiple) / double(corpus.size());
    const double secs = seconds_since(t0);
    report("multiple-explanations", frac >= kMultipleFraction,
           std::to_string(multiple) + "/" + std::to_string(corpus.size()) +
               " positives have >= 2 diverse MSEs at overlap 1 (need >= " + fmt(100 * kMultipleFraction) + "%)",
           secs);

    // Round-robin across images so the audit is not dominated by one image.
    const auto t1 = std::chrono::steady_clock::now();
    int audited = 0, violations = 0;
    std::set<std::size_t> images_used;
    for (std::size_t k = 0; audited < kMinimalityCount; ++k) {
        bool any = false;
        for (std::size_t i = 0; i < per_image.size() && audited < kMinimalityCount; ++i) {
            if (k >= per_image[i].size()) continue;
            any = true;
            const Positive& p = corpus[i];
            const PatchSubset& s = per_image[i][k].subset;
            auto conf = [&](const PatchSubset& x) {
                return confidence_of(model, p.image, p.baseline.image, x, p.label, 7, 7);
            };
            const double thr = kTau * conf(PatchSubset::full(49));
            bool ok = conf(s) >= thr;
            for (int m : s.members()) ok = ok && conf(s.without(m)) < thr;
            violations += !ok;
            ++audited;
            images_used.insert(i);
        }
        if (!any) break;
    }
    report("minimality-audit", audited >= kMinimalityCount && violations == 0,
           std::to_string(audited) + " MSEs from " + std::to_string(images_used.size()) + " images, " +
               std::to_string(violations) + " violations",
           seconds_since(t1));
}

// ------------------------------------------------------------ direction + causality

double sign_test_p(int wins, int losses) {
    // Two-sided exact binomial test with p = 1/2, ties dropped.
    const int n = wins + losses;
    const int k = std::max(wins, losses);
    double tail = 0.0;
    for (int i = k; i <= n; ++i)
        tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    return std::min(1.0, 2.0 * tail);
}

void direction_and_causality(const ToyCnn& model) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto fixtures = positives(model, kDirectionDataSeed, kDirectionImages);
    double sum_pp = 0.0, sum_igos = 0.0;
    int wins = 0, losses = 0, del_ok = 0, ins_ok = 0;
    std::vector<HeatmapResult> pp_results;
    for (const Positive& p : fixtures) {
        OptimizerConfig cpp = OptimizerConfig::defaults(Method::igospp);
        OptimizerConfig cig = OptimizerConfig::defaults(Method::igos);
        cpp.seed = cig.seed = p.index;
        const auto a = optimize_with_baseline(model, p.image, p.baseline, p.label, cpp, Method::igospp);
        const auto b = optimize_with_baseline(model, p.image, p.baseline, p.label, cig, Method::igos);
        sum_pp += a.insertion.auc;
        sum_igos += b.insertion.auc;
        wins += a.insertion.auc > b.insertion.auc;
        losses += a.insertion.auc < b.insertion.auc;
        pp_results.push_back(a);
    }
    const double secs = seconds_since(t0);
    const int n = int(fixtures.size());
    const double p_value = sign_test_p(wins, losses);
    report("direction-check", n == kDirectionImages && sum_pp >= sum_igos && wins > losses &&
                                  p_value < kSignTestAlpha && secs < kDirectionSeconds,
           "mean insertion AUC iGOS++ " + fmt(sum_pp / n) + " vs I-GOS " + fmt(sum_igos / n) + ", wins " +
               std::to_string(wins) + " losses " + std::to_string(losses) + ", sign test p = " + fmt(p_value),
           secs);

    const auto t1 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < fixtures.size(); ++i) {
        const Positive& p = fixtures[i];
        double rd = 0.0, ri = 0.0;
        for (int s = 0; s < kRandomHeatmapSeeds; ++s) {
            const Mask h = random_heatmap(p.image.height(), p.image.width(), 1000 * p.index + std::uint64_t(s));
            rd += deletion_curve(model, p.image, h, p.label, kDefaultCurveSteps, p.baseline.image).auc;
            ri += insertion_curve(model, p.image, h, p.label, kDefaultCurveSteps, p.baseline.image).auc;
        }
        rd /= kRandomHeatmapSeeds;
        ri /= kRandomHeatmapSeeds;
        del_ok += pp_results[i].deletion.auc <= rd;
        ins_ok += pp_results[i].insertion.auc >= ri;
    }
    const double need = kCausalityFraction * n;
    report("heatmap-causality", del_ok >= need && ins_ok >= need,
           "deletion <= random on " + std::to_string(del_ok) + "/" + std::to_string(n) + ", insertion >= random on " +
               std::to_string(ins_ok) + "/" + std::to_string(n) + " (need " + fmt(100 * kCausalityFraction) + "%)",
           seconds_since(t1));
}

// ------------------------------------------------------------ gradients

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradientFloor});
}

struct ProbeStats {
    int probes = 0;
    double worst = 0.0;
    void add(double e) {
        ++probes;
        worst = std::max(worst, e);
    }
};

void gradient_suites(const ToyCnn& model) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto fixtures = positives(model, kDirectionDataSeed, 6);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> cell(0.1, 0.9);
    const double h = 1e-6;

    ProbeStats del, ins, reg, total;
    const int per_image = kGradientProbes / int(fixtures.size()) + 1;
    for (const Positive& p : fixtures) {
        OptimizerConfig cfg = OptimizerConfig::defaults(Method::igospp);
        cfg.ig_steps = 1;  // w_1 = 1 and no noise: the direction is the exact gradient
        cfg.noise_sigma = 0.0;
        for (int k = 0; k < per_image; ++k) {
            std::vector<double> v(49);
            for (double& x : v) x = cell(rng);
            const Mask m(7, 7, v);
            const auto gd = integrated_descent_direction(model, p.image, p.baseline.image, m, p.label, cfg, 0);
            const auto gi = integrated_insertion_direction(model, p.image, p.baseline.image, m, p.label, cfg, 0);
            const auto pooled = average_pool(p.image, 7, 7);
            const auto gr = regularizer(m, pooled, p.image.channels(), cfg).gradient;
            const std::size_t j = std::size_t(rng() % 49);
            auto at = [&](double delta) {
                auto w = v;
                w[j] += delta;
                return Mask(7, 7, w);
            };
            const Mask up = at(h), dn = at(-h);
            auto f_del = [&](const Mask& x) {
                return model.probabilities(apply_mask(p.image, p.baseline.image, x))[std::size_t(p.label)];
            };
            auto f_ins = [&](const Mask& x) {
                return 1.0 - model.probabilities(
                                 apply_mask(p.image, p.baseline.image, complement_mask(x)))[std::size_t(p.label)];
            };
            auto f_reg = [&](const Mask& x) { return regularizer(x, pooled, p.image.channels(), cfg).value; };
            auto f_tot = [&](const Mask& x) { return total_loss(model, p.image, p.baseline.image, x, p.label, cfg); };
            del.add(rel_error(gd[j], (f_del(up) - f_del(dn)) / (2 * h)));
            ins.add(rel_error(gi[j], (f_ins(up) - f_ins(dn)) / (2 * h)));
            reg.add(rel_error(gr[j], (f_reg(up) - f_reg(dn)) / (2 * h)));
            total.add(rel_error(gd[j] + cfg.lambda_ins * gi[j] + gr[j], (f_tot(up) - f_tot(dn)) / (2 * h)));
        }
    }

    // SRAE loss on a random batch, every parameter blob probed.
    ProbeStats srae;
    {
        XnnBatch b;
        b.dimension = 6;
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 40; ++i) {
            for (int d = 0; d < 6; ++d) b.z.push_back(n(rng));
            b.y_hat.push_back(n(rng));
        }
        SraeHyperparameters hp;
        hp.features = 3;
        SraeModel m = SraeModel::initialized(6, hp, 5);
        std::vector<double> g;
        srae_loss_gradient(m, b, g);
        std::vector<double*> flat;
        for (auto* blob : m.blobs())
            for (double& w : *blob) flat.push_back(&w);
        const double hs = 1e-5;
        for (int k = 0; k < kGradientProbes; ++k) {
            const std::size_t j = std::size_t(rng() % flat.size());
            const double orig = *flat[j];
            *flat[j] = orig + hs;
            const double a = srae_loss(m, b).total;
            *flat[j] = orig - hs;
            const double c = srae_loss(m, b).total;
            *flat[j] = orig;
            srae.add(rel_error(g[j], (a - c) / (2 * hs)));
        }
    }

    auto ok = [](const ProbeStats& s) { return s.probes >= 100 && s.worst < kGradientRelTol; };
    auto desc = [](const char* name, const ProbeStats& s) {
        return std::string(name) + " " + std::to_string(s.probes) + " probes worst " + fmt(s.worst);
    };
    report("gradient-suites", ok(del) && ok(ins) && ok(reg) && ok(total) && ok(srae),
           desc("deletion", del) + "; " + desc("insertion", ins) + "; " + desc("regularizer", reg) + "; " +
               desc("total", total) + "; " + desc("srae", srae) + " (limit " + fmt(kGradientRelTol) + ")",
           seconds_since(t0));
}

// ------------------------------------------------------------ metric identities

void metric_identities() {
    const auto t0 = std::chrono::steady_clock::now();
    Curve flat, ramp;
    const int steps = 49;
    for (int i = 0; i <= steps; ++i) {
        const double f = double(i) / steps;
        flat.fractions.push_back(f);
        flat.confidences.push_back(1.0);
        ramp.fractions.push_back(f);
        ramp.confidences.push_back(1.0 - f);
    }
    const double a1 = auc(flat), a2 = auc(ramp);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto same = [](const Image& x, const Image& y) { return std::ranges::equal(x.data(), y.data()); };
    bool phi_ok = true;
    for (int trial = 0; trial < 5; ++trial) {
        const Shape shape{17, 23, trial % 2 ? 3 : 1};
        std::vector<double> a(shape.size()), b(shape.size());
        for (double& x : a) x = u(rng);
        for (double& x : b) x = u(rng);
        const Image img(shape, a), base(shape, b);
        for (Upsampling mode : {Upsampling::bilinear, Upsampling::patch}) {
            phi_ok = phi_ok && same(apply_mask(img, base, Mask(7, 7, 1.0), mode), img);
            phi_ok = phi_ok && same(apply_mask(img, base, Mask(7, 7, 0.0), mode), base);
        }
    }
    report("metric-identities", a1 == 1.0 && std::abs(a2 - 0.5) <= kLinearAucTol && phi_ok,
           "auc(1) = " + fmt(a1) + ", |auc(1->0) - 0.5| = " + fmt(std::abs(a2 - 0.5)) + ", Phi identities " +
               (phi_ok ? "exact" : "broken"),
           seconds_since(t0));
}

// ------------------------------------------------------------ SRAE

XnnBatch linear_task(int n, std::uint64_t seed) {
    XnnBatch b;
    b.dimension = 8;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double z[8];
        for (double& x : z) {
            x = u(rng);
            b.z.push_back(x);
        }
        b.y_hat.push_back(0.8 * z[0] - 0.5 * z[3]);
    }
    return b;
}

// Mean cos^2 between x-feature columns over the batch, computed from encode().
double mean_cos2(const SraeModel& m, const XnnBatch& b) {
    const int n = m.features;
    std::vector<std::vector<double>> cols(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < b.size(); ++i) {
        const auto e = m.encode(b.row(i));
        for (int k = 0; k < n; ++k) cols[std::size_t(k)].push_back(e[std::size_t(k)]);
    }
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < n; ++a)
        for (int c = a + 1; c < n; ++c) {
            double dot = 0.0, na = 0.0, nc = 0.0;
            for (std::size_t i = 0; i < b.size(); ++i) {
                dot += cols[std::size_t(a)][i] * cols[std::size_t(c)][i];
                na += cols[std::size_t(a)][i] * cols[std::size_t(a)][i];
                nc += cols[std::size_t(c)][i] * cols[std::size_t(c)][i];
            }
            sum += na > 0 && nc > 0 ? dot * dot / (na * nc) : 0.0;
            ++pairs;
        }
    return sum / pairs;
}

void srae_faithfulness() {
    const auto t0 = std::chrono::steady_clock::now();
    const XnnBatch train = linear_task(400, 1), test = linear_task(200, 2);
    SraeHyperparameters hp;
    const auto with = train_srae(train, hp, 5);
    hp.eta = 0.0;
    const auto without = train_srae(train, hp, 5);

    double mse = 0.0, my = 0.0, mp = 0.0;
    std::vector<double> pred;
    for (std::size_t i = 0; i < test.size(); ++i) {
        pred.push_back(with.model.predict(test.row(i)));
        mse += (pred.back() - test.y_hat[i]) * (pred.back() - test.y_hat[i]);
        my += test.y_hat[i];
        mp += pred.back();
    }
    const double n = double(test.size());
    mse /= n;
    my /= n;
    mp /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        sxy += (pred[i] - mp) * (test.y_hat[i] - my);
        sxx += (pred[i] - mp) * (pred[i] - mp);
        syy += (test.y_hat[i] - my) * (test.y_hat[i] - my);
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    const double c_with = mean_cos2(with.model, test), c_without = mean_cos2(without.model, test);
    report("srae-faithfulness", mse < kSraeMseMax && corr > kSraeCorrMin && c_with < c_without,
           "held-out mse " + fmt(mse) + ", correlation " + fmt(corr) + "; mean cos^2 eta=1 " + fmt(c_with) +
               " vs eta=0 " + fmt(c_without),
           seconds_since(t0));
}

// ------------------------------------------------------------ determinism

int run(const std::string& cmd) {
    const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> digests(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != kManifestName)
            out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
    return out;
}

void determinism(const fs::path& cli, const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string exe = "'" + cli.string() + "'";
    const fs::path a = work / "a";
    bool ok = run(exe + " train-toy --out '" + (a / "train").string() + "' --fixtures 3") == 0;
    const std::string model = (a / "train" / "model.sfm").string();
    const std::string image = (a / "train" / "fixtures" / "images" / "00000.png").string();
    ok = ok && run(exe + " explain --model '" + model + "' --image '" + image + "' --out '" +
                   (a / "explain").string() + "'") == 0;
    ok = ok && run(exe + " sag --model '" + model + "' --image '" + image + "' --out '" + (a / "sag").string() +
                   "'") == 0;
    int stages = 0, identical = 0, files = 0;
    for (const char* stage : {"train", "explain", "sag"}) {
        if (!ok) break;
        ++stages;
        const fs::path b = work / "b" / stage;
        const int rc = run(exe + " replay '" + (a / stage / kManifestName).string() + "' --out '" + b.string() + "'");
        const auto da = digests(a / stage), db = digests(b);
        files += int(da.size());
        if (rc == 0 && da == db && !da.empty()) ++identical;
    }
    report("determinism", ok && stages == 3 && identical == 3,
           std::to_string(identical) + "/3 stages (train-toy, explain, sag) byte-identical on replay, " +
               std::to_string(files) + " files compared",
           seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    fs::path model_path, cli, work;
    app.add_option("--model", model_path, "Toy model trained with the default seed")->required();
    app.add_option("--cli", cli, "sagkit executable")->required();
    app.add_option("--work", work, "Scratch directory")->required();
    CLI11_PARSE(app, argc, argv);

    const ToyCnn model = ToyCnn::load(model_path);
    oracle_equivalence();
    multiple_and_minimality(model);
    direction_and_causality(model);
    gradient_suites(model);
    metric_identities();
    srae_faithfulness();
    determinism(fs::absolute(cli), fs::absolute(work));
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
