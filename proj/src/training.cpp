#include "sagkit/training.hpp"

#include "sagkit/baseline.hpp"
#include "sagkit/errors.hpp"
#include "sagkit/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sagkit {
namespace {

struct Adam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long step = 0;
    ToyCnnParams m, v;

    Adam(const ToyCnnArch& arch, double learning_rate)
        : lr(learning_rate), m(ToyCnnParams::zeros(arch)), v(ToyCnnParams::zeros(arch)) {}

    void apply(ToyCnnParams& params, ToyCnnParams& grad, double scale) {
        ++step;
        const double c1 = 1.0 - std::pow(b1, double(step));
        const double c2 = 1.0 - std::pow(b2, double(step));
        auto pb = params.blobs();
        auto gb = grad.blobs();
        auto mb = m.blobs();
        auto vb = v.blobs();
        for (std::size_t k = 0; k < pb.size(); ++k)
            for (std::size_t i = 0; i < pb[k]->size(); ++i) {
                const double g = (*gb[k])[i] * scale;
                double& mi = (*mb[k])[i];
                double& vi = (*vb[k])[i];
                mi = b1 * mi + (1.0 - b1) * g;
                vi = b2 * vi + (1.0 - b2) * g * g;
                (*pb[k])[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
            }
    }
};

void zero(ToyCnnParams& p) {
    for (auto* b : p.blobs()) std::fill(b->begin(), b->end(), 0.0);
}

bool touches(const PixelRect& r, const Box& b) {
    return r.y0 < b.y + b.size && b.y < r.y1 && r.x0 < b.x + b.size && b.x < r.x1;
}

// Replaces pixels selected by `occlude` with the blurred copy.
Image occlude_with(const Image& image, const Image& blurred, const std::vector<bool>& occlude) {
    std::vector<double> px(image.values());
    for (std::size_t p = 0; p < occlude.size(); ++p)
        if (occlude[p])
            for (int c = 0; c < image.channels(); ++c) {
                const std::size_t i = p * std::size_t(image.channels()) + std::size_t(c);
                px[i] = blurred.data()[i];
            }
    return Image(image.shape(), std::move(px));
}

struct Sample {
    Image image;
    int label;
};

Sample augment(const SyntheticDataset& ds, std::size_t idx, const TrainConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Image& img = ds.images[idx];
    const int label = ds.labels[idx];
    const auto& motifs = ds.features[idx];
    const double u = unit(rng);
    const int h = img.height(), w = img.width();

    if (u < cfg.p_full_blur) {
        const double sigma = cfg.blur_sigma * (1.0 + unit(rng));
        return {gaussian_blur(img, sigma), 0};
    }
    const Image blurred = gaussian_blur(img, cfg.blur_sigma);
    if (u < cfg.p_full_blur + cfg.p_drop_motif && motifs.size() >= 2) {
        const Box& gone = motifs[std::size_t(unit(rng) < 0.5 ? 0 : 1)];
        std::vector<bool> occ(std::size_t(h * w), false);
        for (int y = std::max(0, gone.y - 1); y < std::min(h, gone.y + gone.size + 1); ++y)
            for (int x = std::max(0, gone.x - 1); x < std::min(w, gone.x + gone.size + 1); ++x)
                occ[std::size_t(y * w + x)] = true;
        return {occlude_with(img, blurred, occ), label};
    }
    if (u < cfg.p_full_blur + cfg.p_drop_motif + cfg.p_patch_occlude) {
        const PatchGrid grid(7, 7, h, w);
        std::vector<bool> keep_patch(std::size_t(grid.patch_count()), false);
        for (auto&& k : keep_patch) k = unit(rng) < 0.5;
        int kept_label = label;
        if (!motifs.empty()) {
            // Keep one or both motifs intact; occasionally remove both and relabel.
            const double r = unit(rng);
            std::vector<int> keep_motifs;
            if (r < 0.3) keep_motifs = {0};
            else if (r < 0.6) keep_motifs = {1};
            else if (r < 0.75) keep_motifs = {0, 1};
            for (int p = 0; p < grid.patch_count(); ++p) {
                for (int m = 0; m < int(motifs.size()); ++m) {
                    const bool kept = std::find(keep_motifs.begin(), keep_motifs.end(), m) != keep_motifs.end();
                    if (touches(grid.rect(p), motifs[std::size_t(m)])) keep_patch[std::size_t(p)] = kept;
                }
            }
            if (keep_motifs.empty()) kept_label = 0;
        }
        std::vector<bool> occ(std::size_t(h * w), false);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) occ[std::size_t(y * w + x)] = !keep_patch[std::size_t(grid.patch_of(y, x))];
        return {occlude_with(img, blurred, occ), kept_label};
    }
    return {img, label};
}

}  // namespace

double accuracy(const ToyCnn& model, const SyntheticDataset& ds, std::size_t begin, std::size_t end) {
    if (end <= begin) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = begin; i < end; ++i) {
        const auto logits = model.logits(ds.images[i]);
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        if (best == ds.labels[i]) ++correct;
    }
    return double(correct) / double(end - begin);
}

TrainedModel train_toy(const SyntheticDataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
    if (ds.size() == 0) throw InputError("training dataset is empty");
    if (ds.config.classes < 2) throw InputError("training needs at least 2 classes");
    if (cfg.epochs < 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0.0))
        throw InputError("invalid training hyperparameters");
    ToyCnnArch arch = cfg.arch;
    arch.height = ds.images.front().height();
    arch.width = ds.images.front().width();
    arch.channels = ds.images.front().channels();
    arch.classes = ds.config.classes;
    arch.validate();

    const std::size_t heldout = std::min(ds.size() - 1, std::size_t(double(ds.size()) * cfg.heldout_fraction));
    const std::size_t train_n = ds.size() - heldout;

    std::mt19937_64 rng(seed);
    ToyCnnParams params = ToyCnnParams::he_init(arch, rng());
    ToyCnnParams grad = ToyCnnParams::zeros(arch);
    Adam adam(arch, cfg.learning_rate);

    std::vector<std::size_t> order(train_n);
    std::iota(order.begin(), order.end(), 0);
    double epoch_loss = 0.0;
    long iteration = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < train_n; start += std::size_t(cfg.batch_size)) {
            const std::size_t stop = std::min(train_n, start + std::size_t(cfg.batch_size));
            zero(grad);
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const Sample s = augment(ds, order[k], cfg, rng);
                const ToyCnnTrace trace = cnn::forward(arch, params, s.image.data());
                std::vector<double> prob = softmax(trace.logits);
                batch_loss += -std::log(std::max(prob[std::size_t(s.label)], 1e-300));
                prob[std::size_t(s.label)] -= 1.0;
                cnn::backward(arch, params, trace, prob, &grad, nullptr);
            }
            ++iteration;
            if (!std::isfinite(batch_loss)) throw TrainingError("training loss became non-finite", iteration);
            adam.apply(params, grad, 1.0 / double(stop - start));
            loss_sum += batch_loss;
        }
        epoch_loss = loss_sum / double(train_n);
    }

    TrainedModel out{ToyCnn(arch, std::move(params)), {}};
    out.report.train_count = train_n;
    out.report.heldout_count = heldout;
    out.report.epochs = cfg.epochs;
    out.report.final_loss = epoch_loss;
    out.report.heldout_accuracy = accuracy(out.model, ds, train_n, ds.size());
    return out;
}

}  // namespace sagkit
