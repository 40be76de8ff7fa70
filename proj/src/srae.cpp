#include "sagkit/srae.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/errors.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace sagkit {

void SraeHyperparameters::validate() const {
    if (features < 1) throw InputError("SRAE needs at least one x-feature");
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(beta) || !finite_nonneg(eta) || !finite_nonneg(q))
        throw InputError("beta, eta and q must be finite and non-negative");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("learning rate must be positive");
    if (max_epochs < 0 || patience < 1 || !(tolerance >= 0.0)) throw InputError("invalid SRAE stopping parameters");
}

void XnnBatch::validate() const {
    if (dimension < 1) throw InputError("embedding dimension must be positive");
    if (y_hat.size() < 2) throw InputError("XNN batch needs at least 2 examples");
    if (z.size() != y_hat.size() * std::size_t(dimension))
        throw InputError("Z has " + std::to_string(z.size()) + " values, expected " +
                         std::to_string(y_hat.size() * std::size_t(dimension)));
    for (double v : z)
        if (!std::isfinite(v)) throw InputError("Z contains a non-finite value");
    for (double v : y_hat)
        if (!std::isfinite(v)) throw InputError("y_hat contains a non-finite value");
}

SraeModel SraeModel::initialized(int dimension, const SraeHyperparameters& hp, std::uint64_t seed) {
    hp.validate();
    if (dimension < 2 || hp.features >= dimension)
        throw InputError("x-feature count must be below the embedding dimension");
    SraeModel m;
    m.dimension = dimension;
    m.features = hp.features;
    m.hidden = 2 * dimension;
    m.beta = hp.beta;
    m.eta = hp.eta;
    m.q = hp.q;
    const auto S = std::size_t(dimension), n = std::size_t(hp.features), H = std::size_t(m.hidden);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::vector<double>& w, std::size_t count, std::size_t fan_in) {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(fan_in)));
        w.resize(count);
        for (double& x : w) x = dist(rng);
    };
    fill(m.enc_w1, H * S, S);
    m.enc_b1.assign(H, 0.0);
    fill(m.enc_w2, n * H, H);
    m.enc_b2.assign(n, 0.0);
    fill(m.dec_w1, H * n, n);
    m.dec_b1.assign(H, 0.0);
    fill(m.dec_w2, S * H, H);
    m.dec_b2.assign(S, 0.0);
    fill(m.head, n, n);
    return m;
}

std::vector<std::vector<double>*> SraeModel::blobs() {
    return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2, &head};
}

std::vector<const std::vector<double>*> SraeModel::blobs() const {
    return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2, &head};
}

std::size_t SraeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* b : blobs()) n += b->size();
    return n;
}

namespace {

// y = tanh(W x + b) when squash, else W x + b.
std::vector<double> dense(const std::vector<double>& w, const std::vector<double>& b, std::span<const double> x,
                          bool squash) {
    std::vector<double> out(b);
    const std::size_t in = x.size();
    for (std::size_t o = 0; o < out.size(); ++o) {
        double s = out[o];
        for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[i];
        out[o] = squash ? std::tanh(s) : s;
    }
    return out;
}

// Accumulates dW += d (x) x, db += d; returns W^T d.
std::vector<double> dense_back(const std::vector<double>& w, std::span<const double> x, std::span<const double> d,
                               double* dw, double* db) {
    const std::size_t in = x.size();
    std::vector<double> dx(in, 0.0);
    for (std::size_t o = 0; o < d.size(); ++o) {
        if (d[o] == 0.0) continue;
        for (std::size_t i = 0; i < in; ++i) {
            dw[o * in + i] += d[o] * x[i];
            dx[i] += w[o * in + i] * d[o];
        }
        db[o] += d[o];
    }
    return dx;
}

struct Sample {
    std::vector<double> h, e, g, zr;
    double y = 0.0;
};

struct Pass {
    std::vector<Sample> samples;
    std::vector<double> col_norm;  // |E_l| over the batch
    std::vector<double> cos;       // n x n
    std::vector<double> recon;     // e_k, per embedding dimension
    SraeLoss loss;
};

void check_pair(const SraeModel& model, const XnnBatch& batch) {
    batch.validate();
    if (batch.dimension != model.dimension)
        throw InputError("batch dimension " + std::to_string(batch.dimension) + " does not match the model's " +
                         std::to_string(model.dimension));
}

Pass forward(const SraeModel& m, const XnnBatch& batch) {
    check_pair(m, batch);
    const std::size_t N = batch.size(), S = std::size_t(m.dimension), n = std::size_t(m.features);
    Pass p;
    p.samples.resize(N);
    p.recon.assign(S, 0.0);
    double faith = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        Sample& s = p.samples[i];
        const auto z = batch.row(i);
        s.h = dense(m.enc_w1, m.enc_b1, z, true);
        s.e = dense(m.enc_w2, m.enc_b2, s.h, true);
        s.g = dense(m.dec_w1, m.dec_b1, s.e, true);
        s.zr = dense(m.dec_w2, m.dec_b2, s.g, false);
        for (std::size_t l = 0; l < n; ++l) s.y += m.head[l] * s.e[l];
        const double r = s.y - batch.y_hat[i];
        faith += r * r;
        for (std::size_t k = 0; k < S; ++k) {
            const double d = s.zr[k] - z[k];
            p.recon[k] += d * d;
        }
    }
    p.loss.faithfulness = faith / double(N);
    double rec = 0.0;
    for (double& e : p.recon) {
        e /= double(N);
        rec += std::log1p(m.q * e);
    }
    p.loss.reconstruction = m.beta * rec / double(S);

    p.col_norm.assign(n, 0.0);
    p.cos.assign(n * n, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
        double s = 0.0;
        for (const Sample& smp : p.samples) s += smp.e[l] * smp.e[l];
        p.col_norm[l] = std::sqrt(s);
    }
    double pull = 0.0;
    for (std::size_t l = 0; l < n; ++l)
        for (std::size_t k = l + 1; k < n; ++k) {
            if (p.col_norm[l] == 0.0 || p.col_norm[k] == 0.0) continue;  // cos undefined: contributes 0
            double dot = 0.0;
            for (const Sample& smp : p.samples) dot += smp.e[l] * smp.e[k];
            const double c = dot / (p.col_norm[l] * p.col_norm[k]);
            p.cos[l * n + k] = p.cos[k * n + l] = c;
            pull += 2.0 * c * c;  // both ordered pairs
        }
    p.loss.pullaway = n > 1 ? m.eta * pull / double(n * (n - 1)) : 0.0;
    p.loss.total = p.loss.faithfulness + p.loss.reconstruction + p.loss.pullaway;
    return p;
}

}  // namespace

std::vector<double> SraeModel::encode(std::span<const double> z) const {
    if (z.size() != std::size_t(dimension)) throw InputError("embedding has the wrong dimension");
    return dense(enc_w2, enc_b2, dense(enc_w1, enc_b1, z, true), true);
}

std::vector<double> SraeModel::decode(std::span<const double> e) const {
    if (e.size() != std::size_t(features)) throw InputError("x-feature vector has the wrong length");
    return dense(dec_w2, dec_b2, dense(dec_w1, dec_b1, e, true), false);
}

double SraeModel::predict(std::span<const double> z) const {
    const auto e = encode(z);
    double y = 0.0;
    for (std::size_t l = 0; l < e.size(); ++l) y += head[l] * e[l];
    return y;
}

SraeLoss srae_loss(const SraeModel& model, const XnnBatch& batch) { return forward(model, batch).loss; }

SraeLoss srae_loss_gradient(const SraeModel& m, const XnnBatch& batch, std::vector<double>& gradient) {
    const Pass p = forward(m, batch);
    const std::size_t N = p.samples.size(), S = std::size_t(m.dimension), n = std::size_t(m.features);
    gradient.assign(m.parameter_count(), 0.0);
    // Offsets of each blob inside `gradient`, in blobs() order.
    std::vector<double*> g;
    {
        double* at = gradient.data();
        for (const auto* b : m.blobs()) {
            g.push_back(at);
            at += b->size();
        }
    }
    double *g_ew1 = g[0], *g_eb1 = g[1], *g_ew2 = g[2], *g_eb2 = g[3];
    double *g_dw1 = g[4], *g_db1 = g[5], *g_dw2 = g[6], *g_db2 = g[7], *g_head = g[8];

    std::vector<double> recon_weight(S);
    for (std::size_t k = 0; k < S; ++k)
        recon_weight[k] = m.beta / double(S) * m.q / (1.0 + m.q * p.recon[k]) * 2.0 / double(N);
    const double pull_scale = n > 1 ? m.eta / double(n * (n - 1)) : 0.0;

    for (std::size_t i = 0; i < N; ++i) {
        const Sample& s = p.samples[i];
        const auto z = batch.row(i);
        const double r = 2.0 / double(N) * (s.y - batch.y_hat[i]);
        std::vector<double> de(n);
        for (std::size_t l = 0; l < n; ++l) {
            de[l] = r * m.head[l];
            g_head[l] += r * s.e[l];
        }
        // pull-away: each unordered pair counted twice
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t k = 0; k < n; ++k) {
                if (k == l || p.col_norm[l] == 0.0 || p.col_norm[k] == 0.0) continue;
                const double c = p.cos[l * n + k];
                const double dc = s.e[k] / (p.col_norm[l] * p.col_norm[k]) -
                                  c * s.e[l] / (p.col_norm[l] * p.col_norm[l]);
                de[l] += pull_scale * 2.0 * 2.0 * c * dc;
            }
        std::vector<double> dzr(S);
        for (std::size_t k = 0; k < S; ++k) dzr[k] = recon_weight[k] * (s.zr[k] - z[k]);
        std::vector<double> dgv = dense_back(m.dec_w2, s.g, dzr, g_dw2, g_db2);
        for (std::size_t j = 0; j < dgv.size(); ++j) dgv[j] *= 1.0 - s.g[j] * s.g[j];
        const std::vector<double> de_dec = dense_back(m.dec_w1, s.e, dgv, g_dw1, g_db1);
        for (std::size_t l = 0; l < n; ++l) de[l] = (de[l] + de_dec[l]) * (1.0 - s.e[l] * s.e[l]);
        std::vector<double> dh = dense_back(m.enc_w2, s.h, de, g_ew2, g_eb2);
        for (std::size_t j = 0; j < dh.size(); ++j) dh[j] *= 1.0 - s.h[j] * s.h[j];
        dense_back(m.enc_w1, z, dh, g_ew1, g_eb1);
    }
    return p.loss;
}

SraeTrainResult train_srae(const XnnBatch& batch, const SraeHyperparameters& hp, std::uint64_t seed) {
    batch.validate();
    SraeTrainResult out{SraeModel::initialized(batch.dimension, hp, seed), {}, 0};
    SraeModel& m = out.model;
    std::vector<double> grad;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
        const SraeLoss loss = srae_loss_gradient(m, batch, grad);
        if (!std::isfinite(loss.total)) throw TrainingError("SRAE loss became non-finite", epoch);
        if (!std::isfinite(best) || loss.total < best - hp.tolerance * std::abs(best)) {
            best = loss.total;
            stale = 0;
        } else if (++stale >= hp.patience) {
            break;
        }
        std::size_t at = 0;
        for (auto* b : m.blobs())
            for (double& w : *b) w -= hp.learning_rate * grad[at++];
        out.epochs_run = epoch + 1;
    }
    out.final_loss = srae_loss(m, batch);
    if (!std::isfinite(out.final_loss.total)) throw TrainingError("SRAE loss became non-finite", out.epochs_run);
    return out;
}

FaithfulnessReport faithfulness_metric(const SraeModel& model, const XnnBatch& heldout) {
    check_pair(model, heldout);
    const std::size_t N = heldout.size();
    std::vector<double> pred(N);
    double mse = 0.0, mp = 0.0, my = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        pred[i] = model.predict(heldout.row(i));
        const double d = pred[i] - heldout.y_hat[i];
        mse += d * d;
        mp += pred[i];
        my += heldout.y_hat[i];
    }
    FaithfulnessReport rep;
    rep.mse = mse / double(N);
    mp /= double(N);
    my /= double(N);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double a = pred[i] - mp, b = heldout.y_hat[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx > 0.0 && syy > 0.0) rep.correlation = sxy / std::sqrt(sxx * syy);
    return rep;
}

double orthogonality_metric(const SraeModel& model, const XnnBatch& batch) {
    if (model.features < 2) throw InputError("orthogonality needs at least 2 x-features");
    const Pass p = forward(model, batch);
    const std::size_t n = std::size_t(model.features);
    double sum = 0.0;
    for (std::size_t l = 0; l < n; ++l)
        for (std::size_t k = l + 1; k < n; ++k) sum += p.cos[l * n + k] * p.cos[l * n + k];
    return sum / double(n * (n - 1) / 2);
}

std::vector<std::uint8_t> SraeModel::serialize() const {
    binio::Writer w;
    w.magic("SRAE");
    w.u32(kSraeFormatVersion);
    w.u32(std::uint32_t(dimension));
    w.u32(std::uint32_t(features));
    w.u32(std::uint32_t(hidden));
    w.f64(beta);
    w.f64(eta);
    w.f64(q);
    for (const auto* b : blobs()) w.f64_blob(*b);
    return w.bytes();
}

SraeModel SraeModel::deserialize(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    r.expect_magic("SRAE");
    if (const auto v = r.u32(); v != kSraeFormatVersion)
        throw IoError("unsupported SRAE format version " + std::to_string(v));
    SraeModel m;
    m.dimension = int(r.u32());
    m.features = int(r.u32());
    m.hidden = int(r.u32());
    if (m.dimension < 2 || m.features < 1 || m.features >= m.dimension || m.hidden != 2 * m.dimension ||
        m.dimension > 1 << 16)
        throw IoError("invalid SRAE architecture header");
    m.beta = r.f64();
    m.eta = r.f64();
    m.q = r.f64();
    const auto S = std::size_t(m.dimension), n = std::size_t(m.features), H = std::size_t(m.hidden);
    const std::size_t sizes[] = {H * S, H, n * H, n, H * n, H, S * H, S, n};
    std::size_t k = 0;
    for (auto* b : m.blobs()) *b = r.f64_blob(sizes[k++]);
    if (!r.at_end()) throw IoError("trailing bytes after SRAE model");
    for (const auto* b : m.blobs())
        for (double v : *b)
            if (!std::isfinite(v)) throw IoError("SRAE model contains a non-finite parameter");
    return m;
}

void SraeModel::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }

SraeModel SraeModel::load(const std::filesystem::path& path) { return deserialize(binio::read_file(path)); }

}  // namespace sagkit
