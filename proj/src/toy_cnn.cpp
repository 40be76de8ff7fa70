#include "sagkit/toy_cnn.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sagkit {

void ToyCnnArch::validate() const {
    if (height <= 0 || width <= 0 || channels <= 0 || conv1_filters <= 0 || conv2_filters <= 0 || hidden <= 0)
        throw InputError("toy CNN dimensions must be positive");
    if (classes < 2) throw InputError("toy CNN needs at least 2 classes");
    if (pool2_height() <= 0 || pool2_width() <= 0) throw InputError("input too small for two 2x2 pooling stages");
}

ToyCnnParams ToyCnnParams::zeros(const ToyCnnArch& arch) {
    arch.validate();
    ToyCnnParams p;
    p.conv1_w.assign(std::size_t(arch.conv1_filters * arch.channels * 9), 0.0);
    p.conv1_b.assign(std::size_t(arch.conv1_filters), 0.0);
    p.conv2_w.assign(std::size_t(arch.conv2_filters * arch.conv1_filters * 9), 0.0);
    p.conv2_b.assign(std::size_t(arch.conv2_filters), 0.0);
    p.dense1_w.assign(std::size_t(arch.hidden) * std::size_t(arch.flat_size()), 0.0);
    p.dense1_b.assign(std::size_t(arch.hidden), 0.0);
    p.dense2_w.assign(std::size_t(arch.classes * arch.hidden), 0.0);
    p.dense2_b.assign(std::size_t(arch.classes), 0.0);
    return p;
}

ToyCnnParams ToyCnnParams::he_init(const ToyCnnArch& arch, std::uint64_t seed) {
    ToyCnnParams p = zeros(arch);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](std::vector<double>& w, int fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
        for (double& v : w) v = dist(rng);
    };
    fill(p.conv1_w, arch.channels * 9);
    fill(p.conv2_w, arch.conv1_filters * 9);
    fill(p.dense1_w, arch.flat_size());
    fill(p.dense2_w, arch.hidden);
    return p;
}

std::vector<std::vector<double>*> ToyCnnParams::blobs() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
}

std::vector<const std::vector<double>*> ToyCnnParams::blobs() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
}

std::size_t ToyCnnParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto* b : blobs()) n += b->size();
    return n;
}

namespace cnn {
namespace {

// 3x3 "same" convolution with zero padding; tensors are CHW.
void conv3x3(const double* in, int in_ch, int h, int w, const double* weights, const double* bias, int out_ch,
             double* out) {
    for (int f = 0; f < out_ch; ++f) {
        double* o = out + std::size_t(f) * std::size_t(h * w);
        std::fill(o, o + h * w, bias[f]);
        for (int c = 0; c < in_ch; ++c) {
            const double* src = in + std::size_t(c) * std::size_t(h * w);
            const double* k = weights + (std::size_t(f) * std::size_t(in_ch) + std::size_t(c)) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double wt = k[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + y * w;
                        const double* irow = src + (y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wt * irow[x];
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const double* in, int in_ch, int h, int w, const double* weights, int out_ch,
                      const double* dout, double* dweights, double* dbias, double* din) {
    for (int f = 0; f < out_ch; ++f) {
        const double* g = dout + std::size_t(f) * std::size_t(h * w);
        if (dbias) {
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += g[i];
            dbias[f] += s;
        }
        for (int c = 0; c < in_ch; ++c) {
            const double* src = in + std::size_t(c) * std::size_t(h * w);
            double* dsrc = din ? din + std::size_t(c) * std::size_t(h * w) : nullptr;
            const std::size_t kbase = (std::size_t(f) * std::size_t(in_ch) + std::size_t(c)) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double wt = weights[kbase + std::size_t(ky * 3 + kx)];
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = g + y * w;
                        const double* irow = src + (y + dy) * w + dx;
                        if (dweights)
                            for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                        if (dsrc) {
                            double* drow = dsrc + (y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += wt * grow[x];
                        }
                    }
                    if (dweights) dweights[kbase + std::size_t(ky * 3 + kx)] += acc;
                }
            }
        }
    }
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// 2x2 stride-2 max pooling (floor); the first maximum in raster order wins ties.
void maxpool2(const std::vector<double>& in, int ch, int h, int w, std::vector<double>& out, std::vector<int>& arg) {
    const int oh = h / 2, ow = w / 2;
    out.assign(std::size_t(ch * oh * ow), 0.0);
    arg.assign(out.size(), 0);
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                int best = (c * h + 2 * y) * w + 2 * x;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int idx = (c * h + 2 * y + dy) * w + 2 * x + dx;
                        if (in[std::size_t(idx)] > in[std::size_t(best)]) best = idx;
                    }
                const std::size_t o = std::size_t((c * oh + y) * ow + x);
                out[o] = in[std::size_t(best)];
                arg[o] = best;
            }
}

}  // namespace

ToyCnnTrace forward(const ToyCnnArch& arch, const ToyCnnParams& p, std::span<const double> image_hwc) {
    const int h = arch.height, w = arch.width, ch = arch.channels;
    ToyCnnTrace t;
    t.input.resize(std::size_t(ch * h * w));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                t.input[std::size_t((c * h + y) * w + x)] = image_hwc[std::size_t((y * w + x) * ch + c)];

    t.conv1.resize(std::size_t(arch.conv1_filters * h * w));
    conv3x3(t.input.data(), ch, h, w, p.conv1_w.data(), p.conv1_b.data(), arch.conv1_filters, t.conv1.data());
    relu_inplace(t.conv1);
    maxpool2(t.conv1, arch.conv1_filters, h, w, t.pool1, t.pool1_arg);

    const int h1 = arch.pool1_height(), w1 = arch.pool1_width();
    t.conv2.resize(std::size_t(arch.conv2_filters * h1 * w1));
    conv3x3(t.pool1.data(), arch.conv1_filters, h1, w1, p.conv2_w.data(), p.conv2_b.data(), arch.conv2_filters,
            t.conv2.data());
    relu_inplace(t.conv2);
    maxpool2(t.conv2, arch.conv2_filters, h1, w1, t.pool2, t.pool2_arg);

    const std::size_t flat = t.pool2.size();
    t.hidden.assign(std::size_t(arch.hidden), 0.0);
    for (int j = 0; j < arch.hidden; ++j) {
        const double* row = p.dense1_w.data() + std::size_t(j) * flat;
        double s = p.dense1_b[std::size_t(j)];
        for (std::size_t i = 0; i < flat; ++i) s += row[i] * t.pool2[i];
        t.hidden[std::size_t(j)] = s > 0.0 ? s : 0.0;
    }
    t.logits.assign(std::size_t(arch.classes), 0.0);
    for (int k = 0; k < arch.classes; ++k) {
        double s = p.dense2_b[std::size_t(k)];
        for (int j = 0; j < arch.hidden; ++j)
            s += p.dense2_w[std::size_t(k * arch.hidden + j)] * t.hidden[std::size_t(j)];
        t.logits[std::size_t(k)] = s;
    }
    return t;
}

void backward(const ToyCnnArch& arch, const ToyCnnParams& p, const ToyCnnTrace& t, std::span<const double> dlogits,
              ToyCnnParams* pg, std::vector<double>* input_grad) {
    const int h = arch.height, w = arch.width, ch = arch.channels;
    const int h1 = arch.pool1_height(), w1 = arch.pool1_width();
    const std::size_t flat = t.pool2.size();

    // dense2
    std::vector<double> dhidden(std::size_t(arch.hidden), 0.0);
    for (int k = 0; k < arch.classes; ++k) {
        const double g = dlogits[std::size_t(k)];
        if (pg) pg->dense2_b[std::size_t(k)] += g;
        for (int j = 0; j < arch.hidden; ++j) {
            const std::size_t wi = std::size_t(k * arch.hidden + j);
            if (pg) pg->dense2_w[wi] += g * t.hidden[std::size_t(j)];
            dhidden[std::size_t(j)] += g * p.dense2_w[wi];
        }
    }
    // ReLU'(0) = 0
    for (int j = 0; j < arch.hidden; ++j)
        if (t.hidden[std::size_t(j)] <= 0.0) dhidden[std::size_t(j)] = 0.0;

    // dense1
    std::vector<double> dpool2(flat, 0.0);
    for (int j = 0; j < arch.hidden; ++j) {
        const double g = dhidden[std::size_t(j)];
        if (g == 0.0) continue;
        if (pg) {
            pg->dense1_b[std::size_t(j)] += g;
            double* grow = pg->dense1_w.data() + std::size_t(j) * flat;
            for (std::size_t i = 0; i < flat; ++i) grow[i] += g * t.pool2[i];
        }
        const double* row = p.dense1_w.data() + std::size_t(j) * flat;
        for (std::size_t i = 0; i < flat; ++i) dpool2[i] += g * row[i];
    }

    // pool2 + ReLU
    std::vector<double> dconv2(t.conv2.size(), 0.0);
    for (std::size_t o = 0; o < flat; ++o) dconv2[std::size_t(t.pool2_arg[o])] += dpool2[o];
    for (std::size_t i = 0; i < dconv2.size(); ++i)
        if (t.conv2[i] <= 0.0) dconv2[i] = 0.0;

    std::vector<double> dpool1(t.pool1.size(), 0.0);
    conv3x3_backward(t.pool1.data(), arch.conv1_filters, h1, w1, p.conv2_w.data(), arch.conv2_filters,
                     dconv2.data(), pg ? pg->conv2_w.data() : nullptr, pg ? pg->conv2_b.data() : nullptr,
                     dpool1.data());

    std::vector<double> dconv1(t.conv1.size(), 0.0);
    for (std::size_t o = 0; o < dpool1.size(); ++o) dconv1[std::size_t(t.pool1_arg[o])] += dpool1[o];
    for (std::size_t i = 0; i < dconv1.size(); ++i)
        if (t.conv1[i] <= 0.0) dconv1[i] = 0.0;

    std::vector<double> dinput;
    if (input_grad) dinput.assign(t.input.size(), 0.0);
    conv3x3_backward(t.input.data(), ch, h, w, p.conv1_w.data(), arch.conv1_filters, dconv1.data(),
                     pg ? pg->conv1_w.data() : nullptr, pg ? pg->conv1_b.data() : nullptr,
                     input_grad ? dinput.data() : nullptr);

    if (input_grad) {
        input_grad->assign(t.input.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < ch; ++c)
                    (*input_grad)[std::size_t((y * w + x) * ch + c)] = dinput[std::size_t((c * h + y) * w + x)];
    }
}

}  // namespace cnn

ToyCnn::ToyCnn(ToyCnnArch arch, ToyCnnParams params) : arch_(arch), params_(std::move(params)) {
    arch_.validate();
    const ToyCnnParams shape = ToyCnnParams::zeros(arch_);
    auto mine = params_.blobs();
    auto want = shape.blobs();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i]->size() != want[i]->size()) throw InputError("toy CNN parameter blob has the wrong size");
        for (double& v : *mine[i]) {
            if (!std::isfinite(v)) throw InputError("toy CNN parameter is not finite");
            v = double(static_cast<float>(v));
        }
    }
}

ToyCnn ToyCnn::initialized(const ToyCnnArch& arch, std::uint64_t seed) {
    return ToyCnn(arch, ToyCnnParams::he_init(arch, seed));
}

std::vector<double> ToyCnn::logits(const Image& image) const {
    if (image.shape() != arch_.input_shape()) throw InputError("image shape does not match model input");
    return cnn::forward(arch_, params_, image.data()).logits;
}

std::vector<double> ToyCnn::hidden_activations(const Image& image) const {
    if (image.shape() != arch_.input_shape()) throw InputError("image shape does not match model input");
    return cnn::forward(arch_, params_, image.data()).hidden;
}

std::vector<double> ToyCnn::probabilities(const Image& image) const { return softmax(logits(image)); }

std::vector<double> ToyCnn::probability_gradient(const Image& image, int class_index) const {
    const ToyCnnTrace trace = cnn::forward(arch_, params_, image.data());
    const std::vector<double> prob = softmax(trace.logits);
    const double pc = prob[std::size_t(class_index)];
    std::vector<double> dlogits(prob.size());
    for (std::size_t j = 0; j < prob.size(); ++j)
        dlogits[j] = pc * ((int(j) == class_index ? 1.0 : 0.0) - prob[j]);
    std::vector<double> grad;
    cnn::backward(arch_, params_, trace, dlogits, nullptr, &grad);
    return grad;
}

std::vector<std::uint8_t> ToyCnn::serialize() const {
    binio::Writer w;
    w.magic("SFRG");
    w.u32(kModelFormatVersion);
    for (int v : {arch_.height, arch_.width, arch_.channels, arch_.conv1_filters, arch_.conv2_filters, arch_.hidden,
                  arch_.classes})
        w.u32(std::uint32_t(v));
    for (const auto* blob : params_.blobs()) w.f32_blob(*blob);
    return w.bytes();
}

ToyCnn ToyCnn::deserialize(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    r.expect_magic("SFRG");
    const std::uint32_t version = r.u32();
    if (version != kModelFormatVersion) throw IoError("unsupported model format version " + std::to_string(version));
    ToyCnnArch arch;
    arch.height = int(r.u32());
    arch.width = int(r.u32());
    arch.channels = int(r.u32());
    arch.conv1_filters = int(r.u32());
    arch.conv2_filters = int(r.u32());
    arch.hidden = int(r.u32());
    arch.classes = int(r.u32());
    arch.validate();
    ToyCnnParams params = ToyCnnParams::zeros(arch);
    for (auto* blob : params.blobs()) *blob = r.f32_blob(blob->size());
    if (!r.at_end()) throw IoError("trailing bytes after model weights");
    return ToyCnn(arch, std::move(params));
}

void ToyCnn::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }

ToyCnn ToyCnn::load(const std::filesystem::path& path) { return deserialize(binio::read_file(path)); }

}  // namespace sagkit
