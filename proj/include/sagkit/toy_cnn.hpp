#pragma once

#include "sagkit/image.hpp"
#include "sagkit/scorer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sagkit {

/// conv3x3(conv1) + ReLU + maxpool2 -> conv3x3(conv2) + ReLU + maxpool2 -> dense(hidden) + ReLU -> dense(classes)
struct ToyCnnArch {
    int height = 32;
    int width = 32;
    int channels = 1;
    int conv1_filters = 8;
    int conv2_filters = 16;
    int hidden = 32;
    int classes = 3;

    int pool1_height() const { return height / 2; }
    int pool1_width() const { return width / 2; }
    int pool2_height() const { return pool1_height() / 2; }
    int pool2_width() const { return pool1_width() / 2; }
    int flat_size() const { return conv2_filters * pool2_height() * pool2_width(); }
    Shape input_shape() const { return {height, width, channels}; }

    /// Throws InputError when a dimension is non-positive or the pooled map collapses.
    void validate() const;
    bool operator==(const ToyCnnArch&) const = default;
};

struct ToyCnnParams {
    std::vector<double> conv1_w, conv1_b;
    std::vector<double> conv2_w, conv2_b;
    std::vector<double> dense1_w, dense1_b;
    std::vector<double> dense2_w, dense2_b;

    static ToyCnnParams zeros(const ToyCnnArch& arch);
    /// He-normal weights, zero biases.
    static ToyCnnParams he_init(const ToyCnnArch& arch, std::uint64_t seed);

    std::vector<std::vector<double>*> blobs();
    std::vector<const std::vector<double>*> blobs() const;
    std::size_t parameter_count() const;
    bool operator==(const ToyCnnParams&) const = default;
};

/// Intermediate activations of one forward pass, kept for backpropagation.
struct ToyCnnTrace {
    std::vector<double> input;  // CHW
    std::vector<double> conv1;  // post-ReLU
    std::vector<double> pool1;
    std::vector<int> pool1_arg;
    std::vector<double> conv2;  // post-ReLU
    std::vector<double> pool2;
    std::vector<int> pool2_arg;
    std::vector<double> hidden;  // post-ReLU
    std::vector<double> logits;
};

namespace cnn {

ToyCnnTrace forward(const ToyCnnArch& arch, const ToyCnnParams& params, std::span<const double> image_hwc);

/// Backpropagates d loss / d logits. Either output may be null. Parameter
/// gradients are accumulated; the input gradient (HWC) is overwritten.
void backward(const ToyCnnArch& arch, const ToyCnnParams& params, const ToyCnnTrace& trace,
              std::span<const double> dlogits, ToyCnnParams* param_grad, std::vector<double>* input_grad);

}  // namespace cnn

/// The bundled gradient-capable scorer. Weights are held at f32 precision so
/// that a saved and reloaded model evaluates identically.
class ToyCnn final : public Scorer {
public:
    ToyCnn(ToyCnnArch arch, ToyCnnParams params);

    static ToyCnn initialized(const ToyCnnArch& arch, std::uint64_t seed);

    Shape input_shape() const override { return arch_.input_shape(); }
    int class_count() const override { return arch_.classes; }
    Capability capability() const override { return Capability::gradient_capable; }
    std::vector<double> probabilities(const Image& image) const override;
    std::vector<double> probability_gradient(const Image& image, int class_index) const override;

    std::vector<double> logits(const Image& image) const;
    /// Post-ReLU activations of the dense hidden layer (dimension arch().hidden).
    std::vector<double> hidden_activations(const Image& image) const;

    const ToyCnnArch& arch() const { return arch_; }
    const ToyCnnParams& params() const { return params_; }

    /// "SFRG" magic, u32 version, u32 architecture descriptor, then f32 blobs, all little-endian.
    std::vector<std::uint8_t> serialize() const;
    static ToyCnn deserialize(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static ToyCnn load(const std::filesystem::path& path);

private:
    ToyCnnArch arch_;
    ToyCnnParams params_;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace sagkit
