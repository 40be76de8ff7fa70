#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace sagkit {

struct SraeHyperparameters {
    int features = 3;         // n, number of x-features
    double beta = 0.1;        // reconstruction weight
    double eta = 1.0;         // pull-away weight
    double q = 10.0;          // sparsity steepness inside log(1 + q e)
    double learning_rate = 0.1;
    int max_epochs = 6000;
    int patience = 200;       // epochs without relative improvement > tolerance before stopping
    double tolerance = 1e-7;

    void validate() const;
};

/// Z (N x S_z, row-major) and the explained-class output y_hat (N).
struct XnnBatch {
    int dimension = 0;  // S_z
    std::vector<double> z;
    std::vector<double> y_hat;

    std::size_t size() const { return y_hat.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span(z).subspan(i * std::size_t(dimension), std::size_t(dimension));
    }
    /// Throws InputError unless rows match, N >= 2 and all values are finite.
    void validate() const;
};

/// Encoder Z -> tanh(2 S_z) -> tanh(n); decoder E -> tanh(2 S_z) -> linear(S_z); head y = v.E.
struct SraeModel {
    int dimension = 0;  // S_z
    int features = 0;   // n
    int hidden = 0;     // 2 S_z
    double beta = 0.0, eta = 0.0, q = 0.0;
    std::vector<double> enc_w1, enc_b1, enc_w2, enc_b2;  // hidden x S_z, hidden, n x hidden, n
    std::vector<double> dec_w1, dec_b1, dec_w2, dec_b2;  // hidden x n, hidden, S_z x hidden, S_z
    std::vector<double> head;                            // n

    /// Seeded initialisation; throws InputError unless 1 <= n < S_z.
    static SraeModel initialized(int dimension, const SraeHyperparameters& hp, std::uint64_t seed);

    std::vector<std::vector<double>*> blobs();
    std::vector<const std::vector<double>*> blobs() const;
    std::size_t parameter_count() const;

    /// x-features E(z), length n.
    std::vector<double> encode(std::span<const double> z) const;
    std::vector<double> decode(std::span<const double> e) const;
    double predict(std::span<const double> z) const;

    std::vector<std::uint8_t> serialize() const;
    static SraeModel deserialize(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static SraeModel load(const std::filesystem::path& path);

    bool operator==(const SraeModel&) const = default;
};

inline constexpr std::uint32_t kSraeFormatVersion = 1;

struct SraeLoss {
    double faithfulness = 0.0;
    double reconstruction = 0.0;
    double pullaway = 0.0;
    double total = 0.0;
};

SraeLoss srae_loss(const SraeModel& model, const XnnBatch& batch);

/// Loss plus its gradient, laid out like model.blobs() concatenated.
SraeLoss srae_loss_gradient(const SraeModel& model, const XnnBatch& batch, std::vector<double>& gradient);

struct SraeTrainResult {
    SraeModel model;
    SraeLoss final_loss;
    int epochs_run = 0;
};

/// Fixed-step gradient descent with early stopping on plateau. Throws
/// TrainingError on a non-finite loss.
SraeTrainResult train_srae(const XnnBatch& batch, const SraeHyperparameters& hp, std::uint64_t seed);

struct FaithfulnessReport {
    double mse = 0.0;
    std::optional<double> correlation;  // absent when either series is constant
};

FaithfulnessReport faithfulness_metric(const SraeModel& model, const XnnBatch& heldout);

/// Mean cos^2 over unordered pairs of x-feature columns; throws InputError for n < 2.
double orthogonality_metric(const SraeModel& model, const XnnBatch& batch);

}  // namespace sagkit
