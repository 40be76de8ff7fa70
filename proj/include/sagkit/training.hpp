#pragma once

#include "sagkit/dataset.hpp"
#include "sagkit/toy_cnn.hpp"

#include <cstdint>

namespace sagkit {

struct TrainConfig {
    ToyCnnArch arch;
    int epochs = 12;
    int batch_size = 32;
    double learning_rate = 4e-3;  // Adam
    double heldout_fraction = 0.2;

    // Occlusion augmentation: occluded regions are replaced by a blurred copy of
    // the image, the same perturbation explanations apply at inference time.
    double blur_sigma = 4.0;
    double p_full_blur = 0.15;     // whole image blurred, relabelled as class 0
    double p_drop_motif = 0.3;     // one planted motif blurred away, label kept
    double p_patch_occlude = 0.3;  // random 7x7 patches blurred around the kept motif(s)
};

struct TrainReport {
    std::size_t train_count = 0;
    std::size_t heldout_count = 0;
    int epochs = 0;
    double final_loss = 0.0;  // mean cross-entropy of the last epoch
    double heldout_accuracy = 0.0;
};

struct TrainedModel {
    ToyCnn model;
    TrainReport report;
};

/// Mini-batch Adam on softmax cross-entropy. The last heldout_fraction of the
/// dataset is held out. Deterministic for a given seed; throws TrainingError if
/// the loss becomes non-finite.
TrainedModel train_toy(const SyntheticDataset& dataset, const TrainConfig& config, std::uint64_t seed);

double accuracy(const ToyCnn& model, const SyntheticDataset& dataset, std::size_t begin, std::size_t end);

}  // namespace sagkit
