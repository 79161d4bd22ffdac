#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "groundcount/fusion.hpp"

namespace groundcount::fusion {

/// Synthetic 9-way grid-cell task: every patch carries a cell label that is
/// encoded in its CNN feature (class prototype + noise); patch embeddings are
/// pure noise. With `shuffle_labels` the labels are permuted across all
/// patches, which breaks the feature/label link.
struct ToyTask {
    int scenes = 48;
    int patches = 9;
    double signal = 1.5;
    double noise = 0.5;
    bool shuffle_labels = false;
    std::uint64_t seed = 7;
};

struct TrainConfig {
    int steps = 200;
    double learning_rate = 0.5;
    double final_learning_rate = 0.0;  // cosine annealing floor
    std::uint64_t seed = 1;            // parameter initialization
};

struct LossCurve {
    std::vector<double> loss;           // mean cross-entropy before each update
    std::vector<double> learning_rate;  // step size used at each update
    double final_loss = 0.0;            // after the last update

    double initial() const { return loss.empty() ? final_loss : loss.front(); }
};

class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(int step);
    int step() const { return step_; }

private:
    int step_;
};

inline constexpr int kGridClasses = 9;

/// base_lr at step 0 decaying along a half cosine to min_lr at `total`.
double cosine_learning_rate(double base_lr, double min_lr, int step, int total);

/// Full-batch gradient descent on the fusion block plus a zero-initialized
/// linear classification head. Throws TrainingDiverged on a non-finite loss.
LossCurve toy_train(const FusionDims& dims, const ToyTask& task, const TrainConfig& config);

/// Central-difference check of fuse_backward against the loss sum(upstream .* h).
struct GradCheckEntry {
    std::string tensor;
    double max_abs_error = 0.0;
    double max_abs_grad = 0.0;
    double relative_error = 0.0;  // max_abs_error / (max_abs_grad + 1e-12)
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_relative_error() const;
};

GradCheckReport gradient_check(const FusionDims& dims, std::uint64_t seed, int patches = 4,
                               double step = 1e-5);

}  // namespace groundcount::fusion
