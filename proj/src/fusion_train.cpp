#include "groundcount/fusion_train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace groundcount::fusion {

using Eigen::Index;

namespace {

struct Scene {
    FusionInputs inputs;
    std::vector<int> labels;
};

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

std::vector<Scene> make_dataset(const FusionDims& dims, const ToyTask& task) {
    if (task.scenes <= 0 || task.patches <= 0) throw std::invalid_argument("toy task must be non-empty");
    std::mt19937_64 rng(task.seed);

    Matrix prototypes = gaussian(kGridClasses, dims.d_cnn, rng);
    for (Index k = 0; k < prototypes.rows(); ++k)
        prototypes.row(k) *= task.signal / prototypes.row(k).norm();

    std::uniform_int_distribution<int> cell(0, kGridClasses - 1);
    std::vector<Scene> scenes(static_cast<std::size_t>(task.scenes));
    for (auto& s : scenes) {
        s.labels.resize(static_cast<std::size_t>(task.patches));
        for (auto& y : s.labels) y = cell(rng);
        s.inputs.p = gaussian(task.patches, dims.d_vit, rng);
        s.inputs.c = gaussian(task.patches, dims.d_cnn, rng, task.noise);
        for (Index i = 0; i < task.patches; ++i)
            s.inputs.c.row(i) += prototypes.row(s.labels[static_cast<std::size_t>(i)]);
        s.inputs.g = s.inputs.c.colwise().mean().transpose();
    }

    if (task.shuffle_labels) {
        std::vector<int> all;
        for (const auto& s : scenes) all.insert(all.end(), s.labels.begin(), s.labels.end());
        std::shuffle(all.begin(), all.end(), rng);
        auto it = all.begin();
        for (auto& s : scenes)
            for (auto& y : s.labels) y = *it++;
    }
    return scenes;
}

struct Head {
    Matrix w;  // classes x d_out
    Vector b;  // classes
};

// Mean cross-entropy over every patch; fills gradients when requested.
double loss_and_grads(const std::vector<Scene>& data, const FusionParams& params, const Head& head,
                      FusionParams* dparams, Head* dhead) {
    std::size_t total = 0;
    for (const auto& s : data) total += s.labels.size();
    const double inv_total = 1.0 / static_cast<double>(total);

    double loss = 0.0;
    for (const auto& s : data) {
        const FusionOutput fwd = fuse_forward(s.inputs, params);
        Matrix logits = fwd.h * head.w.transpose();
        logits.rowwise() += head.b.transpose();

        Matrix dlogits(logits.rows(), logits.cols());
        for (Index i = 0; i < logits.rows(); ++i) {
            const double m = logits.row(i).maxCoeff();
            const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
            const double z = e.sum();
            const int y = s.labels[static_cast<std::size_t>(i)];
            loss -= (logits(i, y) - m - std::log(z)) * inv_total;
            dlogits.row(i) = e / z * inv_total;
            dlogits(i, y) -= inv_total;
        }
        if (!dparams) continue;

        dhead->w.noalias() += dlogits.transpose() * fwd.h;
        dhead->b += dlogits.colwise().sum().transpose();
        const Matrix upstream = dlogits * head.w;
        const FusionGrads grads = fuse_backward(s.inputs, params, fwd, upstream);
        for_each_tensor_pair(*dparams, grads.params,
                             [](const char*, auto& acc, const auto& g) { acc += g; });
    }
    return loss;
}

}  // namespace

TrainingDiverged::TrainingDiverged(int step)
    : std::runtime_error("training diverged (non-finite loss) at step " + std::to_string(step)),
      step_(step) {}

double cosine_learning_rate(double base_lr, double min_lr, int step, int total) {
    if (total <= 0) return base_lr;
    const double progress = static_cast<double>(std::clamp(step, 0, total)) / total;
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

LossCurve toy_train(const FusionDims& dims, const ToyTask& task, const TrainConfig& config) {
    dims.validate();
    if (config.steps < 0) throw std::invalid_argument("steps must be >= 0");
    const auto data = make_dataset(dims, task);

    FusionParams params = FusionParams::init(dims, config.seed);
    Head head{Matrix::Zero(kGridClasses, dims.d_out), Vector::Zero(kGridClasses)};

    LossCurve curve;
    curve.loss.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 0; step < config.steps; ++step) {
        FusionParams dparams = FusionParams::zeros(dims);
        Head dhead{Matrix::Zero(kGridClasses, dims.d_out), Vector::Zero(kGridClasses)};
        double loss = 0.0;
        try {
            loss = loss_and_grads(data, params, head, &dparams, &dhead);
        } catch (const NonFiniteError&) {
            throw TrainingDiverged(step);
        }
        if (!std::isfinite(loss)) throw TrainingDiverged(step);

        const double lr = cosine_learning_rate(config.learning_rate, config.final_learning_rate,
                                               step, config.steps);
        curve.loss.push_back(loss);
        curve.learning_rate.push_back(lr);

        for_each_tensor_pair(params, dparams, [lr](const char*, auto& w, const auto& g) { w -= lr * g; });
        head.w -= lr * dhead.w;
        head.b -= lr * dhead.b;
    }
    try {
        curve.final_loss = loss_and_grads(data, params, head, nullptr, nullptr);
    } catch (const NonFiniteError&) {
        throw TrainingDiverged(config.steps);
    }
    if (!std::isfinite(curve.final_loss)) throw TrainingDiverged(config.steps);
    return curve;
}

double GradCheckReport::worst_relative_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.relative_error);
    return worst;
}

GradCheckReport gradient_check(const FusionDims& dims, std::uint64_t seed, int patches, double step) {
    dims.validate();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    FusionInputs in{gaussian(patches, dims.d_vit, rng), gaussian(patches, dims.d_cnn, rng),
                    gaussian(dims.d_cnn, 1, rng)};
    FusionParams params = FusionParams::init(dims, seed);
    const Matrix upstream = gaussian(patches, dims.d_out, rng);

    auto loss = [&] { return fuse_forward_serial(in, params).h.cwiseProduct(upstream).sum(); };
    const FusionOutput fwd = fuse_forward_serial(in, params);
    const FusionGrads analytic = fuse_backward_serial(in, params, fwd, upstream);

    GradCheckReport report;
    auto check = [&](const std::string& name, auto& tensor, const auto& grad) {
        GradCheckEntry e{name};
        for (Index j = 0; j < tensor.cols(); ++j) {
            for (Index i = 0; i < tensor.rows(); ++i) {
                const double saved = tensor(i, j);
                tensor(i, j) = saved + step;
                const double up = loss();
                tensor(i, j) = saved - step;
                const double down = loss();
                tensor(i, j) = saved;
                const double fd = (up - down) / (2 * step);
                e.max_abs_error = std::max(e.max_abs_error, std::abs(fd - grad(i, j)));
                e.max_abs_grad = std::max(e.max_abs_grad, std::abs(fd));
            }
        }
        e.relative_error = e.max_abs_error / (e.max_abs_grad + 1e-12);
        report.entries.push_back(std::move(e));
    };
    for_each_tensor_pair(params, analytic.params,
                         [&](const char* name, auto& t, const auto& g) { check(name, t, g); });
    check("input_p", in.p, analytic.p);
    check("input_c", in.c, analytic.c);
    check("input_g", in.g, analytic.g);
    return report;
}

}  // namespace groundcount::fusion
