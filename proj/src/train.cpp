#include "pizzaquad/model.hpp"

#include <cmath>
#include <sstream>

namespace pizzaquad {

namespace {

std::string divergence_message(int epoch, double loss) {
    std::ostringstream os;
    os << "training diverged at epoch " << epoch << ": loss = " << loss;
    return os.str();
}

// PyTorch-style AdamW: decoupled decay, bias-corrected moments.
class AdamW {
public:
    AdamW(const ModelWeights& shape, double lr, double weight_decay, OptimizerSettings s)
        : lr_(lr), wd_(weight_decay), s_(s), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

    void step(ModelWeights& w, const ModelWeights& g) {
        ++t_;
        const double bc1 = 1.0 - std::pow(s_.beta1, t_);
        const double bc2 = 1.0 - std::pow(s_.beta2, t_);
        auto sizes = w.tensor_sizes();
        auto wd = w.tensors_data();
        auto gd = g.tensors_data();
        auto md = m_.tensors_data();
        auto vd = v_.tensors_data();
        for (std::size_t t = 0; t < wd.size(); ++t) {
            for (Eigen::Index i = 0; i < sizes[t]; ++i) {
                double& x = wd[t][i];
                const double gi = gd[t][i];
                double& m = md[t][i];
                double& v = vd[t][i];
                x *= 1.0 - lr_ * wd_;
                m = s_.beta1 * m + (1.0 - s_.beta1) * gi;
                v = s_.beta2 * v + (1.0 - s_.beta2) * gi * gi;
                x -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + s_.eps);
            }
        }
    }

private:
    double lr_;
    double wd_;
    OptimizerSettings s_;
    ModelWeights m_;
    ModelWeights v_;
    int t_ = 0;
};

}  // namespace

TrainingDiverged::TrainingDiverged(int epoch, double loss)
    : std::runtime_error(divergence_message(epoch, loss)), epoch_(epoch) {}

TrainingResult train(const ModelConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    const Dataset ds = generate_dataset(cfg);
    TrainingResult result;
    result.weights = options.initial ? *options.initial : ModelWeights::random(cfg, cfg.seed);
    result.weights.check_shapes(cfg);
    result.history.reserve(static_cast<std::size_t>(cfg.epochs));
    AdamW opt(result.weights, cfg.learning_rate, cfg.weight_decay, options.optimizer);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Stats describe the weights at the start of the epoch.
        const auto lg = loss_and_grad(result.weights, cfg.p, ds.train_pairs);
        if (!std::isfinite(lg.loss)) throw TrainingDiverged(epoch, lg.loss);
        const auto test = evaluate(result.weights, cfg.p, ds.test_pairs);

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = lg.loss;
        stats.train_accuracy = lg.accuracy;
        stats.test_loss = test.loss;
        stats.test_accuracy = test.accuracy;
        result.history.push_back(stats);

        opt.step(result.weights, lg.grads);
        if (options.on_epoch) options.on_epoch(stats);
    }
    if (!result.weights.all_finite()) throw TrainingDiverged(cfg.epochs, std::nan(""));
    return result;
}

}  // namespace pizzaquad
