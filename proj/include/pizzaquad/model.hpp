#pragma once

// One-layer constant-attention ReLU transformer for (a + b) mod p.
//
// The '=' position reads x1 = x0(=) + 1/2 * sum_j W_O^j W_V^j (x0(a) + x0(b)),
// then logits = W_U (x1 + W_out ReLU(W_in x1 + b_in) + b_out) restricted to
// the p residue classes. There are no query/key parameters: the attention
// pattern is fixed at 1/2 on each operand token.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pizzaquad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
    int p = 59;
    int d_model = 128;
    int d_mlp = 512;
    int d_head = 32;
    int n_heads = 4;
    int epochs = 10000;
    double weight_decay = 0.01;
    double learning_rate = 1e-3;
    double train_frac = 0.8;
    std::uint64_t seed = 0;

    int d_vocab() const { return p + 1; }
    static constexpr int n_ctx = 3;
    /// Token id of '='.
    int equals_token() const { return p; }

    /// Throws std::invalid_argument on violated invariants.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// AdamW settings that are not part of the model config.
struct OptimizerSettings {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
};

struct ModelWeights {
    Matrix W_E;               // d_model x d_vocab
    Matrix pos;               // d_model x n_ctx
    std::vector<Matrix> W_V;  // n_heads of d_head x d_model
    std::vector<Matrix> W_O;  // n_heads of d_model x d_head
    Matrix W_in;              // d_mlp x d_model
    Vector b_in;              // d_mlp
    Matrix W_out;             // d_model x d_mlp
    Vector b_out;             // d_model
    Matrix W_U;               // d_vocab x d_model

    static ModelWeights zeros(const ModelConfig& cfg);
    /// Gaussian init with std 1/sqrt(fan_in), biases zero.
    static ModelWeights random(const ModelConfig& cfg, std::uint64_t seed);

    /// Throws std::invalid_argument when a tensor shape disagrees with cfg.
    void check_shapes(const ModelConfig& cfg) const;
    bool all_finite() const;

    /// Combined value-output circuit sum_j W_O^j W_V^j (d_model x d_model).
    Matrix ov_circuit() const;
    /// Neuron-logit map W_U[:p] * W_out (p x d_mlp).
    Matrix neuron_logit_map(int p) const;

    // Flat parameter view used by the optimizer and gradient checks. The order
    // is W_E, pos, W_V..., W_O..., W_in, b_in, W_out, b_out, W_U.
    std::vector<double*> tensors_data();
    std::vector<const double*> tensors_data() const;
    std::vector<Eigen::Index> tensor_sizes() const;
    Eigen::Index parameter_count() const;
    double& coeff(Eigen::Index flat_index);

    ModelWeights zeros_like() const;
    bool operator==(const ModelWeights& other) const;
};

struct Dataset {
    int p = 0;
    std::vector<std::pair<int, int>> train_pairs;
    std::vector<std::pair<int, int>> test_pairs;

    static int label(int p, int a, int b) { return (a + b) % p; }
};

Dataset generate_dataset(const ModelConfig& cfg);
std::vector<std::pair<int, int>> all_pairs(int p);

/// Intermediates captured by forward().
struct Activations {
    Vector x1;    // post-attention residual stream
    Vector pre;   // W_in x1 + b_in
    Vector post;  // ReLU(pre)
    Vector x2;    // x1 + W_out post + b_out
};

struct ForwardResult {
    Vector logits;  // length p
    std::optional<Activations> activations;
};

/// Direct evaluation of the model on one input. Throws std::out_of_range for
/// tokens outside [0, p).
ForwardResult forward(const ModelWeights& w, int p, int a, int b, bool capture = false);

/// Logits for a batch, p x batch.size(). Uses the token-factored evaluation.
Matrix batch_logits(const ModelWeights& w, int p,
                    const std::vector<std::pair<int, int>>& batch);

/// Logits for every (a, b): column a * p + b.
Matrix all_logits(const ModelWeights& w, int p);

struct LossAndGrad {
    double loss = 0.0;
    double accuracy = 0.0;
    ModelWeights grads;
};

/// Mean cross-entropy of the correct residue and its exact gradient.
LossAndGrad loss_and_grad(const ModelWeights& w, int p,
                          const std::vector<std::pair<int, int>>& batch);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalResult evaluate(const ModelWeights& w, int p,
                    const std::vector<std::pair<int, int>>& batch);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainingResult {
    ModelWeights weights;
    std::vector<EpochStats> history;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int epoch, double loss);
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

struct TrainOptions {
    OptimizerSettings optimizer;
    /// Called after each epoch; useful for progress output.
    std::function<void(const EpochStats&)> on_epoch;
    /// Starting point; ModelWeights::random(cfg, cfg.seed) when absent.
    std::optional<ModelWeights> initial;
};

/// Full-batch AdamW. Deterministic for a given config.
TrainingResult train(const ModelConfig& cfg, const TrainOptions& options = {});

// Weights file (JSON text): {"format_version", "config": {...},
// "tensors": [{"name", "shape", "data"}...]} with row-major data.

class WeightsFormatError : public std::runtime_error {
public:
    enum class Kind { Schema, Shape, NonFinite, Io };
    WeightsFormatError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr int kWeightsFormatVersion = 1;

void save_weights(const std::filesystem::path& path, const ModelConfig& cfg,
                  const ModelWeights& w);
std::pair<ModelConfig, ModelWeights> load_weights(const std::filesystem::path& path);

}  // namespace pizzaquad
