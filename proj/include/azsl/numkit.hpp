#pragma once

// Dense numeric kit: row-major matrices, multilayer perceptrons with manual
// backpropagation, losses, Adam, and finite-difference gradient checking.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace azsl::num {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    bool all_finite() const noexcept;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);       // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);    // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);    // a * b^T
Matrix hconcat(const Matrix& left, const Matrix& right);
Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
void add_scaled(Matrix& acc, const Matrix& x, double scale);  // acc += scale * x
double frobenius_norm(const Matrix& m);

// ---------------------------------------------------------------------------
// Networks

enum class Activation : std::uint32_t { Identity = 0, ReLU = 1, LeakyReLU = 2 };

inline constexpr double kDefaultLeakySlope = 0.2;

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::Identity;
    double slope = kDefaultLeakySlope;  // only meaningful for LeakyReLU

    bool operator==(const LayerSpec&) const = default;
};

enum class Role : std::uint32_t { Teacher = 0, Student = 1, Generator = 2, Classifier = 3 };

std::string_view to_string(Role role);
std::string_view to_string(Activation act);

// Weights are stored in x W + b orientation: weights[i] is in_dim x out_dim.
struct MlpParams {
    Role role = Role::Teacher;
    std::vector<LayerSpec> layers;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::uint64_t seed = 0;
    // Bumped by every optimizer step; forward caches remember it so a
    // backward pass against updated parameters is rejected.
    std::uint64_t version = 0;

    std::size_t input_dim() const { return layers.front().in_dim; }
    std::size_t output_dim() const { return layers.back().out_dim; }
    std::size_t parameter_count() const;

    // Value equality over role, architecture and parameters (ignores version).
    bool same_values(const MlpParams& other) const;
};

// Hidden layers use LeakyReLU; the output layer uses `output`.
std::vector<LayerSpec> chain_specs(std::span<const std::size_t> widths, Activation output,
                                   double slope = kDefaultLeakySlope);

// Scaled-uniform init with bound sqrt(6 / (in + out)), zero biases.
// Throws ShapeError when the specs do not chain, and for a Generator whose
// output activation is not ReLU.
MlpParams mlp_init(std::span<const LayerSpec> specs, Role role, std::uint64_t seed);

struct MlpGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    static MlpGrads zeros_like(const MlpParams& params);
    std::size_t size() const;
};

struct ForwardCache {
    std::vector<Matrix> inputs;           // input to each layer
    std::vector<Matrix> pre_activations;  // x W + b for each layer
    std::vector<LayerSpec> layers;
    std::uint64_t params_version = 0;
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

ForwardResult mlp_forward(const MlpParams& params, const Matrix& batch);

// Forward pass without recording activations.
Matrix mlp_apply(const MlpParams& params, const Matrix& batch);

struct BackwardResult {
    MlpGrads params;
    Matrix input;
};

BackwardResult mlp_backward(const MlpParams& params, const ForwardCache& cache,
                            const Matrix& upstream);

// ---------------------------------------------------------------------------
// Losses

Matrix softmax(const Matrix& logits);

// Pulls a gradient w.r.t. softmax probabilities back to the logits.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

struct LossResult {
    double value = 0.0;
    Matrix grad;
};

// Mean cross-entropy given probabilities; grad is w.r.t. the logits that
// produced them: (probs - onehot) / rows.
LossResult loss_ce(const Matrix& probs, std::span<const std::size_t> labels);

// Same loss evaluated from logits with log-sum-exp, finite for any finite input.
LossResult loss_ce_logits(const Matrix& logits, std::span<const std::size_t> labels);

// Mean squared elementwise difference; grad w.r.t. pred.
LossResult loss_mse(const Matrix& pred, const Matrix& target);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    MlpGrads first_moment;
    MlpGrads second_moment;
    std::uint64_t step = 0;
};

AdamState adam_init(const MlpParams& params, AdamConfig config = {});
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckOptions {
    double epsilon = 1e-5;
    std::size_t samples = 200;
    std::uint64_t seed = 0x5eed;
    // Denominator floor so coordinates with vanishing gradient do not turn
    // round-off into large relative errors.
    double floor = 1e-6;
};

// Evaluates the loss at `params`; fills `grads` with analytic gradients when non-null.
using LossClosure = std::function<double(const MlpParams& params, MlpGrads* grads)>;

// Max relative error |a - n| / max(|a|, |n|, floor) between analytic and
// central-difference gradients over a random subsample of parameters.
double grad_check(const MlpParams& params, const LossClosure& loss, GradCheckOptions opts = {});

// Same comparison for a gradient w.r.t. an input matrix.
double grad_check_input(const Matrix& x, const Matrix& analytic,
                        const std::function<double(const Matrix&)>& loss,
                        GradCheckOptions opts = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace azsl::num
