#include "azsl/numkit.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "azsl/error.hpp"
#include "azsl/rng.hpp"

namespace azsl::num {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data().data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.data().data(), m.rows(), m.cols()); }

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

double activate(Activation act, double slope, double z) {
    switch (act) {
        case Activation::Identity: return z;
        case Activation::ReLU: return z > 0.0 ? z : 0.0;
        case Activation::LeakyReLU: return z > 0.0 ? z : slope * z;
    }
    return z;
}

double activate_derivative(Activation act, double slope, double z) {
    switch (act) {
        case Activation::Identity: return 1.0;
        case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
        case Activation::LeakyReLU: return z > 0.0 ? 1.0 : slope;
    }
    return 1.0;
}

void check_chain(std::span<const LayerSpec> specs) {
    if (specs.empty()) throw ShapeError("network needs at least one layer");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        if (s.in_dim == 0 || s.out_dim == 0) {
            throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
        }
        if (s.activation == Activation::LeakyReLU && !(s.slope > 0.0 && s.slope < 1.0)) {
            throw ShapeError("layer " + std::to_string(i) + ": LeakyReLU slope must be in (0,1)");
        }
        if (i + 1 < specs.size() && s.out_dim != specs[i + 1].in_dim) {
            throw ShapeError("layer " + std::to_string(i) + " outputs " + std::to_string(s.out_dim) +
                             " but layer " + std::to_string(i + 1) + " expects " +
                             std::to_string(specs[i + 1].in_dim));
        }
    }
}

// Affine map x W + b.
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
    Matrix z = matmul(x, w);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
    return z;
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul " + shape_str(a) + " * " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    if (!out.empty() && a.cols() > 0) view(out).noalias() = view(a) * view(b);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn " + shape_str(a) + "^T * " + shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    if (!out.empty() && a.rows() > 0) view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt " + shape_str(a) + " * " + shape_str(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    if (!out.empty() && a.cols() > 0) view(out).noalias() = view(a) * view(b).transpose();
    return out;
}

Matrix hconcat(const Matrix& left, const Matrix& right) {
    if (left.rows() != right.rows()) {
        throw ShapeError("hconcat " + shape_str(left) + " | " + shape_str(right));
    }
    Matrix out(left.rows(), left.cols() + right.cols());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto dst = out.row(r);
        std::copy(left.row(r).begin(), left.row(r).end(), dst.begin());
        std::copy(right.row(r).begin(), right.row(r).end(), dst.begin() + left.cols());
    }
    return out;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m.rows()) throw ShapeError("row index out of range");
        std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
    }
    return out;
}

void add_scaled(Matrix& acc, const Matrix& x, double scale) {
    if (acc.rows() != x.rows() || acc.cols() != x.cols()) {
        throw ShapeError("add_scaled " + shape_str(acc) + " += " + shape_str(x));
    }
    auto a = acc.data();
    auto b = x.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Networks

std::string_view to_string(Role role) {
    switch (role) {
        case Role::Teacher: return "teacher";
        case Role::Student: return "student";
        case Role::Generator: return "generator";
        case Role::Classifier: return "classifier";
    }
    return "unknown";
}

std::string_view to_string(Activation act) {
    switch (act) {
        case Activation::Identity: return "identity";
        case Activation::ReLU: return "relu";
        case Activation::LeakyReLU: return "leaky_relu";
    }
    return "unknown";
}

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.in_dim * l.out_dim + l.out_dim;
    return n;
}

bool MlpParams::same_values(const MlpParams& other) const {
    return role == other.role && layers == other.layers && weights == other.weights &&
           biases == other.biases && seed == other.seed;
}

std::vector<LayerSpec> chain_specs(std::span<const std::size_t> widths, Activation output,
                                   double slope) {
    if (widths.size() < 2) throw ShapeError("need at least input and output widths");
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        specs.push_back({widths[i], widths[i + 1], last ? output : Activation::LeakyReLU, slope});
    }
    return specs;
}

MlpParams mlp_init(std::span<const LayerSpec> specs, Role role, std::uint64_t seed) {
    check_chain(specs);
    if (role == Role::Generator && specs.back().activation != Activation::ReLU) {
        throw ShapeError("generator output layer must be ReLU");
    }
    MlpParams p;
    p.role = role;
    p.seed = seed;
    p.layers.assign(specs.begin(), specs.end());
    Rng rng(seed);
    for (const auto& s : specs) {
        const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
        Matrix w(s.in_dim, s.out_dim);
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(s.out_dim, 0.0);
    }
    return p;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
    MlpGrads g;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        g.weights.emplace_back(params.weights[i].rows(), params.weights[i].cols());
        g.biases.emplace_back(params.biases[i].size(), 0.0);
    }
    return g;
}

std::size_t MlpGrads::size() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
}

ForwardResult mlp_forward(const MlpParams& params, const Matrix& batch) {
    if (batch.cols() != params.input_dim()) {
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(params.input_dim()));
    }
    ForwardResult res;
    res.cache.layers = params.layers;
    res.cache.params_version = params.version;
    Matrix x = batch;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& spec = params.layers[i];
        Matrix z = affine(x, params.weights[i], params.biases[i]);
        Matrix a = z;
        for (double& v : a.data()) v = activate(spec.activation, spec.slope, v);
        res.cache.inputs.push_back(std::move(x));
        res.cache.pre_activations.push_back(std::move(z));
        x = std::move(a);
    }
    res.output = std::move(x);
    return res;
}

Matrix mlp_apply(const MlpParams& params, const Matrix& batch) {
    if (batch.cols() != params.input_dim()) {
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(params.input_dim()));
    }
    Matrix x = batch;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& spec = params.layers[i];
        x = affine(x, params.weights[i], params.biases[i]);
        for (double& v : x.data()) v = activate(spec.activation, spec.slope, v);
    }
    return x;
}

BackwardResult mlp_backward(const MlpParams& params, const ForwardCache& cache,
                            const Matrix& upstream) {
    if (cache.layers != params.layers || cache.inputs.size() != params.layers.size()) {
        throw ShapeError("backward: cache was produced by a different network");
    }
    if (cache.params_version != params.version) {
        throw ShapeError("backward: stale cache (parameters changed since forward)");
    }
    const Matrix& last_z = cache.pre_activations.back();
    if (upstream.rows() != last_z.rows() || upstream.cols() != last_z.cols()) {
        throw ShapeError("backward: upstream gradient " + shape_str(upstream) +
                         " does not match output " + shape_str(last_z));
    }
    BackwardResult res;
    res.params = MlpGrads::zeros_like(params);
    Matrix grad = upstream;
    for (std::size_t k = params.layers.size(); k-- > 0;) {
        const auto& spec = params.layers[k];
        const Matrix& z = cache.pre_activations[k];
        auto g = grad.data();
        auto zs = z.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] *= activate_derivative(spec.activation, spec.slope, zs[i]);
        }
        res.params.weights[k] = matmul_tn(cache.inputs[k], grad);
        auto& db = res.params.biases[k];
        for (std::size_t r = 0; r < grad.rows(); ++r) {
            auto row = grad.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
        }
        grad = matmul_nt(grad, params.weights[k]);
    }
    res.input = std::move(grad);
    return res;
}

// ---------------------------------------------------------------------------
// Losses

Matrix softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto dst = out.row(r);
        const double shift = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - shift);
            sum += dst[c];
        }
        for (double& v : dst) v /= sum;
    }
    return out;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    if (probs.rows() != grad_probs.rows() || probs.cols() != grad_probs.cols()) {
        throw ShapeError("softmax_backward shape mismatch");
    }
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto p = probs.row(r);
        auto g = grad_probs.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
        auto dst = out.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) dst[c] = p[c] * (g[c] - dot);
    }
    return out;
}

namespace {

void check_labels(const Matrix& m, std::span<const std::size_t> labels) {
    if (labels.size() != m.rows()) {
        throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m.rows()) + " rows");
    }
    if (m.rows() == 0) throw ShapeError("cross-entropy: empty batch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= m.cols()) {
            throw ShapeError("cross-entropy: label " + std::to_string(labels[i]) + " at row " +
                             std::to_string(i) + " outside " + std::to_string(m.cols()) +
                             " classes");
        }
    }
}

}  // namespace

LossResult loss_ce(const Matrix& probs, std::span<const std::size_t> labels) {
    check_labels(probs, labels);
    const double n = static_cast<double>(probs.rows());
    LossResult res{0.0, probs};
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const double p = std::max(probs(r, labels[r]), std::numeric_limits<double>::min());
        res.value -= std::log(p);
        res.grad(r, labels[r]) -= 1.0;
    }
    res.value /= n;
    for (double& v : res.grad.data()) v /= n;
    return res;
}

LossResult loss_ce_logits(const Matrix& logits, std::span<const std::size_t> labels) {
    check_labels(logits, labels);
    const double n = static_cast<double>(logits.rows());
    LossResult res{0.0, softmax(logits)};
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        const double shift = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - shift);
        res.value += shift + std::log(sum) - row[labels[r]];
        res.grad(r, labels[r]) -= 1.0;
    }
    res.value /= n;
    for (double& v : res.grad.data()) v /= n;
    return res;
}

LossResult loss_mse(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("mse: " + shape_str(pred) + " vs " + shape_str(target));
    }
    if (pred.empty()) throw ShapeError("mse: empty input");
    const double n = static_cast<double>(pred.size());
    LossResult res{0.0, Matrix(pred.rows(), pred.cols())};
    auto p = pred.data();
    auto t = target.data();
    auto g = res.grad.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        res.value += d * d;
        g[i] = 2.0 * d / n;
    }
    res.value /= n;
    return res;
}

// ---------------------------------------------------------------------------
// Adam

AdamState adam_init(const MlpParams& params, AdamConfig config) {
    return AdamState{config, MlpGrads::zeros_like(params), MlpGrads::zeros_like(params), 0};
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
    const std::size_t n = params.layers.size();
    if (grads.weights.size() != n || grads.biases.size() != n ||
        state.first_moment.weights.size() != n) {
        throw ShapeError("adam: layer count mismatch");
    }
    state.step += 1;
    const auto& cfg = state.config;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);

    auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                      std::span<double> v) {
        if (p.size() != g.size() || p.size() != m.size()) throw ShapeError("adam: shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    };
    for (std::size_t k = 0; k < n; ++k) {
        update(params.weights[k].data(), grads.weights[k].data(),
               state.first_moment.weights[k].data(), state.second_moment.weights[k].data());
        update(params.biases[k], grads.biases[k], state.first_moment.biases[k],
               state.second_moment.biases[k]);
    }
    params.version += 1;
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

// Flat addressing over (layer, weight|bias, index).
struct Coord {
    std::size_t layer;
    bool bias;
    std::size_t index;
};

std::vector<Coord> sample_coords(const MlpParams& p, std::size_t samples, std::uint64_t seed) {
    std::vector<Coord> all;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        for (std::size_t i = 0; i < p.weights[k].size(); ++i) all.push_back({k, false, i});
        for (std::size_t i = 0; i < p.biases[k].size(); ++i) all.push_back({k, true, i});
    }
    if (all.size() <= samples) return all;
    Rng rng(seed);
    rng.shuffle(std::span(all));
    all.resize(samples);
    return all;
}

double& at(MlpParams& p, const Coord& c) {
    return c.bias ? p.biases[c.layer][c.index] : p.weights[c.layer].data()[c.index];
}

double at(const MlpGrads& g, const Coord& c) {
    return c.bias ? g.biases[c.layer][c.index] : g.weights[c.layer].data()[c.index];
}

}  // namespace

double grad_check(const MlpParams& params, const LossClosure& loss, GradCheckOptions opts) {
    MlpGrads analytic;
    loss(params, &analytic);
    MlpParams probe = params;
    double worst = 0.0;
    for (const auto& c : sample_coords(params, opts.samples, opts.seed)) {
        double& slot = at(probe, c);
        const double orig = slot;
        slot = orig + opts.epsilon;
        const double up = loss(probe, nullptr);
        slot = orig - opts.epsilon;
        const double down = loss(probe, nullptr);
        slot = orig;
        const double numeric = (up - down) / (2.0 * opts.epsilon);
        worst = std::max(worst, relative_error(at(analytic, c), numeric, opts.floor));
    }
    return worst;
}

double grad_check_input(const Matrix& x, const Matrix& analytic,
                        const std::function<double(const Matrix&)>& loss,
                        GradCheckOptions opts) {
    if (x.rows() != analytic.rows() || x.cols() != analytic.cols()) {
        throw ShapeError("grad_check_input: analytic gradient shape mismatch");
    }
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opts.samples) {
        Rng rng(opts.seed);
        rng.shuffle(std::span(idx));
        idx.resize(opts.samples);
    }
    Matrix probe = x;
    double worst = 0.0;
    for (std::size_t i : idx) {
        double& slot = probe.data()[i];
        const double orig = slot;
        slot = orig + opts.epsilon;
        const double up = loss(probe);
        slot = orig - opts.epsilon;
        const double down = loss(probe);
        slot = orig;
        const double numeric = (up - down) / (2.0 * opts.epsilon);
        worst = std::max(worst, relative_error(analytic.data()[i], numeric, opts.floor));
    }
    return worst;
}

}  // namespace azsl::num
