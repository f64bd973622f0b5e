#include "azsl/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "azsl/error.hpp"
#include "azsl/rng.hpp"

namespace azsl::server {

using num::Matrix;

std::ptrdiff_t TeacherModel::unit_of(ClassId c) const {
    auto it = std::lower_bound(class_space.begin(), class_space.end(), c);
    if (it == class_space.end() || *it != c) return -1;
    return it - class_space.begin();
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[best]) best = c;
    }
    return best;
}

}  // namespace

TeacherModel train_teacher(const data::Dataset& dataset, const data::SplitBundle& split,
                           const TeacherConfig& config, std::uint64_t seed) {
    if (split.teacher_train.empty()) throw Error("train_teacher: teacher_train is empty");
    if (config.batch_size == 0 || config.epochs == 0) {
        throw Error("train_teacher: epochs and batch_size must be >= 1");
    }
    TeacherModel t;
    t.mode = split.teacher_mode;
    t.class_space = split.teacher_classes();

    std::vector<std::size_t> rows = split.teacher_train;
    std::vector<std::size_t> local(dataset.size(), 0);
    for (std::size_t r : rows) {
        const auto u = t.unit_of(dataset.labels[r]);
        if (u < 0) {
            throw Error("train_teacher: row " + std::to_string(r) + " has class " +
                        std::to_string(dataset.labels[r]) + " outside the teacher's class space");
        }
        local[r] = static_cast<std::size_t>(u);
    }

    std::vector<std::size_t> widths{dataset.feature_dim()};
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(t.class_space.size());
    const auto specs = num::chain_specs(widths, num::Activation::Identity);
    t.params = num::mlp_init(specs, num::Role::Teacher, derive_seed(seed, 1));
    auto adam = num::adam_init(t.params, {.learning_rate = config.learning_rate});

    Rng order(derive_seed(seed, 2));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        order.shuffle(std::span(rows));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < rows.size(); start += config.batch_size) {
            const std::size_t end = std::min(rows.size(), start + config.batch_size);
            std::span<const std::size_t> idx(rows.data() + start, end - start);
            Matrix x = num::select_rows(dataset.features, idx);
            std::vector<std::size_t> y;
            for (std::size_t r : idx) y.push_back(local[r]);
            auto fwd = num::mlp_forward(t.params, x);
            auto ce = num::loss_ce_logits(fwd.output, y);
            auto back = num::mlp_backward(t.params, fwd.cache, ce.grad);
            num::adam_step(t.params, back.params, adam);
            loss_sum += ce.value * static_cast<double>(idx.size());
        }
        t.loss_trace.push_back(loss_sum / static_cast<double>(rows.size()));
    }

    std::sort(rows.begin(), rows.end());
    const Matrix logits = num::mlp_apply(t.params, num::select_rows(dataset.features, rows));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (argmax_row(logits.row(i)) == local[rows[i]]) ++correct;
    }
    t.train_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
    return t;
}

std::vector<ClassId> teacher_predict(const TeacherModel& teacher, const Matrix& features) {
    const Matrix logits = num::mlp_apply(teacher.params, features);
    std::vector<ClassId> out;
    out.reserve(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        out.push_back(teacher.class_space[argmax_row(logits.row(r))]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regularizers

std::string_view to_string(RegularizerKind kind) {
    switch (kind) {
        case RegularizerKind::None: return "none";
        case RegularizerKind::GaussianKL: return "kl";
        case RegularizerKind::RbfMMD: return "mmd";
    }
    return "unknown";
}

RegularizerKind parse_regularizer(std::string_view name) {
    if (name == "none" || name == "ce") return RegularizerKind::None;
    if (name == "kl" || name == "gaussian_kl") return RegularizerKind::GaussianKL;
    if (name == "mmd" || name == "rbf_mmd") return RegularizerKind::RbfMMD;
    throw Error("unknown regularizer kind '" + std::string(name) + "'");
}

double diagonal_gaussian_kl(std::span<const double> mu1, std::span<const double> var1,
                            std::span<const double> mu2, std::span<const double> var2) {
    double kl = 0.0;
    for (std::size_t d = 0; d < mu1.size(); ++d) {
        const double diff = mu1[d] - mu2[d];
        kl += 0.5 * std::log(var2[d] / var1[d]) + (var1[d] + diff * diff) / (2.0 * var2[d]) - 0.5;
    }
    return kl;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double mean_kernel(const Matrix& x, const Matrix& y, double bandwidth) {
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < y.rows(); ++j) s += std::exp(-sq_dist(x.row(i), y.row(j)) * inv);
    }
    return s / static_cast<double>(x.rows() * y.rows());
}

GaussianStats gaussian_stats(const Matrix& x) {
    const std::size_t n = x.rows(), d = x.cols();
    GaussianStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(r, j);
    }
    for (double& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(r, j) - s.mean[j];
            s.variance[j] += c * c;
        }
    }
    for (double& v : s.variance) v = std::max(v / static_cast<double>(n), kVarianceFloor);
    return s;
}

MmdReference make_reference(Matrix rows) {
    MmdReference ref;
    ref.bandwidth = median_heuristic_bandwidth(rows);
    ref.self_kernel = mean_kernel(rows, rows, ref.bandwidth);
    ref.rows = std::move(rows);
    return ref;
}

Matrix subsample(const Matrix& features, std::vector<std::size_t> rows, Rng& rng) {
    if (rows.size() > kMmdReferenceCap) {
        rng.shuffle(std::span(rows));
        rows.resize(kMmdReferenceCap);
        std::sort(rows.begin(), rows.end());
    }
    return num::select_rows(features, rows);
}

// Value and batch gradient of the per-class KL term.
double kl_term(const Matrix& x, const GaussianStats& real, Matrix& grad_out) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> mean(d, 0.0), raw_var(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += x(r, j);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(r, j) - mean[j];
            raw_var[j] += c * c;
        }
    }
    std::vector<double> var(d);
    for (std::size_t j = 0; j < d; ++j) {
        raw_var[j] /= static_cast<double>(n);
        var[j] = std::max(raw_var[j], kVarianceFloor);
    }
    const double value = diagonal_gaussian_kl(mean, var, real.mean, real.variance);

    grad_out = Matrix(n, d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
        const double d_mean = (mean[j] - real.mean[j]) / real.variance[j];
        const double d_var =
            raw_var[j] >= kVarianceFloor ? 0.5 / real.variance[j] - 0.5 / var[j] : 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            grad_out(r, j) = inv_n * (d_mean + 2.0 * d_var * (x(r, j) - mean[j]));
        }
    }
    return value;
}

// Value and batch gradient of the per-class biased MMD^2 term.
double mmd_term(const Matrix& x, const MmdReference& ref, Matrix& grad_out) {
    const std::size_t n = x.rows(), m = ref.rows.rows(), d = x.cols();
    const double h2 = ref.bandwidth * ref.bandwidth;
    const double inv = 1.0 / (2.0 * h2);
    grad_out = Matrix(n, d);
    double kxx = 0.0, kxy = 0.0;
    const double wxx = 2.0 / static_cast<double>(n * n);
    const double wxy = 2.0 / static_cast<double>(n * m);
    for (std::size_t a = 0; a < n; ++a) {
        auto xa = x.row(a);
        auto g = grad_out.row(a);
        for (std::size_t j = 0; j < n; ++j) {
            auto xj = x.row(j);
            const double k = std::exp(-sq_dist(xa, xj) * inv);
            kxx += k;
            // d k(x_a, x_j) / d x_a = -k (x_a - x_j) / h^2
            for (std::size_t t = 0; t < d; ++t) g[t] -= wxx * k * (xa[t] - xj[t]) / h2;
        }
        for (std::size_t j = 0; j < m; ++j) {
            auto yj = ref.rows.row(j);
            const double k = std::exp(-sq_dist(xa, yj) * inv);
            kxy += k;
            for (std::size_t t = 0; t < d; ++t) g[t] += wxy * k * (xa[t] - yj[t]) / h2;
        }
    }
    kxx /= static_cast<double>(n * n);
    kxy /= static_cast<double>(n * m);
    return kxx + ref.self_kernel - 2.0 * kxy;
}

}  // namespace

double biased_mmd2(const Matrix& x, const Matrix& y, double bandwidth) {
    return mean_kernel(x, x, bandwidth) + mean_kernel(y, y, bandwidth) -
           2.0 * mean_kernel(x, y, bandwidth);
}

double median_heuristic_bandwidth(const Matrix& rows) {
    std::vector<double> dists;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = i + 1; j < rows.rows(); ++j) {
            dists.push_back(std::sqrt(sq_dist(rows.row(i), rows.row(j))));
        }
    }
    if (dists.empty()) return 1.0;
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    return std::max(*mid, 1e-3);
}

RegularizerState fit_regularizer(const data::Dataset& dataset, const data::SplitBundle& split,
                                 RegularizerKind kind, double alpha, std::uint64_t seed) {
    if (!(alpha >= 0.0)) throw Error("fit_regularizer: alpha must be >= 0");
    if (split.teacher_train.empty()) throw Error("fit_regularizer: teacher_train is empty");
    RegularizerState s;
    s.kind = kind;
    s.alpha = alpha;
    s.feature_dim = dataset.feature_dim();
    if (kind == RegularizerKind::None) return s;

    std::map<ClassId, std::vector<std::size_t>> rows_of;
    for (std::size_t r : split.teacher_train) rows_of[dataset.labels[r]].push_back(r);

    if (kind == RegularizerKind::GaussianKL) {
        s.global_stats = gaussian_stats(num::select_rows(dataset.features, split.teacher_train));
        for (const auto& [c, rows] : rows_of) {
            if (rows.size() >= 2) s.class_stats[c] = gaussian_stats(num::select_rows(dataset.features, rows));
        }
    } else if (kind == RegularizerKind::RbfMMD) {
        Rng rng(seed);
        s.global_reference = make_reference(subsample(dataset.features, split.teacher_train, rng));
        for (const auto& [c, rows] : rows_of) {
            s.class_reference[c] = make_reference(subsample(dataset.features, rows, rng));
        }
    } else {
        throw Error("fit_regularizer: unknown regularizer kind");
    }
    return s;
}

RegularizerValue reg_value_grad(const RegularizerState& state, const Matrix& batch,
                                std::span<const ClassId> cond_labels) {
    if (batch.rows() != cond_labels.size()) {
        throw ShapeError("regularizer: batch rows and label count differ");
    }
    RegularizerValue out{0.0, Matrix(batch.rows(), batch.cols())};
    if (state.kind == RegularizerKind::None || batch.rows() == 0) return out;
    if (batch.cols() != state.feature_dim) {
        throw ShapeError("regularizer: batch has " + std::to_string(batch.cols()) +
                         " columns, state expects " + std::to_string(state.feature_dim));
    }

    std::map<ClassId, std::vector<std::size_t>> rows_of;
    for (std::size_t r = 0; r < cond_labels.size(); ++r) rows_of[cond_labels[r]].push_back(r);
    const double inv_k = 1.0 / static_cast<double>(rows_of.size());

    for (const auto& [c, rows] : rows_of) {
        const Matrix x = num::select_rows(batch, rows);
        Matrix g;
        double v = 0.0;
        if (state.kind == RegularizerKind::GaussianKL) {
            auto it = state.class_stats.find(c);
            if (it == state.class_stats.end() && !state.allow_global_fallback) {
                throw Error("regularizer: no statistics for class " + std::to_string(c));
            }
            v = kl_term(x, it != state.class_stats.end() ? it->second : state.global_stats, g);
        } else {
            auto it = state.class_reference.find(c);
            if (it == state.class_reference.end() && !state.allow_global_fallback) {
                throw Error("regularizer: no reference sample for class " + std::to_string(c));
            }
            v = mmd_term(x, it != state.class_reference.end() ? it->second : state.global_reference, g);
        }
        out.value += inv_k * v;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto src = g.row(i);
            auto dst = out.grad.row(rows[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] = inv_k * src[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feedback

wire::FeedbackResponse compute_feedback(const TeacherModel& teacher, const RegularizerState& reg,
                                        const wire::FeedbackRequest& req) {
    using wire::Field;
    if (req.scenario == wire::Scenario::BlackBox && req.want_ce_grad) {
        throw ProtocolError(wire::kProtocolViolation,
                            "black-box clients may not request gradients through the teacher");
    }
    const std::size_t d_x = teacher.params.input_dim();
    if (req.batch.rows() == 0) throw ProtocolError(wire::kInvalidRequest, "empty batch");
    if (req.batch.cols() != d_x) {
        throw ProtocolError(wire::kInvalidRequest, "batch has " + std::to_string(req.batch.cols()) +
                                                       " columns, teacher expects " + std::to_string(d_x));
    }
    if (req.cond_labels.size() != req.batch.rows()) {
        throw ProtocolError(wire::kInvalidRequest, "label count does not match batch rows");
    }
    if (!req.batch.all_finite()) throw ProtocolError(wire::kInvalidRequest, "non-finite batch value");
    std::vector<std::size_t> units;
    units.reserve(req.cond_labels.size());
    for (ClassId c : req.cond_labels) {
        const auto u = teacher.unit_of(c);
        if (u < 0) {
            throw ProtocolError(wire::kInvalidRequest,
                                "class " + std::to_string(c) + " is outside the teacher's class space");
        }
        units.push_back(static_cast<std::size_t>(u));
    }

    wire::FeedbackResponse resp;
    auto fwd = num::mlp_forward(teacher.params, req.batch);
    if (req.want_softmax) {
        resp.softmax = num::softmax(fwd.output);
        resp.risk_tags.emplace_back(Field::Softmax, wire::risk_of(Field::Softmax));
    }
    auto r = reg_value_grad(reg, req.batch, req.cond_labels);
    resp.reg_value = r.value;
    resp.reg_grad = std::move(r.grad);
    resp.risk_tags.emplace_back(Field::RegValue, wire::risk_of(Field::RegValue));
    resp.risk_tags.emplace_back(Field::RegGrad, wire::risk_of(Field::RegGrad));
    if (req.scenario == wire::Scenario::WhiteBox && req.want_ce_grad) {
        auto ce = num::loss_ce_logits(fwd.output, units);
        auto back = num::mlp_backward(teacher.params, fwd.cache, ce.grad);
        resp.ce_value = ce.value;
        resp.ce_grad = std::move(back.input);
        resp.risk_tags.emplace_back(Field::CeValue, wire::risk_of(Field::CeValue));
        resp.risk_tags.emplace_back(Field::CeGrad, wire::risk_of(Field::CeGrad));
    }
    return resp;
}

namespace {

wire::Frame answer_frame(const TeacherModel& teacher, const RegularizerState& reg,
                         const wire::Frame& request) {
    try {
        switch (request.kind) {
            case wire::MessageKind::FeedbackRequest: {
                const auto req = wire::decode_feedback_request(request.payload);
                return {wire::MessageKind::FeedbackResponse,
                        wire::encode(compute_feedback(teacher, reg, req))};
            }
            case wire::MessageKind::WeightRequest: {
                const auto req = wire::decode_weight_request(request.payload);
                if (req.scenario == wire::Scenario::BlackBox) {
                    return wire::make_error_frame(wire::kProtocolViolation,
                                                  "teacher weights are not shared in the black-box scenario");
                }
                return {wire::MessageKind::WeightBlob, wire::encode_weights(teacher.params)};
            }
            default:
                return wire::make_error_frame(
                    wire::kProtocolViolation,
                    "unexpected " + std::string(wire::to_string(request.kind)) + " frame from client");
        }
    } catch (const ProtocolError& e) {
        return wire::make_error_frame(e.code(), e.what());
    } catch (const std::exception& e) {
        return wire::make_error_frame(wire::kInternalError, e.what());
    }
}

}  // namespace

TeacherServer::TeacherServer(TeacherModel teacher, RegularizerState reg)
    : teacher_(std::move(teacher)), reg_(std::move(reg)) {}

wire::Frame TeacherServer::answer(const wire::Frame& request) const {
    return answer_frame(teacher_, reg_, request);
}

wire::Frame TeacherServer::handle(const wire::Frame& request, RiskLog& log) const {
    wire::Frame response = answer(request);
    log.record_exchange(request, response);
    return response;
}

wire::FeedbackResponse feedback(const TeacherModel& teacher, const RegularizerState& reg,
                                const wire::FeedbackRequest& request, RiskLog& log) {
    const wire::Frame req{wire::MessageKind::FeedbackRequest, wire::encode(request)};
    const wire::Frame resp = answer_frame(teacher, reg, req);
    log.record_exchange(req, resp);
    if (resp.kind == wire::MessageKind::Error) {
        const auto err = wire::decode_error(resp.payload);
        throw ProtocolError(err.code, err.message);
    }
    return wire::decode_feedback_response(resp.payload);
}

std::vector<std::uint8_t> export_weights(const TeacherModel& teacher, wire::Scenario scenario,
                                         RiskLog& log) {
    const wire::Frame req{wire::MessageKind::WeightRequest, wire::encode(wire::WeightRequest{scenario})};
    const wire::Frame resp = answer_frame(teacher, RegularizerState{}, req);
    log.record_exchange(req, resp);
    if (resp.kind == wire::MessageKind::Error) {
        const auto err = wire::decode_error(resp.payload);
        throw ProtocolError(err.code, err.message);
    }
    return resp.payload;
}

}  // namespace azsl::server
