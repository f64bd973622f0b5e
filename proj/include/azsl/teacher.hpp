#pragma once

// Data-owner side: the teacher network trained on real features, the
// distribution regularizers fitted to those features, and the feedback
// service that answers client uploads without releasing any real row.

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "azsl/datasets.hpp"
#include "azsl/numkit.hpp"
#include "azsl/protocol.hpp"
#include "azsl/risk_log.hpp"

namespace azsl::server {

using data::ClassId;

struct TeacherConfig {
    std::vector<std::size_t> hidden = {1024, 512};
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 1e-5;

    bool operator==(const TeacherConfig&) const = default;
};

struct TeacherModel {
    num::MlpParams params;
    std::vector<ClassId> class_space;  // output unit k predicts class_space[k]
    data::TeacherMode mode = data::TeacherMode::Transductive;
    double train_accuracy = 0.0;
    std::vector<double> loss_trace;  // mean training loss per epoch

    // Output unit of `c`, or -1 when the class is outside the teacher's space.
    std::ptrdiff_t unit_of(ClassId c) const;
};

// Cross-entropy + Adam on split.teacher_train. Throws when that set is empty.
TeacherModel train_teacher(const data::Dataset& dataset, const data::SplitBundle& split,
                           const TeacherConfig& config, std::uint64_t seed);

// Argmax predictions of the teacher mapped back to class ids.
std::vector<ClassId> teacher_predict(const TeacherModel& teacher, const num::Matrix& features);

// ---------------------------------------------------------------------------
// Regularizers

enum class RegularizerKind : std::uint32_t { None = 0, GaussianKL = 1, RbfMMD = 2 };

std::string_view to_string(RegularizerKind kind);
RegularizerKind parse_regularizer(std::string_view name);

inline constexpr double kVarianceFloor = 1e-6;
inline constexpr std::size_t kMmdReferenceCap = 256;

struct GaussianStats {
    std::vector<double> mean;
    std::vector<double> variance;  // diagonal, floored at kVarianceFloor
};

struct MmdReference {
    num::Matrix rows;
    double bandwidth = 1.0;   // k(x, y) = exp(-|x - y|^2 / (2 h^2))
    double self_kernel = 0.0; // mean_{ij} k(y_i, y_j), cached at fit time
};

// Server-held summary of real features. Never serialized to clients.
struct RegularizerState {
    RegularizerKind kind = RegularizerKind::None;
    double alpha = 0.0;
    std::size_t feature_dim = 0;
    std::map<ClassId, GaussianStats> class_stats;
    std::map<ClassId, MmdReference> class_reference;
    GaussianStats global_stats;
    MmdReference global_reference;
    bool allow_global_fallback = true;
};

// GaussianKL: per-class mean and biased variance over teacher_train rows;
// classes with fewer than 2 rows use the pooled statistics.
// RbfMMD: per-class reference subsample (at most 256 rows) with a
// median-heuristic bandwidth.
RegularizerState fit_regularizer(const data::Dataset& dataset, const data::SplitBundle& split,
                                 RegularizerKind kind, double alpha, std::uint64_t seed = 0);

struct RegularizerValue {
    double value = 0.0;
    num::Matrix grad;  // d value / d batch
};

// GaussianKL: sum over dimensions of KL(N(batch stats) || N(real stats)) per
// conditioning class, averaged over the classes present.
// RbfMMD: biased squared MMD between each class's rows and its reference,
// averaged over the classes present.
RegularizerValue reg_value_grad(const RegularizerState& state, const num::Matrix& batch,
                                std::span<const ClassId> cond_labels);

// Closed-form KL(N(mu1, var1) || N(mu2, var2)) for diagonal Gaussians.
double diagonal_gaussian_kl(std::span<const double> mu1, std::span<const double> var1,
                            std::span<const double> mu2, std::span<const double> var2);

// Biased (V-statistic) squared MMD with an RBF kernel.
double biased_mmd2(const num::Matrix& x, const num::Matrix& y, double bandwidth);

double median_heuristic_bandwidth(const num::Matrix& rows);

// ---------------------------------------------------------------------------
// Feedback service

// Pure computation of a response. Throws ProtocolError for invalid requests.
wire::FeedbackResponse compute_feedback(const TeacherModel& teacher, const RegularizerState& reg,
                                        const wire::FeedbackRequest& request);

class TeacherServer {
public:
    TeacherServer(TeacherModel teacher, RegularizerState reg);

    // Answers one frame, logging the exchange. Never throws: failures become
    // error frames.
    wire::Frame handle(const wire::Frame& request, RiskLog& log) const;

    const TeacherModel& teacher() const noexcept { return teacher_; }
    const RegularizerState& regularizer() const noexcept { return reg_; }

private:
    wire::Frame answer(const wire::Frame& request) const;

    TeacherModel teacher_;
    RegularizerState reg_;
};

// Request/response round trip against a local teacher, logged through the
// same frame path as the network server.
wire::FeedbackResponse feedback(const TeacherModel& teacher, const RegularizerState& reg,
                                const wire::FeedbackRequest& request, RiskLog& log);

// Serialized teacher weights. Logged as a mid-risk disclosure; refused (and
// the refusal logged) for BlackBox callers.
std::vector<std::uint8_t> export_weights(const TeacherModel& teacher, wire::Scenario scenario,
                                         RiskLog& log);

}  // namespace azsl::server
