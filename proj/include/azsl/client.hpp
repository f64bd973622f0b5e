#pragma once

// Data-free side of the protocol. Everything here works from semantic
// embeddings, class ids, noise and channel responses; no real feature row is
// reachable from this module.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "azsl/datasets.hpp"
#include "azsl/numkit.hpp"
#include "azsl/protocol.hpp"
#include "azsl/risk_log.hpp"
#include "azsl/rng.hpp"
#include "azsl/transport.hpp"

namespace azsl::client {

using data::ClassId;
using num::Matrix;

struct NoiseSpec {
    std::size_t dim = 20;
    std::uint64_t seed = 0;

    bool operator==(const NoiseSpec&) const = default;
};

struct GenerationBatch {
    Matrix features;  // x~, non-negative
    std::vector<ClassId> cond_labels;
    Matrix cond_semantics;
    Matrix noise_used;

    std::size_t size() const { return cond_labels.size(); }
    Matrix generator_input() const { return num::hconcat(noise_used, cond_semantics); }
};

struct VerifiedBatch {
    Matrix features;
    std::vector<ClassId> labels;
    Matrix teacher_softmax;  // distillation targets
    double kept_fraction = 0.0;
    std::map<ClassId, std::size_t> kept_per_class;
    std::vector<ClassId> shortfall;  // classes left below quota
    std::size_t rounds = 0;

    std::size_t size() const { return labels.size(); }
};

struct TrainConfig {
    std::size_t gen_epochs = 2000;      // T_g, one Adam step per epoch
    std::size_t student_epochs = 2000;  // T_s
    std::size_t classifier_epochs = 2000;
    std::size_t batch_size = 64;
    std::size_t per_class_count = 400;
    std::size_t min_verified_per_class = 100;
    std::size_t regen_retry_cap = 3;
    std::size_t verify_chunk = 1024;  // rows per verification upload
    double alpha = 0.5;
    double gen_lr = 1e-5;
    double student_lr = 1e-5;
    double classifier_lr = 1e-5;
    std::vector<std::size_t> generator_hidden = {4096};
    std::vector<std::size_t> student_hidden = {1024, 512};
    NoiseSpec noise;
    wire::Scenario scenario = wire::Scenario::WhiteBox;
    data::TeacherMode teacher_mode = data::TeacherMode::Transductive;
    bool verify = true;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// What the client is told about the task: embeddings and class partitions.
// `teacher_classes` orders the columns of every softmax the teacher returns.
struct ClientTask {
    data::SemanticTable semantics;
    std::vector<ClassId> seen;
    std::vector<ClassId> unseen;
    std::vector<ClassId> teacher_classes;
    std::size_t feature_dim = 0;  // width of the teacher's input

    std::vector<ClassId> all_classes() const;
};

ClientTask make_task(const data::SemanticTable& semantics, const data::SplitBundle& split,
                     std::size_t feature_dim);

// A network together with the class id of each output unit.
struct Classifier {
    num::MlpParams net;
    std::vector<ClassId> head;
};

num::MlpParams make_generator(const TrainConfig& cfg, std::size_t semantic_dim, std::size_t feature_dim);
num::MlpParams make_student(const TrainConfig& cfg, std::size_t feature_dim, std::size_t outputs);

// ---------------------------------------------------------------------------
// Generation

// Rows in class order: `count_per_class` draws for each class.
GenerationBatch generate(const num::MlpParams& gen, const data::SemanticTable& semantics,
                         std::span<const ClassId> classes, std::size_t count_per_class, Rng& rng);
GenerationBatch generate(const num::MlpParams& gen, const data::SemanticTable& semantics,
                         std::span<const ClassId> classes, std::size_t count_per_class,
                         const NoiseSpec& noise);

// Generator applied to given noise rows and labels.
GenerationBatch generate_from(const num::MlpParams& gen, const data::SemanticTable& semantics,
                              std::span<const ClassId> labels, Matrix noise);

// A training batch of `batch_size` rows spread evenly over `classes`, at
// least two rows per class.
GenerationBatch training_batch(const num::MlpParams& gen, const data::SemanticTable& semantics,
                               std::span<const ClassId> classes, std::size_t batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Training

struct TraceRow {
    std::string phase;
    std::size_t step = 0;
    double total = 0.0;
    double main = 0.0;  // CE (white-box generator, classifiers) or MSE (black-box, student)
    double reg = 0.0;
};

struct WhiteStep {
    double ce_value = 0.0;
    double reg_value = 0.0;
    num::MlpGrads gen_grads;
    Matrix feature_grad;  // ce_grad + alpha * reg_grad
};

// One white-box gradient evaluation: uploads the batch, combines the
// returned gradients and backpropagates through the generator.
WhiteStep white_step(const num::MlpParams& gen, FeedbackClient& channel, const GenerationBatch& batch,
                     double alpha);

struct BlackStep {
    double mse = 0.0;
    double reg_value = 0.0;
    num::MlpGrads gen_grads;
    num::MlpGrads student_grads;
};

// Joint generator/student gradients given teacher softmax targets and
// regularizer feedback, which enter only as constants.
BlackStep black_step_with_targets(const num::MlpParams& gen, const num::MlpParams& student,
                                  const GenerationBatch& batch, const Matrix& teacher_softmax,
                                  double reg_value, const Matrix& reg_grad, double alpha);

BlackStep black_step(const num::MlpParams& gen, const num::MlpParams& student, FeedbackClient& channel,
                     const GenerationBatch& batch, double alpha);

std::vector<TraceRow> train_generator_white(num::MlpParams& gen, FeedbackClient& channel,
                                            const ClientTask& task, std::span<const ClassId> classes,
                                            const TrainConfig& cfg);

std::vector<TraceRow> train_black(num::MlpParams& gen, num::MlpParams& student, FeedbackClient& channel,
                                  const ClientTask& task, std::span<const ClassId> classes,
                                  const TrainConfig& cfg);

// Keeps rows whose softmax argmax (ties to the lowest column) is the
// conditioning class. Softmax columns follow `teacher_classes`.
VerifiedBatch verify(const GenerationBatch& batch, const Matrix& softmax,
                     std::span<const ClassId> teacher_classes);

// Teacher softmax for a generated batch, uploaded in chunks.
Matrix teacher_softmax(FeedbackClient& channel, const GenerationBatch& batch, wire::Scenario scenario,
                       std::size_t chunk);

// Generate, verify, and regenerate for classes below quota.
VerifiedBatch ensure_quota(const num::MlpParams& gen, FeedbackClient& channel, const ClientTask& task,
                           std::span<const ClassId> classes, const TrainConfig& cfg);

// MSE between softmax(student) and the stored teacher softmax rows.
std::vector<TraceRow> train_student(num::MlpParams& student, const VerifiedBatch& verified,
                                    const TrainConfig& cfg);

double student_loss(const num::MlpParams& student, const Matrix& features, const Matrix& targets,
                    num::MlpGrads* grads);

// Linear softmax classifier over `class_space`, trained on fresh generated
// features.
Classifier train_inductive_classifier(const num::MlpParams& gen, const ClientTask& task,
                                      std::span<const ClassId> class_space, const TrainConfig& cfg,
                                      std::vector<TraceRow>* trace = nullptr,
                                      const std::string& phase = "classifier");

// ---------------------------------------------------------------------------
// Full procedure

struct ArtifactBundle {
    num::MlpParams generator;
    Classifier student;
    std::optional<Classifier> classifier;       // inductive GZSL, over all classes
    std::optional<Classifier> classifier_czsl;  // inductive CZSL, over unseen classes
    std::vector<TraceRow> trace;
    RiskLog transcript;
    double kept_fraction = 0.0;
    std::vector<ClassId> shortfall;

    std::uint64_t transcript_digest() const { return transcript.digest(); }
    std::uint64_t digest() const;
};

ArtifactBundle run_algorithm1(Channel& channel, const ClientTask& task, const TrainConfig& cfg);

void save_bundle(const ArtifactBundle& bundle, const std::filesystem::path& dir);
std::string trace_csv(std::span<const TraceRow> trace);

void save_weights(const num::MlpParams& params, const std::filesystem::path& path);
num::MlpParams load_weights(const std::filesystem::path& path);

}  // namespace azsl::client
