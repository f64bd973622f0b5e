#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "azsl/client.hpp"
#include "azsl/datasets.hpp"
#include "azsl/numkit.hpp"
#include "azsl/protocol.hpp"

namespace azsl::eval {

using data::ClassId;
using num::Matrix;

enum class Task { CZSL, GZSL };

std::string_view to_string(Task task);

// Argmax over the columns whose head class is in `class_space`; ties go to
// the lowest class id. Throws when a class in `class_space` is not in `head`.
std::vector<ClassId> predict_scores(const Matrix& scores, std::span<const ClassId> head,
                                    std::span<const ClassId> class_space);

std::vector<ClassId> predict(const client::Classifier& model, const Matrix& features,
                             std::span<const ClassId> class_space);

// Macro top-1 in percent over the classes of `classes` that occur in
// `labels`. Throws when none do.
double per_class_top1(std::span<const ClassId> preds, std::span<const ClassId> labels,
                      std::span<const ClassId> classes);

// 2us / (u + s); 0 when u + s == 0. Throws on negative input.
double harmonic_mean(double u, double s);

struct EvalReport {
    Task task = Task::GZSL;
    data::TeacherMode teacher_mode = data::TeacherMode::Transductive;
    wire::Scenario scenario = wire::Scenario::WhiteBox;
    bool masked = false;
    double u = 0.0;
    double s = 0.0;  // GZSL only
    double H = 0.0;  // GZSL only
    std::vector<ClassId> seen;
    std::vector<ClassId> unseen;
    std::map<ClassId, double> per_class;
    std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted], C x C
    std::vector<std::string> class_names;
    std::vector<std::pair<std::string, std::uint64_t>> seeds;
    std::uint64_t transcript_digest = 0;

    std::string to_text() const;
};

// Fills accuracies and confusion from predictions. `seen` is empty for CZSL.
EvalReport make_report(Task task, std::span<const ClassId> preds, std::span<const ClassId> labels,
                       std::span<const ClassId> seen, std::span<const ClassId> unseen,
                       std::size_t num_classes);

// Macro accuracy over `classes` recomputed from confusion counts alone.
double accuracy_from_confusion(const EvalReport& report, std::span<const ClassId> classes);

// Transductive: the student over every class (or only unseen ones when
// `masked`) on the unseen evaluation rows. Inductive: the unseen-only
// classifier.
EvalReport eval_czsl(const client::ArtifactBundle& bundle, const data::SplitBundle& split,
                     const data::Dataset& dataset, wire::Scenario scenario, bool masked = false);

// Predictions over seen and unseen classes on both evaluation sets.
EvalReport eval_gzsl(const client::ArtifactBundle& bundle, const data::SplitBundle& split,
                     const data::Dataset& dataset, wire::Scenario scenario);

// Rows projected onto the top two principal components. Each component's
// largest-magnitude coordinate is made positive.
Matrix pca_project(const Matrix& features, Matrix* components = nullptr);

// csv `label,pc1,pc2`.
void export_projection(const Matrix& features, std::span<const ClassId> labels,
                       const std::filesystem::path& path);

}  // namespace azsl::eval
