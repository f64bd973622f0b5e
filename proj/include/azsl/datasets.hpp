#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "azsl/numkit.hpp"

namespace azsl::data {

using ClassId = std::uint32_t;

enum class SemanticSource : std::uint32_t {
    Unspecified = 0,
    Attribute = 1,
    WordEmbedding = 2,
    Synthetic = 3,
};

// One d_a-dimensional embedding row per class.
struct SemanticTable {
    num::Matrix rows;
    SemanticSource source = SemanticSource::Unspecified;

    std::size_t num_classes() const noexcept { return rows.rows(); }
    std::size_t dim() const noexcept { return rows.cols(); }
};

struct Dataset {
    num::Matrix features;         // N x d_x
    std::vector<ClassId> labels;  // length N, dense 0..C-1
    SemanticTable semantics;      // C x d_a
    std::vector<std::string> class_names;  // original ids, indexed by dense label

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t feature_dim() const noexcept { return features.cols(); }
    std::size_t semantic_dim() const noexcept { return semantics.dim(); }
    std::size_t num_classes() const noexcept { return semantics.num_classes(); }

    // Throws ParseError describing the first violated invariant.
    void validate() const;

    // Features, labels, semantic rows and names; the source tag is metadata.
    bool operator==(const Dataset& other) const;
};

// Desk-scale stand-in for pooled CNN features. Class means are
// separation * ReLU(M a_c) for a fixed random linkage map M, so semantic
// similarity carries over to feature-space similarity.
struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t seen_count = 8;
    std::size_t feature_dim = 64;
    std::size_t semantic_dim = 16;
    std::size_t per_class = 200;
    double separation = 1.0;
    double noise = 0.2;
    std::uint64_t linkage_seed = 7;

    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Per-class feature means implied by a synthetic spec (noise-free cluster centres).
num::Matrix synthetic_class_means(const SyntheticSpec& spec, const SemanticTable& semantics);

enum class TeacherMode : std::uint32_t { Inductive = 0, Transductive = 1 };

std::string_view to_string(TeacherMode mode);

struct SplitBundle {
    std::vector<ClassId> seen_classes;
    std::vector<ClassId> unseen_classes;
    std::vector<std::size_t> teacher_train;
    std::vector<std::size_t> client_eval_seen;
    std::vector<std::size_t> client_eval_unseen;
    TeacherMode teacher_mode = TeacherMode::Transductive;
    double train_ratio = 0.8;
    std::uint64_t seed = 0;

    // Classes the teacher is trained on: seen only (Inductive) or all (Transductive).
    std::vector<ClassId> teacher_classes() const;
    std::vector<ClassId> all_classes() const;
};

inline constexpr double kDefaultTrainRatio = 0.8;  // 4:1 train/eval

// Rows of every class are shuffled with `seed` and split so that the eval
// side gets floor(n * (1 - train_ratio)) rows. Seen classes always split
// between teacher_train and client_eval_seen. Unseen classes go entirely to
// client_eval_unseen (Inductive) or split into teacher_train and
// client_eval_unseen (Transductive).
SplitBundle split_azsl(const Dataset& dataset, TeacherMode mode,
                       const std::vector<ClassId>& unseen_classes,
                       double train_ratio = kDefaultTrainRatio, std::uint64_t seed = 0);

// Eval-side count of the per-class split.
std::size_t eval_count(std::size_t rows, double train_ratio);

// The last `num_classes - seen_count` class ids.
std::vector<ClassId> trailing_unseen(std::size_t num_classes, std::size_t seen_count);

// ---------------------------------------------------------------------------
// Files

enum class FileFormat { Csv, Azb };

// Csv: features at `path` with header `label,f0,...`, semantics at the
// sibling `<stem>.sem.csv` with header `class,s0,...`.
// Azb: "AZB1", u32 {N, d_x, C, d_a}, N*d_x f64, N u32 labels, C*d_a f64.
Dataset load_features(const std::filesystem::path& path, FileFormat format);
void save_features(const Dataset& dataset, const std::filesystem::path& path, FileFormat format);

// Only the semantic table and class names of a csv or azb dataset.
SemanticTable load_semantics(const std::filesystem::path& path, FileFormat format,
                             std::vector<std::string>* class_names = nullptr);

std::filesystem::path semantics_path_for(const std::filesystem::path& features_csv);

FileFormat format_from_extension(const std::filesystem::path& path);

}  // namespace azsl::data
