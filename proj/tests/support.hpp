#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "azsl/client.hpp"
#include "azsl/datasets.hpp"
#include "azsl/numkit.hpp"
#include "azsl/rng.hpp"
#include "azsl/teacher.hpp"

namespace testutil {

using azsl::num::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0,
                            double shift = 0.0) {
    azsl::Rng rng(seed);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = shift + scale * rng.normal();
    return m;
}

inline Matrix random_softmax(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    return azsl::num::softmax(random_matrix(rows, cols, seed));
}

// Small nets and short schedules so unit tests stay fast.
inline azsl::server::TeacherConfig small_teacher() {
    azsl::server::TeacherConfig c;
    c.hidden = {32, 16};
    c.epochs = 20;
    c.learning_rate = 1e-3;
    return c;
}

inline azsl::client::TrainConfig small_client(azsl::wire::Scenario scenario, azsl::data::TeacherMode mode,
                                              std::uint64_t seed) {
    azsl::client::TrainConfig c;
    c.gen_epochs = 60;
    c.student_epochs = 80;
    c.classifier_epochs = 80;
    c.per_class_count = 40;
    c.min_verified_per_class = 10;
    c.gen_lr = c.student_lr = c.classifier_lr = 1e-3;
    c.generator_hidden = {32};
    c.student_hidden = {32, 16};
    c.scenario = scenario;
    c.teacher_mode = mode;
    c.seed = seed;
    return c;
}

inline azsl::data::SyntheticSpec small_spec() {
    azsl::data::SyntheticSpec s;
    s.num_classes = 5;
    s.seen_count = 4;
    s.feature_dim = 12;
    s.semantic_dim = 6;
    s.per_class = 30;
    return s;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("azsl-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
