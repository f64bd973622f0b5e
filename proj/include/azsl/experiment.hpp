#pragma once

// Experiment configuration and the command implementations behind the CLI.
//
// Config files are line-oriented `key = value` with `#` comments. Groups use
// dotted keys (`noise.dim = 20`). Relative dataset paths resolve against the
// config file's directory.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "azsl/client.hpp"
#include "azsl/datasets.hpp"
#include "azsl/eval.hpp"
#include "azsl/teacher.hpp"

namespace azsl::cli {

using data::ClassId;

enum class DataSource { Synthetic, File };
enum class ChannelMode { InProcess, Tcp };

struct ExperimentConfig {
    DataSource source = DataSource::Synthetic;
    data::SyntheticSpec synthetic;
    std::filesystem::path dataset_path;        // File source
    std::filesystem::path eval_features_path;  // client-held evaluation rows for remote file runs

    std::vector<ClassId> unseen;           // explicit unseen classes
    std::optional<std::size_t> unseen_count;  // otherwise the trailing classes
    double train_ratio = data::kDefaultTrainRatio;

    data::TeacherMode teacher_mode = data::TeacherMode::Transductive;
    wire::Scenario scenario = wire::Scenario::WhiteBox;

    server::TeacherConfig teacher;
    server::RegularizerKind regularizer = server::RegularizerKind::GaussianKL;
    client::TrainConfig train;  // alpha, noise dim, caps; student shares teacher.hidden
    bool masked_czsl = false;

    ChannelMode channel = ChannelMode::InProcess;
    std::string host = "127.0.0.1";
    std::uint16_t port = 7000;

    std::filesystem::path output_dir = "azsl-out";
    std::uint64_t seed = 0;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string emit_config(const ExperimentConfig& cfg);

// Synthetic spec files (`gen-data`): synthetic.* keys plus `seed`.
struct DataSpecFile {
    data::SyntheticSpec spec;
    std::uint64_t seed = 0;
};
DataSpecFile parse_data_spec(const std::filesystem::path& path);

// Replaces the master seed when AZSL_SEED is set. Throws ConfigError on a
// malformed value.
void apply_env_overrides(ExperimentConfig& cfg);

struct RunSeeds {
    std::uint64_t data = 0;
    std::uint64_t split = 0;
    std::uint64_t teacher = 0;
    std::uint64_t regularizer = 0;
    std::uint64_t client = 0;

    static RunSeeds from_master(std::uint64_t master);
    std::vector<std::pair<std::string, std::uint64_t>> named() const;
};

// Server-side state built from the config: dataset, split, teacher, regularizer.
struct ServerSide {
    data::Dataset dataset;
    data::SplitBundle split;
    server::TeacherModel teacher;
    server::RegularizerState regularizer;
    double teacher_test_accuracy = 0.0;  // percent, on held-out rows of teacher classes
};

ServerSide build_server_side(const ExperimentConfig& cfg, const RunSeeds& seeds);

struct RunResult {
    client::ArtifactBundle bundle;
    eval::EvalReport czsl;
    eval::EvalReport gzsl;
    std::optional<double> teacher_test_accuracy;  // in-process runs only
};

// Full pipeline. Writes the run directory when `out_dir` is non-empty.
RunResult run_experiment(const ExperimentConfig& cfg, const RunSeeds& seeds,
                         const std::filesystem::path& out_dir);

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitConfig = 2, kExitRuntime = 3, kExitProtocol = 4 };

// Maps the active exception to an exit code, printing a diagnostic to `err`.
int report_failure(std::ostream& err);

int cmd_run(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);
int cmd_serve(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err,
              const std::atomic<bool>* stop = nullptr);
int cmd_audit(const std::filesystem::path& transcript, std::ostream& out, std::ostream& err);
int cmd_sweep(const std::filesystem::path& config_path, const std::string& param,
              const std::vector<std::string>& values, std::ostream& out, std::ostream& err);
int cmd_gen_data(const std::filesystem::path& spec_path, const std::filesystem::path& out_path,
                 std::ostream& out, std::ostream& err);

struct AuditSummary {
    std::size_t messages = 0;
    std::size_t up = 0;
    std::size_t down = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::size_t low = 0;
    std::size_t mid = 0;
    std::map<std::string, std::size_t> kinds;
    std::map<std::string, std::size_t> mid_kinds;

    std::string verdict() const;
};

AuditSummary audit(const RiskLog& log);

struct SweepRow {
    std::string value;
    double u = 0.0;
    double s = 0.0;
    double H = 0.0;
};

// One run per value with fresh client/teacher seeds and a shared data seed.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& param,
                                const std::vector<std::string>& values);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace azsl::cli
