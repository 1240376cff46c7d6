#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sthd/core_data.hpp"
#include "sthd/correlation.hpp"
#include "sthd/metrics.hpp"
#include "sthd/model.hpp"

namespace sthd {

enum class AblationMode { related, unrelated, none, reindex_off };
AblationMode parse_ablation_mode(std::string_view name);
std::string_view to_string(AblationMode mode);

enum class EarlyStopMode { previous, best };
EarlyStopMode parse_early_stop_mode(std::string_view name);
std::string_view to_string(EarlyStopMode mode);

/// constant keeps the learning rate fixed; cosine anneals it to zero over the
/// run's step budget (max_steps, or max_epochs full epochs).
enum class LrSchedule { constant, cosine };
LrSchedule parse_lr_schedule(std::string_view name);
std::string_view to_string(LrSchedule schedule);

inline constexpr int report_schema_version = 1;

/// Everything one run needs. Every field has a default; `set` accepts the
/// same keys as the config file and rejects unknown ones.
struct ExperimentConfig {
    std::string dataset_name = "synthetic";
    std::string data_path;  // empty selects the synthetic generator
    double train_fraction = 0.6;
    double val_fraction = 0.2;
    SyntheticSpec synthetic;
    bool synthetic_seed_from_run = false;

    WindowSpec window;  // stride applies to training windows; evaluation uses every window
    SthdConfig model;   // input_length, horizon and k are taken from the fields here
    std::size_t k = 5;
    ScoreMode score_mode = ScoreMode::signed_corr;
    AblationMode ablation = AblationMode::related;

    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    LrSchedule lr_schedule = LrSchedule::constant;
    std::size_t max_epochs = 100;
    std::size_t max_steps = 0;  // 0 means no step cap
    double early_stop_delta = 1e-7;
    std::size_t early_stop_patience = 1;
    EarlyStopMode early_stop_mode = EarlyStopMode::previous;
    std::vector<std::uint64_t> seeds{0};

    std::size_t reindex_element_ceiling = 20'000'000;
    std::size_t workers = 0;  // 0 means hardware concurrency
    std::string output_dir;

    bool baselines = false;
    std::size_t linear_epochs = 20;
    double linear_learning_rate = 1e-2;

    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;
    static const std::vector<std::string>& keys();

    /// Canonical `key = value` text of every key, in a fixed order.
    std::string to_text() const;
    /// FNV-1a over the canonical text of the keys that affect results
    /// (seeds, workers and output_dir excluded), as 16 hex digits.
    std::string hash() const;

    SthdConfig resolved_model() const;
    void validate() const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Worker count after applying the STHD_WORKERS environment override.
std::size_t resolve_workers(std::size_t configured);

/// Signals a stop once the validation-loss improvement has been below delta
/// for `patience` consecutive epochs. Improvement is measured against the
/// previous epoch or against the best epoch so far.
class EarlyStopper {
public:
    EarlyStopper(double delta, std::size_t patience, EarlyStopMode mode);

    /// Records one epoch and returns true when training should stop.
    bool observe(double val_loss);

    std::size_t epochs_seen() const { return epochs_seen_; }

private:
    double delta_;
    std::size_t patience_;
    EarlyStopMode mode_;
    std::size_t epochs_seen_ = 0;
    std::size_t stale_ = 0;
    double previous_ = 0.0;
    double best_ = 0.0;
};

/// Dataset, normalizer and neighbor selection for one run.
struct PreparedExperiment {
    MtsDataset dataset;
    NormalizationState normalizer;
    NeighborIndex neighbors;
    WindowSpec train_spec;
    WindowSpec eval_spec;
    AblationMode mode;

    std::size_t k() const { return neighbors.k(); }
};

MtsDataset load_dataset(const ExperimentConfig& config, std::uint64_t seed);
PreparedExperiment prepare_experiment(const ExperimentConfig& config, std::uint64_t seed);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::size_t steps = 0;  // cumulative optimizer steps
    double seconds = 0.0;
};

struct TrainHooks {
    /// Replaces the measured validation loss of an epoch.
    std::function<double(std::size_t epoch, double measured)> val_loss_override;
    /// Called after each epoch with the current (not best) parameters.
    std::function<void(const EpochLog&, const SthdModel&)> on_epoch;
};

struct TrainOutcome {
    std::unique_ptr<SthdModel> model;  // holds the best-validation parameters
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool stopped_early = false;
    std::string stop_reason;
    std::size_t steps = 0;
};

/// Normalized-unit MSE of `model` over the windows of `range` at the training
/// window stride. Used for validation and early stopping.
double split_loss(const SthdModel& model, const PreparedExperiment& prepared, SplitRange range);

/// Forecasts every window of `range` (stride 1) and maps them back to original
/// units.
ForecastSet forecast_split(const SthdModel& model, const PreparedExperiment& prepared, SplitRange range);

TrainOutcome train_model(const ExperimentConfig& config, const PreparedExperiment& prepared, std::uint64_t seed,
                         const TrainHooks& hooks = {});

struct RunResult {
    TrainOutcome outcome;
    MetricSummary test;
    std::vector<nlohmann::json> records;  // STHD first, then baselines when enabled
};

/// Prepares data, trains, persists the best-validation checkpoint when
/// output_dir is set, and evaluates the test split once.
RunResult run_training(const ExperimentConfig& config, std::uint64_t seed, const TrainHooks& hooks = {});

nlohmann::json make_report(const ExperimentConfig& config, std::string_view kind,
                           std::vector<nlohmann::json> records);

/// train over every configured seed.
nlohmann::json train_report(const ExperimentConfig& config);

/// Test metrics of a saved checkpoint.
nlohmann::json evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& stem);

/// One record per (mode, seed, horizon).
nlohmann::json run_ablation(const ExperimentConfig& config, const std::vector<AblationMode>& modes);

struct KSweepResult {
    nlohmann::json report;
    std::string csv;  // k,seed,horizon,rmse,wrmspe,mae,wape
};

KSweepResult run_k_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& k_values);

/// Checkpoint file stem for one seed under output_dir.
std::filesystem::path checkpoint_stem(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace sthd
