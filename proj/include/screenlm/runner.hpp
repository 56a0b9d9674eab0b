#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "screenlm/calibration.hpp"
#include "screenlm/corpus.hpp"
#include "screenlm/decision.hpp"
#include "screenlm/evaluation.hpp"
#include "screenlm/pipeline.hpp"
#include "screenlm/prompting.hpp"
#include "screenlm/scoring.hpp"
#include "screenlm/synthetic.hpp"

namespace screenlm::runner {

enum class BackendKind { synthetic, http, cache };
enum class Setting { uncalibrated, calibrated };

std::string to_string(BackendKind kind);
std::string to_string(Setting setting);

struct BackendConfig {
    scoring::BackendProfile profile;
    BackendKind kind = BackendKind::synthetic;
    std::string template_id = "generic";
    bool synthetic_planted = true; // draw from the label-separated distributions when labels exist
};

struct EnsembleSpec {
    std::string ensemble_id;
    std::vector<std::string> method_ids; // >= 2 distinct backend methods
};

struct DatasetConfig {
    std::optional<std::filesystem::path> dir; // canonical dataset directory
    std::optional<std::filesystem::path> topics;
    std::optional<std::filesystem::path> candidates;
    std::optional<std::filesystem::path> qrels;
    std::optional<std::filesystem::path> seeds;
    std::optional<synthetic::DatasetSpec> synthetic_spec;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<BackendConfig> backends;
    std::vector<EnsembleSpec> ensembles;
    std::optional<std::filesystem::path> template_registry;
    int budget_tokens = prompting::kDefaultBudgetTokens;
    std::optional<std::filesystem::path> cache_file;
    std::vector<Setting> settings{Setting::uncalibrated, Setting::calibrated};
    calibration::CalibrationConfig calibration;
    evaluation::MetricConfig metrics;
    // Method pairs for the paired tests; empty means every unordered pair.
    std::vector<std::pair<std::string, std::string>> significance_pairs;
    decision::IndeterminatePolicy indeterminate_policy = decision::IndeterminatePolicy::exclude;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 42;
    int workers = 1;      // topic-level scoring concurrency
    bool offline = false; // cache-only scoring
    double max_failure_fraction = 0.01;
    bool verbose_reports = false;
    bool serial_pipeline = false; // run the reference lane instead of OpenMP
};

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
/// A manifest embeds the resolved config snapshot; this rebuilds the config
/// from it, so a run can be reproduced from the manifest alone.
ExperimentConfig config_from_manifest(const std::filesystem::path& manifest_path);

corpus::Dataset load_dataset(const DatasetConfig& cfg);

/// Validates, assembles and canonicalizes a dataset into out_dir.
corpus::Dataset run_ingest(const DatasetConfig& in, const std::filesystem::path& out_dir);

/// One effective score source: a backend method, or an ensemble fused from
/// several of them (summed masses; mean of normalized scores).
struct MethodView {
    std::string method_id;
    bool is_ensemble = false;
    pipeline::ScoreMatrix matrix;
    std::vector<double> s_raw;
    std::vector<double> s_norm;
    std::map<std::string, std::vector<double>> seed_s_norm; // topic -> per-seed scores
    std::int64_t truncated = 0;
    std::int64_t indeterminate = 0;
    std::int64_t retries = 0;
    std::int64_t cache_hits = 0;
    std::int64_t failed_docs = 0; // tolerated failures, screened as indeterminate
    std::size_t degenerate_topics = 0;
};

/// Scores every backend over the dataset (cache first), builds matrices and
/// normalized scores, and fuses the configured ensembles.
std::vector<MethodView> build_views(const ExperimentConfig& cfg, const corpus::Dataset& ds,
                                    scoring::ScoreCache* cache);

/// Per-target-topic thresholds (dataset topic order) with their policies.
/// extrapolate/seed fit on the other topics only; fixed broadcasts.
std::pair<std::vector<double>, std::vector<calibration::ThresholdPolicy>> fit_thetas(
    const ExperimentConfig& cfg, const MethodView& view);

struct RunResult {
    nlohmann::ordered_json manifest;
    std::filesystem::path manifest_path;
    std::vector<evaluation::ReportRow> rows; // evaluation entry points only
    std::vector<std::pair<std::string, evaluation::SignificanceReport>> significance; // per setting
    std::map<std::string, std::vector<calibration::ThresholdPolicy>> policies; // per method
    std::map<std::string, std::filesystem::path> outputs;
};

/// Score -> margin -> normalize -> (calibrate) -> decide; writes decisions,
/// policies and the manifest. No evaluation.
RunResult run_screen(const ExperimentConfig& cfg);

/// Full leave-one-out experiment: screen with per-target extrapolated (or
/// seed-adjusted) thresholds, evaluate per topic, aggregate, and run the
/// configured paired significance tests. Requires a labeled dataset and
/// at least 2 topics.
RunResult run_loo(const ExperimentConfig& cfg);

/// Evaluates previously written decision files against the configured
/// dataset and renders the same reports as run_loo.
RunResult evaluate_decision_files(const ExperimentConfig& cfg,
                                  const std::vector<std::filesystem::path>& decision_files);

/// Re-renders tables and significance from a previously written
/// evaluations.jsonl (metrics are recomputed from the stored confusion
/// counts under the configured MetricConfig).
RunResult report_from_evaluations(const ExperimentConfig& cfg,
                                  const std::filesystem::path& evaluations_file);

} // namespace screenlm::runner
