#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace screenlm::calibration {

/// One document's normalized score with its relevance label, the unit of
/// threshold fitting.
struct ScoredLabel {
    double s_norm = 0.0;
    bool included = false;
};

enum class Mode { fixed, extrapolate, seed };
enum class ExtrapolationVariant { per_topic_median, pooled_median };

std::string to_string(Mode mode);
std::string to_string(ExtrapolationVariant v);

struct CalibrationConfig {
    double target_recall = 0.95; // k
    Mode mode = Mode::extrapolate;
    std::optional<double> fixed_theta;
    ExtrapolationVariant variant = ExtrapolationVariant::per_topic_median;
};

void validate_config(const CalibrationConfig& cfg);

/// The resolved decision boundary plus everything needed to reproduce it.
struct ThresholdPolicy {
    double theta = 0.0;
    std::string mode;
    double target_recall = 0.0;
    std::string extrapolation_variant; // empty unless extrapolated
    std::vector<std::pair<std::string, double>> per_topic_thresholds; // sample topics only
    std::vector<double> seed_scores;   // normalized seed scores consulted, if any
    std::optional<double> base_theta;  // boundary before the seed adjustment

    nlohmann::ordered_json to_json() const;
    static ThresholdPolicy from_json(const nlohmann::json& j);
};

void write_policy(const std::filesystem::path& path, const ThresholdPolicy& policy);
ThresholdPolicy read_policy(const std::filesystem::path& path);

/// Largest threshold that still reaches recall k on this topic under
/// include-iff->= semantics: with R included documents sorted by score
/// descending, the ceil(k*R)-th score. Requires at least one included
/// document.
double per_topic_threshold(std::span<const ScoredLabel> scored, double k);

/// Leave-one-out threshold: the median of every other topic's
/// recall-k-achieving threshold (per_topic_median), or the median of the
/// pooled scores of the documents those thresholds admit (pooled_median).
/// The median of an even count is the mean of the two middle values.
ThresholdPolicy extrapolate_threshold(
    std::span<const std::pair<std::string, std::vector<ScoredLabel>>> topics,
    const std::string& target_topic, double k,
    ExtrapolationVariant variant = ExtrapolationVariant::per_topic_median);

/// Lowers theta to the lowest seed-study score when that score sits below the
/// boundary; never raises it.
ThresholdPolicy seed_adjust(double theta, std::span<const double> seed_scores);

double median(std::vector<double> values);

} // namespace screenlm::calibration
