#include "screenlm/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

namespace screenlm::calibration {

using jsonl::ordered_json;

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::fixed: return "fixed";
        case Mode::extrapolate: return "extrapolate";
        case Mode::seed: return "seed";
    }
    return "?";
}

std::string to_string(ExtrapolationVariant v) {
    return v == ExtrapolationVariant::per_topic_median ? "per_topic_median" : "pooled_median";
}

void validate_config(const CalibrationConfig& cfg) {
    if (!(cfg.target_recall > 0.0) || cfg.target_recall > 1.0)
        throw ConfigError("target_recall must lie in (0, 1]");
    if (cfg.mode == Mode::fixed) {
        if (!cfg.fixed_theta) throw ConfigError("mode=fixed requires fixed_theta");
        if (*cfg.fixed_theta < 0.0 || *cfg.fixed_theta > 1.0)
            throw ConfigError("fixed_theta must lie in [0, 1]");
    }
}

double median(std::vector<double> values) {
    if (values.empty()) throw ValidationError("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

// Number of included documents that must score at or above the threshold.
// The 1e-9 slack absorbs the floating error of k*R (e.g. 0.95*20), which
// would otherwise round a whole-number product up a rank.
std::size_t required_rank(double k, std::size_t included) {
    const double product = k * static_cast<double>(included);
    auto rank = static_cast<std::size_t>(std::ceil(product - 1e-9));
    return std::clamp<std::size_t>(rank, 1, included);
}

std::vector<double> included_scores_desc(std::span<const ScoredLabel> scored) {
    std::vector<double> scores;
    for (const auto& s : scored)
        if (s.included) scores.push_back(s.s_norm);
    std::sort(scores.begin(), scores.end(), std::greater<>());
    return scores;
}

} // namespace

double per_topic_threshold(std::span<const ScoredLabel> scored, double k) {
    if (!(k > 0.0) || k > 1.0) throw ConfigError("target recall must lie in (0, 1]");
    const std::vector<double> scores = included_scores_desc(scored);
    if (scores.empty())
        throw ValidationError("per_topic_threshold on a topic without included documents");
    return scores[required_rank(k, scores.size()) - 1];
}

ThresholdPolicy extrapolate_threshold(
    std::span<const std::pair<std::string, std::vector<ScoredLabel>>> topics,
    const std::string& target_topic, double k, ExtrapolationVariant variant) {
    if (topics.size() < 2)
        throw ValidationError("extrapolation needs at least 2 topics");

    ThresholdPolicy policy;
    policy.mode = to_string(Mode::extrapolate);
    policy.target_recall = k;
    policy.extrapolation_variant = to_string(variant);

    std::vector<double> sample_thresholds;
    std::vector<double> pooled;
    for (const auto& [topic_id, scored] : topics) {
        if (topic_id == target_topic) continue;
        const double theta_i = per_topic_threshold(scored, k);
        policy.per_topic_thresholds.emplace_back(topic_id, theta_i);
        sample_thresholds.push_back(theta_i);
        if (variant == ExtrapolationVariant::pooled_median) {
            // The documents this topic's threshold admits at recall k.
            for (double s : included_scores_desc(scored))
                if (s >= theta_i) pooled.push_back(s);
        }
    }
    if (sample_thresholds.empty())
        throw ValidationError("no sample topics besides the target \"" + target_topic + "\"");

    policy.theta = variant == ExtrapolationVariant::per_topic_median ? median(std::move(sample_thresholds))
                                                                     : median(std::move(pooled));
    return policy;
}

ThresholdPolicy seed_adjust(double theta, std::span<const double> seed_scores) {
    ThresholdPolicy policy;
    policy.mode = to_string(Mode::seed);
    policy.seed_scores.assign(seed_scores.begin(), seed_scores.end());
    policy.base_theta = theta;
    policy.theta = theta;
    for (double s : seed_scores) policy.theta = std::min(policy.theta, s);
    return policy;
}

ordered_json ThresholdPolicy::to_json() const {
    ordered_json o;
    o["theta"] = theta;
    o["mode"] = mode;
    o["target_recall"] = target_recall;
    if (!extrapolation_variant.empty()) o["extrapolation_variant"] = extrapolation_variant;
    if (!per_topic_thresholds.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& [topic_id, t] : per_topic_thresholds) {
            ordered_json e;
            e["topic_id"] = topic_id;
            e["theta"] = t;
            arr.push_back(std::move(e));
        }
        o["per_topic_thresholds"] = std::move(arr);
    }
    if (!seed_scores.empty()) o["seed_scores"] = seed_scores;
    if (base_theta) o["base_theta"] = *base_theta;
    return o;
}

ThresholdPolicy ThresholdPolicy::from_json(const nlohmann::json& j) {
    ThresholdPolicy p;
    if (!j.contains("theta") || !j["theta"].is_number())
        throw ParseError("threshold policy without numeric theta");
    p.theta = j["theta"].get<double>();
    p.mode = j.value("mode", std::string("fixed"));
    p.target_recall = j.value("target_recall", 0.0);
    p.extrapolation_variant = j.value("extrapolation_variant", std::string());
    if (j.contains("per_topic_thresholds"))
        for (const auto& e : j["per_topic_thresholds"])
            p.per_topic_thresholds.emplace_back(e.at("topic_id").get<std::string>(),
                                                e.at("theta").get<double>());
    if (j.contains("seed_scores"))
        for (const auto& s : j["seed_scores"]) p.seed_scores.push_back(s.get<double>());
    if (j.contains("base_theta") && j["base_theta"].is_number())
        p.base_theta = j["base_theta"].get<double>();
    return p;
}

void write_policy(const std::filesystem::path& path, const ThresholdPolicy& policy) {
    jsonl::write_file_atomic(path, policy.to_json().dump(2) + "\n");
}

ThresholdPolicy read_policy(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(jsonl::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return ThresholdPolicy::from_json(j);
}

} // namespace screenlm::calibration
