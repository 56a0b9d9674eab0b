#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "screenlm/scoring.hpp"

namespace screenlm::decision {

/// What to do with a record whose answer tokens never appeared. The literal
/// comparison 0 >= 0 would include; the default excludes, because an absent
/// answer token means the model did not answer the question.
enum class IndeterminatePolicy { exclude, include };

struct Decision {
    bool include = false;
    bool indeterminate_override = false; // the policy, not the scores, decided
};

/// Include iff p_yes >= p_no (ties include). Indeterminate records follow
/// `policy` and come back flagged.
Decision decide_uncalibrated(const scoring::ScoreRecord& record,
                             IndeterminatePolicy policy = IndeterminatePolicy::exclude);

/// Margin score: p_yes - p_no when p_yes >= p_no, else 0. Never negative.
double raw_margin(const scoring::ScoreRecord& record);
double raw_margin(double p_yes, double p_no);

/// Per-topic min-max normalization into [0, 1], order preserved. When every
/// margin is identical the whole topic maps to 1.0, so any threshold <= 1
/// includes everything: a scorer that cannot discriminate fails open rather
/// than silently dropping recall.
std::vector<double> normalize_topic(std::span<const double> raw_margins);

/// Include iff s_norm >= theta.
bool decide_calibrated(double s_norm, double theta);

/// CombSUM over per-method masses: include iff sum p_yes >= sum p_no.
/// All records must be for the same (topic, document). A list in which every
/// record is indeterminate falls back to `policy`, consistent with the
/// single-method rule.
Decision fuse_uncalibrated(std::span<const scoring::ScoreRecord> records,
                           IndeterminatePolicy policy = IndeterminatePolicy::exclude);

/// Fused calibrated rule: include iff mean of the per-method normalized
/// scores >= theta. The mean keeps theta on the same [0, 1] scale as
/// single-method calibration; it decides identically to the plain sum with
/// theta scaled by the method count.
bool fuse_calibrated(std::span<const double> s_norms, double theta);

/// One exported decision row.
struct DecisionRecord {
    std::string topic_id;
    std::string doc_id;
    std::string method_id; // backend method or ensemble id
    std::string setting;   // "uncalibrated" | "calibrated"
    std::optional<double> s_norm;
    std::optional<double> theta;
    bool include = false;

    bool operator==(const DecisionRecord&) const = default;
};

void write_decisions(const std::filesystem::path& path, std::span<const DecisionRecord> records);
std::vector<DecisionRecord> read_decisions(const std::filesystem::path& path);

} // namespace screenlm::decision
