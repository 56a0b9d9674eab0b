#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "screenlm/corpus.hpp"
#include "screenlm/decision.hpp"
#include "screenlm/evaluation.hpp"
#include "screenlm/scoring.hpp"

namespace screenlm::pipeline {

/// Execution lane for the bulk kernels. `serial` is the reference
/// implementation the parallel lane is tested against; both produce
/// bit-identical output (per-element arithmetic is order-independent and
/// per-topic reductions are integer sums).
enum class Exec { serial, openmp };

/// Topic-major structure-of-arrays view of one method's scores over a
/// dataset. Topic i owns rows [offsets[i], offsets[i+1]).
struct ScoreMatrix {
    std::vector<std::string> topic_ids;
    std::vector<std::size_t> offsets; // size topics()+1
    std::vector<std::string> doc_ids;
    std::vector<double> p_yes;
    std::vector<double> p_no;
    std::vector<std::uint8_t> indeterminate;
    std::vector<std::int8_t> label; // 1 included, 0 excluded, -1 unlabeled

    std::size_t topics() const { return topic_ids.size(); }
    std::size_t docs() const { return doc_ids.size(); }
    std::pair<std::size_t, std::size_t> topic_range(std::size_t t) const {
        return {offsets[t], offsets[t + 1]};
    }
};

/// Groups records by the dataset's topic order; within a topic, rows follow
/// the candidate order. Throws ValidationError when a candidate has no record
/// or a record refers to an unknown document.
ScoreMatrix make_matrix(const corpus::Dataset& ds, std::span<const scoring::ScoreRecord> records);

// Bulk kernels. Spans must match m.docs() (or m.topics() where noted).
void margins(const ScoreMatrix& m, std::span<double> out, Exec exec);
void normalize(const ScoreMatrix& m, std::span<const double> raw, std::span<double> out, Exec exec);
void decide_uncalibrated(const ScoreMatrix& m, std::span<std::uint8_t> out,
                         decision::IndeterminatePolicy policy, Exec exec);
// theta_per_topic has m.topics() entries.
void decide_calibrated(const ScoreMatrix& m, std::span<const double> s_norm,
                       std::span<const double> theta_per_topic, std::span<std::uint8_t> out,
                       Exec exec);
/// Per-topic confusion counts; unlabeled rows are skipped and counted.
void confusion_by_topic(const ScoreMatrix& m, std::span<const std::uint8_t> include,
                        std::span<evaluation::ConfusionMatrix> out,
                        std::span<std::size_t> skipped, Exec exec);

struct ScreenResult {
    std::vector<double> s_raw;
    std::vector<double> s_norm;
    std::vector<std::uint8_t> include;
    std::size_t degenerate_topics = 0; // topics where every margin was equal
};

ScreenResult screen_uncalibrated(const ScoreMatrix& m, decision::IndeterminatePolicy policy,
                                 Exec exec);
ScreenResult screen_calibrated(const ScoreMatrix& m, std::span<const double> theta_per_topic,
                               Exec exec);

/// Confusion + metric suite per topic, in topic order. Throws when a topic
/// has no labeled included document.
std::vector<evaluation::TopicEvaluation> evaluate(const ScoreMatrix& m,
                                                  std::span<const std::uint8_t> include,
                                                  const evaluation::MetricConfig& cfg, Exec exec);

} // namespace screenlm::pipeline
