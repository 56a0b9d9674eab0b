#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace screenlm::evaluation {

struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricConfig {
    double beta = 3.0;             // F-beta weighting; 3 weights recall nine times precision
    double wss_recall_level = 1.0; // r in (TN+FN)/N - (1-r)
    double success_target = 0.95;  // a topic succeeds when recall >= this
};

struct TopicEvaluation {
    std::string topic_id;
    ConfusionMatrix confusion;
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
    double b_ac = 0.0;
    double wss = 0.0;
    bool success = false;
    std::size_t skipped_unlabeled = 0;
    bool vacuous_tn_rate = false; // topic had no excluded documents
};

struct DatasetEvaluation {
    std::size_t topic_count = 0;
    // Macro: unweighted means over topics (the per-topic vectors also feed
    // the paired significance tests).
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
    double b_ac = 0.0;
    double wss = 0.0;
    double success_rate = 0.0;
    // Micro: the same formulas over the pooled confusion counts.
    ConfusionMatrix pooled;
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f_beta = 0.0;
    double micro_b_ac = 0.0;
    double micro_wss = 0.0;
};

/// Contingency counts over documents that carry both a decision and a label;
/// decisions for unlabeled documents are skipped and counted. Throws
/// ValidationError when nothing is co-labeled.
ConfusionMatrix confusion(const std::map<std::string, bool>& decisions,
                          const std::unordered_map<std::string, int>& labels,
                          std::size_t* skipped_unlabeled = nullptr);

/// All set-based metrics for one topic.
///   precision = tp/(tp+fp), 0 when nothing was included
///   recall    = tp/(tp+fn)
///   F_beta    = (1+b^2) P R / (b^2 P + R), 0 when P = R = 0
///   B-AC      = ((tp/(tp+fn)) + (tn/(tn+fp))) / 2; a topic with no excluded
///               documents makes the TN rate vacuous and it counts as 1
///   WSS       = (tn+fn)/N - (1-r)
/// Requires tp+fn >= 1 (corpus assembly guarantees an included document).
TopicEvaluation metric_suite(const ConfusionMatrix& cm, const MetricConfig& cfg,
                             std::string topic_id = {}, std::size_t skipped_unlabeled = 0);

DatasetEvaluation macro_average(std::span<const TopicEvaluation> evals,
                                const MetricConfig& cfg = {});

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate_variance = false; // nonzero mean difference with zero variance
};

/// Student's two-tailed paired t-test on per-topic values. All-zero
/// differences give t=0, p=1 exactly; zero variance with nonzero mean is the
/// p->0 limit, reported as p=0 with the degenerate flag set.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// adjusted_i = min(1, p_i * comparisons); requires comparisons >= #p-values.
std::vector<double> bonferroni(std::span<const double> p_values, int comparisons);

struct PairwiseTest {
    std::string method_a;
    std::string method_b;
    std::string metric;
    double t = 0.0;
    double p_raw = 1.0;
    double p_adjusted = 1.0;
    bool significant = false;
    bool degenerate_variance = false;
};

struct SignificanceReport {
    int comparisons = 0; // Bonferroni m: the number of method pairs in the table
    double alpha = 0.05;
    std::vector<PairwiseTest> tests;

    nlohmann::ordered_json to_json() const;
};

inline constexpr const char* kMetricNames[] = {"precision", "recall", "b_ac",
                                               "f_beta",    "success", "wss"};

/// Per-metric paired tests for every requested method pair, on per-topic
/// vectors aligned by topic. Bonferroni m is the number of pairs.
SignificanceReport significance(
    const std::vector<std::pair<std::string, std::vector<TopicEvaluation>>>& per_method,
    const std::vector<std::pair<std::string, std::string>>& pairs, double alpha = 0.05);

/// Report rows: one method/setting with its dataset-level numbers.
struct ReportRow {
    std::string method_id;
    std::string setting;
    DatasetEvaluation eval;
};

/// Table with the column set P, R, B-AC, F3, Suc, WSS. Header lines carry the
/// run's effective policy settings so numbers are interpretable offline.
std::string render_csv(std::span<const ReportRow> rows, std::span<const std::string> header_notes,
                       bool verbose = false);
std::string render_text(std::span<const ReportRow> rows, std::span<const std::string> header_notes,
                        bool verbose = false);

} // namespace screenlm::evaluation
