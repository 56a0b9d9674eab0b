#include "screenlm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "screenlm/errors.hpp"

namespace screenlm::evaluation {

ConfusionMatrix confusion(const std::map<std::string, bool>& decisions,
                          const std::unordered_map<std::string, int>& labels,
                          std::size_t* skipped_unlabeled) {
    ConfusionMatrix cm;
    std::size_t skipped = 0;
    for (const auto& [doc_id, include] : decisions) {
        auto it = labels.find(doc_id);
        if (it == labels.end()) {
            ++skipped;
            continue;
        }
        const bool relevant = it->second == 1;
        if (include)
            relevant ? ++cm.tp : ++cm.fp;
        else
            relevant ? ++cm.fn : ++cm.tn;
    }
    if (skipped_unlabeled != nullptr) *skipped_unlabeled = skipped;
    if (cm.total() == 0) throw ValidationError("no document carries both a decision and a label");
    return cm;
}

TopicEvaluation metric_suite(const ConfusionMatrix& cm, const MetricConfig& cfg,
                             std::string topic_id, std::size_t skipped_unlabeled) {
    if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0)
        throw ValidationError("negative confusion count");
    if (cm.tp + cm.fn < 1)
        throw ValidationError("metric_suite on a topic without included documents");
    if (!(cfg.beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(cfg.wss_recall_level > 0.0) || cfg.wss_recall_level > 1.0)
        throw ConfigError("wss recall level must lie in (0, 1]");

    TopicEvaluation ev;
    ev.topic_id = std::move(topic_id);
    ev.confusion = cm;
    ev.skipped_unlabeled = skipped_unlabeled;

    const auto tp = static_cast<double>(cm.tp);
    const auto fp = static_cast<double>(cm.fp);
    const auto tn = static_cast<double>(cm.tn);
    const auto fn = static_cast<double>(cm.fn);
    const auto n = static_cast<double>(cm.total());

    ev.precision = cm.tp + cm.fp > 0 ? tp / (tp + fp) : 0.0;
    ev.recall = tp / (tp + fn);

    const double b2 = cfg.beta * cfg.beta;
    const double f_den = b2 * ev.precision + ev.recall;
    ev.f_beta = f_den > 0.0 ? (1.0 + b2) * ev.precision * ev.recall / f_den : 0.0;

    double tn_rate;
    if (cm.tn + cm.fp > 0) {
        tn_rate = tn / (tn + fp);
    } else {
        // No excluded documents: the TN requirement is vacuously met.
        tn_rate = 1.0;
        ev.vacuous_tn_rate = true;
    }
    ev.b_ac = 0.5 * (ev.recall + tn_rate);

    ev.wss = (tn + fn) / n - (1.0 - cfg.wss_recall_level);
    ev.success = ev.recall >= cfg.success_target;
    return ev;
}

DatasetEvaluation macro_average(std::span<const TopicEvaluation> evals, const MetricConfig& cfg) {
    if (evals.empty()) throw ValidationError("macro_average over zero topics");
    DatasetEvaluation out;
    out.topic_count = evals.size();
    std::size_t successes = 0;
    for (const auto& ev : evals) {
        out.precision += ev.precision;
        out.recall += ev.recall;
        out.f_beta += ev.f_beta;
        out.b_ac += ev.b_ac;
        out.wss += ev.wss;
        if (ev.success) ++successes;
        out.pooled += ev.confusion;
    }
    const auto n = static_cast<double>(evals.size());
    out.precision /= n;
    out.recall /= n;
    out.f_beta /= n;
    out.b_ac /= n;
    out.wss /= n;
    out.success_rate = static_cast<double>(successes) / n;

    const TopicEvaluation micro = metric_suite(out.pooled, cfg);
    out.micro_precision = micro.precision;
    out.micro_recall = micro.recall;
    out.micro_f_beta = micro.f_beta;
    out.micro_b_ac = micro.b_ac;
    out.micro_wss = micro.wss;
    return out;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("paired_t_test on lists of different length");
    const std::size_t n = a.size();
    if (n < 2) throw ValidationError("paired_t_test needs at least 2 pairs");

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double variance = ss / static_cast<double>(n - 1);

    TTestResult res;
    if (variance == 0.0) {
        if (mean == 0.0) return {0.0, 1.0, false};
        res.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
        res.p = 0.0;
        res.degenerate_variance = true;
        return res;
    }
    res.t = mean / std::sqrt(variance / static_cast<double>(n));
    if (res.t == 0.0) {
        res.p = 1.0;
        return res;
    }
    boost::math::students_t dist(static_cast<double>(n - 1));
    res.p = 2.0 * boost::math::cdf(dist, -std::abs(res.t));
    return res;
}

std::vector<double> bonferroni(std::span<const double> p_values, int comparisons) {
    if (comparisons < static_cast<int>(p_values.size()))
        throw ValidationError("Bonferroni comparisons must cover every p-value");
    std::vector<double> out;
    out.reserve(p_values.size());
    for (double p : p_values) out.push_back(std::min(1.0, p * static_cast<double>(comparisons)));
    return out;
}

namespace {

double metric_value(const TopicEvaluation& ev, const std::string& metric) {
    if (metric == "precision") return ev.precision;
    if (metric == "recall") return ev.recall;
    if (metric == "b_ac") return ev.b_ac;
    if (metric == "f_beta") return ev.f_beta;
    if (metric == "success") return ev.success ? 1.0 : 0.0;
    if (metric == "wss") return ev.wss;
    throw ValidationError("unknown metric \"" + metric + "\"");
}

} // namespace

SignificanceReport significance(
    const std::vector<std::pair<std::string, std::vector<TopicEvaluation>>>& per_method,
    const std::vector<std::pair<std::string, std::string>>& pairs, double alpha) {
    SignificanceReport report;
    report.alpha = alpha;
    report.comparisons = static_cast<int>(pairs.size());
    if (pairs.empty()) return report;

    auto find_method = [&](const std::string& id) -> const std::vector<TopicEvaluation>& {
        for (const auto& [method, evals] : per_method)
            if (method == id) return evals;
        throw ValidationError("significance: unknown method \"" + id + "\"");
    };

    for (const auto& metric : kMetricNames) {
        for (const auto& [ma, mb] : pairs) {
            const auto& ea = find_method(ma);
            const auto& eb = find_method(mb);
            if (ea.size() != eb.size())
                throw ValidationError("significance: topic vectors differ in length for " + ma +
                                      " vs " + mb);
            std::vector<double> va, vb;
            va.reserve(ea.size());
            vb.reserve(eb.size());
            for (std::size_t i = 0; i < ea.size(); ++i) {
                if (ea[i].topic_id != eb[i].topic_id)
                    throw ValidationError("significance: topic vectors are not aligned");
                va.push_back(metric_value(ea[i], metric));
                vb.push_back(metric_value(eb[i], metric));
            }
            const TTestResult t = paired_t_test(va, vb);
            PairwiseTest pw;
            pw.method_a = ma;
            pw.method_b = mb;
            pw.metric = metric;
            pw.t = t.t;
            pw.p_raw = t.p;
            pw.p_adjusted = std::min(1.0, t.p * static_cast<double>(report.comparisons));
            pw.significant = pw.p_adjusted < alpha;
            pw.degenerate_variance = t.degenerate_variance;
            report.tests.push_back(std::move(pw));
        }
    }
    return report;
}

nlohmann::ordered_json SignificanceReport::to_json() const {
    nlohmann::ordered_json o;
    o["comparisons"] = comparisons;
    o["alpha"] = alpha;
    o["correction"] = "bonferroni";
    auto arr = nlohmann::ordered_json::array();
    for (const auto& t : tests) {
        nlohmann::ordered_json e;
        e["method_a"] = t.method_a;
        e["method_b"] = t.method_b;
        e["metric"] = t.metric;
        if (std::isfinite(t.t))
            e["t"] = t.t;
        else
            e["t"] = t.t > 0 ? "inf" : "-inf";
        e["p_raw"] = t.p_raw;
        e["p_adjusted"] = t.p_adjusted;
        e["significant"] = t.significant;
        if (t.degenerate_variance) e["degenerate_variance"] = true;
        arr.push_back(std::move(e));
    }
    o["tests"] = std::move(arr);
    return o;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

std::string render_csv(std::span<const ReportRow> rows, std::span<const std::string> header_notes,
                       bool verbose) {
    std::string out;
    for (const auto& note : header_notes) out += "# " + note + "\n";
    out += "method,setting,P,R,B-AC,F3,Suc,WSS";
    if (verbose) out += ",micro_P,micro_R,micro_B-AC,micro_F3,micro_WSS";
    out += "\n";
    for (const auto& row : rows) {
        const auto& e = row.eval;
        out += row.method_id + "," + row.setting + "," + fmt(e.precision) + "," + fmt(e.recall) +
               "," + fmt(e.b_ac) + "," + fmt(e.f_beta) + "," + fmt(e.success_rate) + "," +
               fmt(e.wss);
        if (verbose)
            out += "," + fmt(e.micro_precision) + "," + fmt(e.micro_recall) + "," +
                   fmt(e.micro_b_ac) + "," + fmt(e.micro_f_beta) + "," + fmt(e.micro_wss);
        out += "\n";
    }
    return out;
}

std::string render_text(std::span<const ReportRow> rows, std::span<const std::string> header_notes,
                        bool verbose) {
    std::size_t method_w = 6, setting_w = 7;
    for (const auto& row : rows) {
        method_w = std::max(method_w, row.method_id.size());
        setting_w = std::max(setting_w, row.setting.size());
    }
    std::ostringstream out;
    for (const auto& note : header_notes) out << "# " << note << "\n";
    auto pad = [&](const std::string& s, std::size_t w) {
        out << s << std::string(w - s.size() + 2, ' ');
    };
    pad("method", method_w);
    pad("setting", setting_w);
    out << "     P       R    B-AC      F3     Suc     WSS";
    if (verbose) out << "  microP  microR";
    out << "\n";
    for (const auto& row : rows) {
        const auto& e = row.eval;
        pad(row.method_id, method_w);
        pad(row.setting, setting_w);
        out << fmt(e.precision) << "  " << fmt(e.recall) << "  " << fmt(e.b_ac) << "  "
            << fmt(e.f_beta) << "  " << fmt(e.success_rate) << "  " << fmt(e.wss);
        if (verbose) out << "  " << fmt(e.micro_precision) << "  " << fmt(e.micro_recall);
        out << "\n";
    }
    return out.str();
}

} // namespace screenlm::evaluation
