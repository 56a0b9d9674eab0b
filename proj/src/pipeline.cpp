#include "screenlm/pipeline.hpp"

#include <algorithm>
#include <unordered_map>

#include "screenlm/errors.hpp"

namespace screenlm::pipeline {

namespace {

void check_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw ValidationError(std::string(what) + ": span size " + std::to_string(got) +
                              " != " + std::to_string(want));
}

using IndexedRecords = std::unordered_map<std::string, const scoring::ScoreRecord*>;

} // namespace

ScoreMatrix make_matrix(const corpus::Dataset& ds, std::span<const scoring::ScoreRecord> records) {
    // Index once; candidate order then drives the layout.
    std::unordered_map<std::string, IndexedRecords> by_topic;
    for (const auto& r : records) by_topic[r.topic_id][r.doc_id] = &r;

    ScoreMatrix m;
    m.offsets.push_back(0);
    for (const auto& topic : ds.topics) {
        const auto& candidates = ds.candidates_for(topic.topic_id);
        auto topic_records = by_topic.find(topic.topic_id);
        for (const auto& c : candidates) {
            const scoring::ScoreRecord* rec = nullptr;
            if (topic_records != by_topic.end()) {
                auto it = topic_records->second.find(c.doc_id);
                if (it != topic_records->second.end()) rec = it->second;
            }
            if (rec == nullptr)
                throw ValidationError("no score record for " + topic.topic_id + "/" + c.doc_id);
            m.doc_ids.push_back(c.doc_id);
            m.p_yes.push_back(rec->p_yes);
            m.p_no.push_back(rec->p_no);
            m.indeterminate.push_back(rec->indeterminate ? 1 : 0);
            const auto label = ds.labels.find(topic.topic_id, c.doc_id);
            m.label.push_back(label ? static_cast<std::int8_t>(*label) : std::int8_t{-1});
        }
        m.topic_ids.push_back(topic.topic_id);
        m.offsets.push_back(m.doc_ids.size());
    }
    return m;
}

void margins(const ScoreMatrix& m, std::span<double> out, Exec exec) {
    check_size(out.size(), m.docs(), "margins");
    const auto n = static_cast<std::int64_t>(m.docs());
    if (exec == Exec::serial) {
        for (std::int64_t i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] = decision::raw_margin(m.p_yes[static_cast<std::size_t>(i)],
                                                                    m.p_no[static_cast<std::size_t>(i)]);
        return;
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = decision::raw_margin(m.p_yes[static_cast<std::size_t>(i)],
                                                                m.p_no[static_cast<std::size_t>(i)]);
}

namespace {

// Per-topic min-max; identical arithmetic to decision::normalize_topic so the
// kernels stay bit-compatible with the scalar route.
inline void normalize_slice(std::span<const double> raw, std::span<double> out, std::size_t begin,
                            std::size_t end) {
    double lo = raw[begin], hi = raw[begin];
    for (std::size_t i = begin + 1; i < end; ++i) {
        lo = std::min(lo, raw[i]);
        hi = std::max(hi, raw[i]);
    }
    if (hi > lo) {
        const double range = hi - lo;
        for (std::size_t i = begin; i < end; ++i) out[i] = (raw[i] - lo) / range;
    } else {
        for (std::size_t i = begin; i < end; ++i) out[i] = 1.0;
    }
}

} // namespace

void normalize(const ScoreMatrix& m, std::span<const double> raw, std::span<double> out, Exec exec) {
    check_size(raw.size(), m.docs(), "normalize(raw)");
    check_size(out.size(), m.docs(), "normalize(out)");
    const auto t_count = static_cast<std::int64_t>(m.topics());
    if (exec == Exec::serial) {
        for (std::int64_t t = 0; t < t_count; ++t) {
            const auto [b, e] = m.topic_range(static_cast<std::size_t>(t));
            if (b != e) normalize_slice(raw, out, b, e);
        }
        return;
    }
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t t = 0; t < t_count; ++t) {
        const auto [b, e] = m.topic_range(static_cast<std::size_t>(t));
        if (b != e) normalize_slice(raw, out, b, e);
    }
}

void decide_uncalibrated(const ScoreMatrix& m, std::span<std::uint8_t> out,
                         decision::IndeterminatePolicy policy, Exec exec) {
    check_size(out.size(), m.docs(), "decide_uncalibrated");
    const bool include_indeterminate = policy == decision::IndeterminatePolicy::include;
    const auto n = static_cast<std::int64_t>(m.docs());
    auto decide = [&](std::size_t i) -> std::uint8_t {
        if (m.indeterminate[i]) return include_indeterminate ? 1 : 0;
        return m.p_yes[i] >= m.p_no[i] ? 1 : 0;
    };
    if (exec == Exec::serial) {
        for (std::int64_t i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] = decide(static_cast<std::size_t>(i));
        return;
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = decide(static_cast<std::size_t>(i));
}

void decide_calibrated(const ScoreMatrix& m, std::span<const double> s_norm,
                       std::span<const double> theta_per_topic, std::span<std::uint8_t> out,
                       Exec exec) {
    check_size(s_norm.size(), m.docs(), "decide_calibrated(s_norm)");
    check_size(theta_per_topic.size(), m.topics(), "decide_calibrated(theta)");
    check_size(out.size(), m.docs(), "decide_calibrated(out)");
    const auto t_count = static_cast<std::int64_t>(m.topics());
    if (exec == Exec::serial) {
        for (std::int64_t t = 0; t < t_count; ++t) {
            const auto [b, e] = m.topic_range(static_cast<std::size_t>(t));
            const double theta = theta_per_topic[static_cast<std::size_t>(t)];
            for (std::size_t i = b; i < e; ++i) out[i] = s_norm[i] >= theta ? 1 : 0;
        }
        return;
    }
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t t = 0; t < t_count; ++t) {
        const auto [b, e] = m.topic_range(static_cast<std::size_t>(t));
        const double theta = theta_per_topic[static_cast<std::size_t>(t)];
        for (std::size_t i = b; i < e; ++i) out[i] = s_norm[i] >= theta ? 1 : 0;
    }
}

void confusion_by_topic(const ScoreMatrix& m, std::span<const std::uint8_t> include,
                        std::span<evaluation::ConfusionMatrix> out, std::span<std::size_t> skipped,
                        Exec exec) {
    check_size(include.size(), m.docs(), "confusion_by_topic(include)");
    check_size(out.size(), m.topics(), "confusion_by_topic(out)");
    check_size(skipped.size(), m.topics(), "confusion_by_topic(skipped)");
    const auto t_count = static_cast<std::int64_t>(m.topics());
    auto count_topic = [&](std::size_t t) {
        const auto [b, e] = m.topic_range(t);
        evaluation::ConfusionMatrix cm;
        std::size_t skip = 0;
        for (std::size_t i = b; i < e; ++i) {
            if (m.label[i] < 0) {
                ++skip;
                continue;
            }
            const bool relevant = m.label[i] == 1;
            if (include[i])
                relevant ? ++cm.tp : ++cm.fp;
            else
                relevant ? ++cm.fn : ++cm.tn;
        }
        out[t] = cm;
        skipped[t] = skip;
    };
    if (exec == Exec::serial) {
        for (std::int64_t t = 0; t < t_count; ++t) count_topic(static_cast<std::size_t>(t));
        return;
    }
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t t = 0; t < t_count; ++t) count_topic(static_cast<std::size_t>(t));
}

namespace {

std::size_t count_degenerate_topics(const ScoreMatrix& m, std::span<const double> raw) {
    std::size_t degenerate = 0;
    for (std::size_t t = 0; t < m.topics(); ++t) {
        const auto [b, e] = m.topic_range(t);
        if (b == e) continue;
        const auto [lo, hi] = std::minmax_element(raw.begin() + static_cast<std::ptrdiff_t>(b),
                                                  raw.begin() + static_cast<std::ptrdiff_t>(e));
        if (*lo == *hi) ++degenerate;
    }
    return degenerate;
}

} // namespace

ScreenResult screen_uncalibrated(const ScoreMatrix& m, decision::IndeterminatePolicy policy,
                                 Exec exec) {
    ScreenResult r;
    r.s_raw.resize(m.docs());
    r.s_norm.resize(m.docs());
    r.include.resize(m.docs());
    margins(m, r.s_raw, exec);
    normalize(m, r.s_raw, r.s_norm, exec);
    decide_uncalibrated(m, r.include, policy, exec);
    r.degenerate_topics = count_degenerate_topics(m, r.s_raw);
    return r;
}

ScreenResult screen_calibrated(const ScoreMatrix& m, std::span<const double> theta_per_topic,
                               Exec exec) {
    ScreenResult r;
    r.s_raw.resize(m.docs());
    r.s_norm.resize(m.docs());
    r.include.resize(m.docs());
    margins(m, r.s_raw, exec);
    normalize(m, r.s_raw, r.s_norm, exec);
    decide_calibrated(m, r.s_norm, theta_per_topic, r.include, exec);
    r.degenerate_topics = count_degenerate_topics(m, r.s_raw);
    return r;
}

std::vector<evaluation::TopicEvaluation> evaluate(const ScoreMatrix& m,
                                                  std::span<const std::uint8_t> include,
                                                  const evaluation::MetricConfig& cfg, Exec exec) {
    std::vector<evaluation::ConfusionMatrix> cms(m.topics());
    std::vector<std::size_t> skipped(m.topics());
    confusion_by_topic(m, include, cms, skipped, exec);
    for (std::size_t t = 0; t < m.topics(); ++t) {
        if (cms[t].total() == 0)
            throw ValidationError("topic " + m.topic_ids[t] + " has no labeled documents");
        if (cms[t].tp + cms[t].fn < 1)
            throw ValidationError("topic " + m.topic_ids[t] + " has no labeled included document");
    }
    std::vector<evaluation::TopicEvaluation> evals(m.topics());
    const auto t_count = static_cast<std::int64_t>(m.topics());
    if (exec == Exec::serial) {
        for (std::int64_t t = 0; t < t_count; ++t) {
            const auto u = static_cast<std::size_t>(t);
            evals[u] = evaluation::metric_suite(cms[u], cfg, m.topic_ids[u], skipped[u]);
        }
        return evals;
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < t_count; ++t) {
        const auto u = static_cast<std::size_t>(t);
        evals[u] = evaluation::metric_suite(cms[u], cfg, m.topic_ids[u], skipped[u]);
    }
    return evals;
}

} // namespace screenlm::pipeline
