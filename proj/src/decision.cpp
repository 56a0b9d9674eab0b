#include "screenlm/decision.hpp"

#include <algorithm>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

namespace screenlm::decision {

using jsonl::ordered_json;

Decision decide_uncalibrated(const scoring::ScoreRecord& record, IndeterminatePolicy policy) {
    if (record.indeterminate)
        return {policy == IndeterminatePolicy::include, true};
    return {record.p_yes >= record.p_no, false};
}

double raw_margin(double p_yes, double p_no) {
    return p_yes >= p_no ? p_yes - p_no : 0.0;
}

double raw_margin(const scoring::ScoreRecord& record) {
    return raw_margin(record.p_yes, record.p_no);
}

std::vector<double> normalize_topic(std::span<const double> raw_margins) {
    if (raw_margins.empty()) throw ValidationError("normalize_topic on an empty topic");
    const auto [min_it, max_it] = std::minmax_element(raw_margins.begin(), raw_margins.end());
    const double lo = *min_it, hi = *max_it;
    std::vector<double> out(raw_margins.size());
    if (hi > lo) {
        const double range = hi - lo;
        for (std::size_t i = 0; i < raw_margins.size(); ++i) out[i] = (raw_margins[i] - lo) / range;
    } else {
        std::fill(out.begin(), out.end(), 1.0);
    }
    return out;
}

bool decide_calibrated(double s_norm, double theta) {
    return s_norm >= theta;
}

Decision fuse_uncalibrated(std::span<const scoring::ScoreRecord> records, IndeterminatePolicy policy) {
    if (records.empty()) throw ValidationError("fuse_uncalibrated with no records");
    bool all_indeterminate = true;
    double sum_yes = 0.0, sum_no = 0.0;
    for (const auto& r : records) {
        if (r.topic_id != records.front().topic_id || r.doc_id != records.front().doc_id)
            throw ValidationError("fuse_uncalibrated across different (topic, document) pairs: " +
                                  records.front().topic_id + "/" + records.front().doc_id + " vs " +
                                  r.topic_id + "/" + r.doc_id);
        sum_yes += r.p_yes;
        sum_no += r.p_no;
        all_indeterminate = all_indeterminate && r.indeterminate;
    }
    if (all_indeterminate)
        return {policy == IndeterminatePolicy::include, true};
    return {sum_yes >= sum_no, false};
}

bool fuse_calibrated(std::span<const double> s_norms, double theta) {
    if (s_norms.empty()) throw ValidationError("fuse_calibrated with no scores");
    double sum = 0.0;
    for (double s : s_norms) sum += s;
    return sum / static_cast<double>(s_norms.size()) >= theta;
}

void write_decisions(const std::filesystem::path& path, std::span<const DecisionRecord> records) {
    std::string out;
    for (const auto& r : records) {
        ordered_json o;
        o["topic_id"] = r.topic_id;
        o["doc_id"] = r.doc_id;
        o["method_id"] = r.method_id;
        o["setting"] = r.setting;
        if (r.s_norm) o["s_norm"] = *r.s_norm;
        if (r.theta) o["theta"] = *r.theta;
        o["include"] = r.include;
        out += o.dump();
        out += '\n';
    }
    jsonl::write_file_atomic(path, out);
}

std::vector<DecisionRecord> read_decisions(const std::filesystem::path& path) {
    std::vector<DecisionRecord> out;
    jsonl::for_each(path, [&](std::size_t line, const ordered_json& o) {
        DecisionRecord r;
        r.topic_id = jsonl::require_string(o, "topic_id", path, line);
        r.doc_id = jsonl::require_string(o, "doc_id", path, line);
        r.method_id = jsonl::require_string(o, "method_id", path, line);
        r.setting = jsonl::require_string(o, "setting", path, line);
        if (o.contains("s_norm") && o["s_norm"].is_number()) r.s_norm = o["s_norm"].get<double>();
        if (o.contains("theta") && o["theta"].is_number()) r.theta = o["theta"].get<double>();
        auto it = o.find("include");
        if (it == o.end() || !it->is_boolean())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": missing boolean \"include\"");
        r.include = it->get<bool>();
        out.push_back(std::move(r));
    });
    return out;
}

} // namespace screenlm::decision
