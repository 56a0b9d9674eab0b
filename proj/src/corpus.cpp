#include "screenlm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

namespace screenlm::corpus {

using jsonl::ordered_json;

std::optional<int> LabelSet::find(const std::string& topic_id, const std::string& doc_id) const {
    auto t = by_topic.find(topic_id);
    if (t == by_topic.end()) return std::nullopt;
    auto d = t->second.find(doc_id);
    if (d == t->second.end()) return std::nullopt;
    return d->second;
}

std::size_t LabelSet::size() const {
    std::size_t n = 0;
    for (const auto& [_, docs] : by_topic) n += docs.size();
    return n;
}

const Topic* Dataset::find_topic(const std::string& topic_id) const {
    for (const auto& t : topics)
        if (t.topic_id == topic_id) return &t;
    return nullptr;
}

const std::vector<Candidate>& Dataset::candidates_for(const std::string& topic_id) const {
    auto it = candidates.find(topic_id);
    if (it == candidates.end())
        throw ValidationError("no candidates for topic " + topic_id);
    return it->second;
}

std::vector<Topic> load_topics(const std::filesystem::path& path) {
    std::vector<Topic> topics;
    std::unordered_map<std::string, std::size_t> seen; // topic_id -> line
    jsonl::for_each(path, [&](std::size_t line, const ordered_json& obj) {
        Topic t;
        t.topic_id = jsonl::require_string(obj, "topic_id", path, line);
        t.title = jsonl::require_string(obj, "title", path, line);
        if (t.topic_id.empty())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": empty topic_id");
        if (t.title.empty())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": empty title");
        auto [it, inserted] = seen.emplace(t.topic_id, line);
        if (!inserted)
            throw ValidationError(path.string() + ":" + std::to_string(line) + ": duplicate topic_id \"" +
                                  t.topic_id + "\" (first at line " + std::to_string(it->second) + ")");
        topics.push_back(std::move(t));
    });
    return topics;
}

CandidateMap load_candidates(const std::filesystem::path& path) {
    CandidateMap out;
    // (topic_id \x1f doc_id) -> first line number, for duplicate reporting
    std::unordered_map<std::string, std::size_t> seen;
    jsonl::for_each(path, [&](std::size_t line, const ordered_json& obj) {
        const std::string topic_id = jsonl::require_string(obj, "topic_id", path, line);
        Candidate c;
        c.doc_id = jsonl::require_string(obj, "doc_id", path, line);
        c.title = jsonl::require_string(obj, "title", path, line);
        c.abstract_text = jsonl::optional_string(obj, "abstract", path, line);
        if (topic_id.empty() || c.doc_id.empty())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": empty topic_id or doc_id");
        if (c.title.empty())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": empty title");
        const std::string key = topic_id + '\x1f' + c.doc_id;
        auto [it, inserted] = seen.emplace(key, line);
        if (!inserted)
            throw ValidationError(path.string() + ":" + std::to_string(line) + ": duplicate document \"" +
                                  c.doc_id + "\" for topic \"" + topic_id + "\" (first at line " +
                                  std::to_string(it->second) + ")");
        out[topic_id].push_back(std::move(c));
    });
    return out;
}

LabelSet parse_qrels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    LabelSet labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string topic_id, iteration, doc_id, label_str, extra;
        if (!(ss >> topic_id)) continue; // blank line
        if (!(ss >> iteration >> doc_id >> label_str) || (ss >> extra))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected 4 whitespace-separated fields");
        int label;
        if (label_str == "0")
            label = 0;
        else if (label_str == "1")
            label = 1;
        else
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1, got \"" +
                             label_str + "\"");
        auto& docs = labels.by_topic[topic_id];
        auto [it, inserted] = docs.insert_or_assign(doc_id, label);
        (void)it;
        if (!inserted) ++labels.duplicate_overwrites;
    }
    return labels;
}

SeedMap load_seeds(const std::filesystem::path& path) {
    SeedMap out;
    jsonl::for_each(path, [&](std::size_t line, const ordered_json& obj) {
        const std::string topic_id = jsonl::require_string(obj, "topic_id", path, line);
        SeedDoc s;
        s.doc_id = jsonl::require_string(obj, "doc_id", path, line);
        s.title = jsonl::optional_string(obj, "title", path, line);
        s.abstract_text = jsonl::optional_string(obj, "abstract", path, line);
        s.non_retrieved = jsonl::optional_bool(obj, "non_retrieved", path, line);
        if (topic_id.empty() || s.doc_id.empty())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": empty topic_id or doc_id");
        out[topic_id].push_back(std::move(s));
    });
    return out;
}

Dataset assemble_dataset(std::vector<Topic> topics, CandidateMap candidates, LabelSet labels,
                         std::optional<SeedMap> seeds) {
    // Re-validate the pieces; they may come from code paths other than the loaders.
    {
        std::unordered_set<std::string> ids;
        for (const auto& t : topics) {
            if (t.topic_id.empty() || t.title.empty())
                throw ValidationError("topic with empty id or title");
            if (!ids.insert(t.topic_id).second)
                throw ValidationError("duplicate topic_id \"" + t.topic_id + "\"");
        }
    }

    Dataset ds;
    ds.labeled = !labels.empty();
    ds.report.duplicate_label_overwrites = labels.duplicate_overwrites;

    std::unordered_set<std::string> topic_ids;
    for (const auto& t : topics) topic_ids.insert(t.topic_id);

    // Candidate groups for unknown topics cannot be screened against a title.
    for (auto it = candidates.begin(); it != candidates.end();) {
        if (!topic_ids.count(it->first)) {
            ++ds.report.dropped_candidate_topics;
            it = candidates.erase(it);
        } else {
            ++it;
        }
    }

    // Keep only labels that refer to a known (topic, candidate) pair.
    LabelSet kept_labels;
    kept_labels.duplicate_overwrites = labels.duplicate_overwrites;
    for (const auto& [topic_id, docs] : labels.by_topic) {
        auto cit = candidates.find(topic_id);
        if (cit == candidates.end()) {
            ds.report.dropped_labels += docs.size();
            continue;
        }
        std::unordered_set<std::string> doc_ids;
        for (const auto& c : cit->second) doc_ids.insert(c.doc_id);
        for (const auto& [doc_id, label] : docs) {
            if (doc_ids.count(doc_id))
                kept_labels.by_topic[topic_id].emplace(doc_id, label);
            else
                ++ds.report.dropped_labels;
        }
    }

    // A topic is evaluable only if at least one of its candidates is labeled
    // included. Unlabeled datasets are kept whole for screening-only runs.
    for (auto& t : topics) {
        auto cit = candidates.find(t.topic_id);
        const bool has_candidates = cit != candidates.end() && !cit->second.empty();
        bool keep = has_candidates;
        if (keep && ds.labeled) {
            bool any_included = false;
            auto lit = kept_labels.by_topic.find(t.topic_id);
            if (lit != kept_labels.by_topic.end()) {
                for (const auto& [_, label] : lit->second) {
                    if (label == 1) {
                        any_included = true;
                        break;
                    }
                }
            }
            keep = any_included;
        }
        if (keep) {
            ds.topics.push_back(std::move(t));
        } else {
            ds.report.removed_topics.push_back(t.topic_id);
            candidates.erase(t.topic_id);
            kept_labels.by_topic.erase(t.topic_id);
        }
    }
    if (ds.labeled && ds.topics.empty())
        throw ValidationError("no evaluable topics: every topic lacks an included document");

    ds.candidates = std::move(candidates);
    ds.labels = std::move(kept_labels);

    if (seeds) {
        ds.has_seeds = true;
        for (auto& [topic_id, list] : *seeds) {
            if (!ds.candidates.count(topic_id)) {
                ds.report.dropped_seeds += list.size();
                continue;
            }
            std::unordered_map<std::string, const Candidate*> by_doc;
            for (const auto& c : ds.candidates.at(topic_id)) by_doc.emplace(c.doc_id, &c);
            for (auto& s : list) {
                auto hit = by_doc.find(s.doc_id);
                if (hit != by_doc.end()) {
                    // Retrieved seed: the candidate list owns the text.
                    s.non_retrieved = false;
                    s.title = hit->second->title;
                    s.abstract_text = hit->second->abstract_text;
                    ds.seeds[topic_id].push_back(std::move(s));
                } else if (!s.title.empty()) {
                    s.non_retrieved = true;
                    ds.seeds[topic_id].push_back(std::move(s));
                } else {
                    ++ds.report.dropped_seeds; // nothing to score it with
                }
            }
        }
    }
    return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::string topics_out;
    for (const auto& t : ds.topics) {
        ordered_json o;
        o["topic_id"] = t.topic_id;
        o["title"] = t.title;
        topics_out += o.dump();
        topics_out += '\n';
    }
    jsonl::write_file_atomic(dir / "topics.jsonl", topics_out);

    std::string cand_out;
    for (const auto& t : ds.topics) {
        auto it = ds.candidates.find(t.topic_id);
        if (it == ds.candidates.end()) continue;
        for (const auto& c : it->second) {
            ordered_json o;
            o["topic_id"] = t.topic_id;
            o["doc_id"] = c.doc_id;
            o["title"] = c.title;
            o["abstract"] = c.abstract_text;
            cand_out += o.dump();
            cand_out += '\n';
        }
    }
    jsonl::write_file_atomic(dir / "candidates.jsonl", cand_out);

    std::string qrels_out;
    for (const auto& [topic_id, docs] : ds.labels.by_topic) {
        std::vector<std::pair<std::string, int>> sorted(docs.begin(), docs.end());
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [doc_id, label] : sorted)
            qrels_out += topic_id + " 0 " + doc_id + " " + std::to_string(label) + "\n";
    }
    jsonl::write_file_atomic(dir / "qrels.txt", qrels_out);

    if (ds.has_seeds) {
        std::string seeds_out;
        for (const auto& [topic_id, list] : ds.seeds) {
            for (const auto& s : list) {
                ordered_json o;
                o["topic_id"] = topic_id;
                o["doc_id"] = s.doc_id;
                o["title"] = s.title;
                o["abstract"] = s.abstract_text;
                o["non_retrieved"] = s.non_retrieved;
                seeds_out += o.dump();
                seeds_out += '\n';
            }
        }
        jsonl::write_file_atomic(dir / "seeds.jsonl", seeds_out);
    }
}

Dataset read_dataset(const std::filesystem::path& dir) {
    auto topics = load_topics(dir / "topics.jsonl");
    auto candidates = load_candidates(dir / "candidates.jsonl");
    LabelSet labels;
    if (std::filesystem::exists(dir / "qrels.txt")) labels = parse_qrels(dir / "qrels.txt");
    std::optional<SeedMap> seeds;
    if (std::filesystem::exists(dir / "seeds.jsonl")) seeds = load_seeds(dir / "seeds.jsonl");
    return assemble_dataset(std::move(topics), std::move(candidates), std::move(labels), std::move(seeds));
}

bool structurally_equal(const Dataset& a, const Dataset& b) {
    return a.topics == b.topics && a.candidates == b.candidates &&
           a.labels.by_topic == b.labels.by_topic && a.seeds == b.seeds &&
           a.has_seeds == b.has_seeds && a.labeled == b.labeled;
}

} // namespace screenlm::corpus
