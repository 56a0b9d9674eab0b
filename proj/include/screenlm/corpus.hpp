#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace screenlm::corpus {

/// A review question; documents are screened against its title.
struct Topic {
    std::string topic_id;
    std::string title;

    bool operator==(const Topic&) const = default;
};

/// A retrieved document awaiting an include/exclude decision.
struct Candidate {
    std::string doc_id;
    std::string title;
    std::string abstract_text; // may be empty

    bool operator==(const Candidate&) const = default;
};

/// A seed study known before searching. Seeds outside the retrieved
/// candidate set carry their own text and are flagged non_retrieved;
/// they are usable for threshold calibration but never evaluated.
struct SeedDoc {
    std::string doc_id;
    std::string title;
    std::string abstract_text;
    bool non_retrieved = false;

    bool operator==(const SeedDoc&) const = default;
};

/// Binary relevance labels: 1 = included, 0 = excluded.
struct LabelSet {
    std::map<std::string, std::unordered_map<std::string, int>> by_topic;
    std::size_t duplicate_overwrites = 0; // later qrels lines replacing earlier ones

    std::optional<int> find(const std::string& topic_id, const std::string& doc_id) const;
    std::size_t size() const;
    bool empty() const { return size() == 0; }
};

using CandidateMap = std::map<std::string, std::vector<Candidate>>;
using SeedMap = std::map<std::string, std::vector<SeedDoc>>;

struct AssemblyReport {
    std::vector<std::string> removed_topics;   // no included document among candidates
    std::size_t dropped_labels = 0;            // labels referencing unknown documents
    std::size_t dropped_seeds = 0;             // seeds with neither candidate match nor own text
    std::size_t dropped_candidate_topics = 0;  // candidate groups for unknown topics
    std::size_t duplicate_label_overwrites = 0;
};

/// Immutable after assembly; safe to share read-only across threads.
struct Dataset {
    std::vector<Topic> topics; // input order, minus removed topics
    CandidateMap candidates;
    LabelSet labels;
    SeedMap seeds;
    bool has_seeds = false;
    bool labeled = false;
    AssemblyReport report;

    const Topic* find_topic(const std::string& topic_id) const;
    const std::vector<Candidate>& candidates_for(const std::string& topic_id) const;
};

std::vector<Topic> load_topics(const std::filesystem::path& path);
CandidateMap load_candidates(const std::filesystem::path& path);
LabelSet parse_qrels(const std::filesystem::path& path);
SeedMap load_seeds(const std::filesystem::path& path);

/// Validates cross-references and drops what cannot be used:
///   - topics without candidates, or (when labels exist) without any
///     included document among their candidates, are removed and reported;
///   - labels for unknown documents are dropped with a count;
///   - seeds that neither match a candidate nor carry their own title are
///     dropped with a count.
/// Throws ValidationError when label data was supplied but no evaluable
/// topic survives.
Dataset assemble_dataset(std::vector<Topic> topics, CandidateMap candidates, LabelSet labels,
                         std::optional<SeedMap> seeds = std::nullopt);

/// Canonical on-disk form under `dir`: topics.jsonl, candidates.jsonl,
/// qrels.txt and (when seeds are present) seeds.jsonl. Byte-deterministic.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Data equality ignoring the assembly report (round-trip checks).
bool structurally_equal(const Dataset& a, const Dataset& b);

} // namespace screenlm::corpus
