#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "screenlm/corpus.hpp"
#include "screenlm/prompting.hpp"

namespace screenlm::scoring {

/// Yes/no token masses for one (method, topic, document) triple.
/// indeterminate means neither answer token appeared in the returned top-K,
/// in which case both masses are zero.
struct ScoreRecord {
    std::string method_id;
    std::string topic_id;
    std::string doc_id;
    double p_yes = 0.0;
    double p_no = 0.0;
    bool indeterminate = false;
    std::string prompt_hash;

    bool operator==(const ScoreRecord&) const = default;
};

struct TokenProb {
    std::string token;
    double value; // probability, or log-probability when log_space is set
};

/// Next-token distribution as returned by a backend; usually top-K truncated.
/// Tokens outside the returned list are treated as probability zero.
struct TokenDistribution {
    std::vector<TokenProb> entries;
    bool log_space = false;
};

struct RetryPolicy {
    int max_attempts = 3; // total tries, including the first
    int backoff_ms = 250; // multiplied by the attempt number
};

struct BackendProfile {
    std::string method_id;
    std::string endpoint;  // e.g. http://localhost:8000
    std::string model;
    std::string auth_env;  // name of the env var holding the credential
    int top_k = 20;
    std::string prompt_prefix; // special-token wrapping, applied at the boundary
    std::string prompt_suffix;
    int max_inflight = 4;
    RetryPolicy retry;
    std::vector<std::string> yes_variants{"yes"};
    std::vector<std::string> no_variants{"no"};
};

void validate_profile(const BackendProfile& profile);

struct YesNoMass {
    double p_yes = 0.0;
    double p_no = 0.0;
    bool indeterminate = false;
};

/// Sums the mass of every token whose trimmed, case-folded surface is in the
/// variant set. Log-space distributions are converted to linear first, so all
/// downstream math stays in probability space.
YesNoMass extract_yes_no(const TokenDistribution& dist, std::span<const std::string> yes_variants,
                         std::span<const std::string> no_variants);

std::string normalize_token_surface(std::string_view token);

struct ScoreRequest {
    std::string topic_id;
    std::string doc_id;
    std::string prompt_text; // already wrapped with the profile's special tokens
};

/// A source of one-position next-token distributions. Implementations must be
/// callable from multiple threads.
class ScoreBackend {
public:
    virtual ~ScoreBackend() = default;
    virtual const BackendProfile& profile() const = 0;
    virtual TokenDistribution next_token_distribution(const ScoreRequest& req) = 0;
};

/// OpenAI-compatible /v1/completions client asking for a single-token
/// continuation with top-K log-probabilities. Plain HTTP only.
class HttpBackend : public ScoreBackend {
public:
    explicit HttpBackend(BackendProfile profile);
    const BackendProfile& profile() const override { return profile_; }
    TokenDistribution next_token_distribution(const ScoreRequest& req) override;

private:
    BackendProfile profile_;
    std::string host_;
    std::string path_;
};

/// Parses a completions response body into the first position's top-K
/// log-probability distribution. Throws ScoringError on malformed bodies.
TokenDistribution parse_completions_response(const std::string& body);

/// Builds the completions request body for `profile`.
std::string build_completions_request(const BackendProfile& profile, const std::string& prompt_text);

/// Append-only JSONL score cache keyed by (method, topic, doc, prompt_hash).
/// Last write wins on key collision; records reread bit-identically.
/// Single writer, many readers.
///
/// Records with an empty prompt_hash match any prompt for their (method,
/// topic, doc) triple; that is how externally produced scores (a classifier
/// with no prompt at all) enter the pipeline.
class ScoreCache {
public:
    ScoreCache() = default;                              // in-memory only
    explicit ScoreCache(std::filesystem::path file);     // loads and appends

    std::optional<ScoreRecord> find(const std::string& method_id, const std::string& topic_id,
                                    const std::string& doc_id, const std::string& prompt_hash) const;
    void put(const ScoreRecord& record);
    std::size_t size() const;

    static std::string key(const std::string& method_id, const std::string& topic_id,
                           const std::string& doc_id, const std::string& prompt_hash);

private:
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, ScoreRecord> map_;
    std::unique_ptr<std::ofstream> out_;
};

struct ScoreOutcome {
    ScoreRecord record;
    int retries = 0;
    bool from_cache = false;
};

/// Requests exactly one next-token distribution (no generation) unless the
/// cache already holds the record. Retries per the backend profile.
ScoreOutcome score_document(ScoreBackend& backend, ScoreCache* cache,
                            const prompting::RenderedPrompt& prompt, const std::string& topic_id,
                            const std::string& doc_id);

struct TopicScores {
    std::vector<ScoreRecord> records; // input order; failures omitted
    std::vector<std::string> failed_docs;
    int retries = 0;
    int truncated_prompts = 0;
    int indeterminate = 0;
    int cache_hits = 0;
};

/// Scores every candidate with at most profile.max_inflight concurrent
/// requests; output order matches input order regardless of completion order.
/// Throws ScoringError when more than max_failure_fraction of the documents
/// fail after retries.
TopicScores score_topic(ScoreBackend& backend, ScoreCache* cache, const corpus::Topic& topic,
                        std::span<const corpus::Candidate> candidates,
                        const prompting::PromptTemplate& tpl, int budget_tokens,
                        double max_failure_fraction = 0.01);

/// Score cache file I/O (one ScoreRecord object per line).
void write_score_records(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_score_records(const std::filesystem::path& path);

} // namespace screenlm::scoring
