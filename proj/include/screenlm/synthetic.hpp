#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "screenlm/corpus.hpp"
#include "screenlm/scoring.hpp"

namespace screenlm::synthetic {

/// Deterministic pseudo-scores keyed by (seed, topic_id, doc_id).
///
/// Without a planted label the masses are unconstrained draws:
///   p_yes = u1,  p_no = (1 - u1) * u2.
///
/// With a planted label the included distribution stochastically dominates
/// the excluded one (fixed parameters):
///   excluded:  p_yes = 0.5 * u1             (margin is always zero)
///   included:  p_yes = 0.75                 with probability 0.4
///              p_yes = 1.0                  with probability 0.4
///              p_yes = 0.75 + 0.25 * u2     otherwise
///   and p_no = 1 - p_yes.
/// The two atoms pin each topic's lowest and highest included margin, which
/// keeps cross-topic thresholds comparable in separation-dependent tests.
scoring::ScoreRecord synthetic_score(const std::string& method_id, const std::string& topic_id,
                                     const std::string& doc_id, std::uint64_t seed,
                                     std::optional<int> planted_label = std::nullopt);

/// Backend over synthetic_score. With `labels`, documents found there are
/// scored from the planted distributions; anything else (e.g. non-retrieved
/// seed studies) is treated as included. Optional per-document jitter delays
/// simulate out-of-order completion for order-preservation tests, and
/// `planned_failures` injects that many failing attempts per document before
/// success, for retry tests.
class SyntheticBackend : public scoring::ScoreBackend {
public:
    SyntheticBackend(scoring::BackendProfile profile, std::uint64_t seed,
                     const corpus::LabelSet* labels = nullptr, bool jitter_delays = false);

    const scoring::BackendProfile& profile() const override { return profile_; }
    scoring::TokenDistribution next_token_distribution(const scoring::ScoreRequest& req) override;

    void set_planned_failures(std::function<int(const std::string& doc_id)> fn);

private:
    scoring::BackendProfile profile_;
    std::uint64_t seed_;
    const corpus::LabelSet* labels_;
    bool jitter_delays_;
    std::function<int(const std::string&)> planned_failures_;
    std::unordered_map<std::string, int> failures_used_;
    std::mutex failures_mu_;
};

struct DatasetSpec {
    int topics = 20;
    int docs_per_topic = 100;
    double prevalence = 0.3; // fraction of each topic's candidates labeled included
    std::uint64_t seed = 42;
    bool with_seeds = false;
    int seeds_per_topic = 3;     // retrieved seeds drawn from the included docs
    bool non_retrieved_seed = false; // adds one seed outside the candidate set
};

/// Fully labeled dataset whose per-topic included counts are exact
/// (round(prevalence * docs_per_topic)), with membership chosen by hash.
corpus::Dataset make_planted_dataset(const DatasetSpec& spec);

} // namespace screenlm::synthetic
