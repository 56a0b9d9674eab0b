#include "screenlm/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "screenlm/errors.hpp"
#include "screenlm/hash.hpp"

namespace screenlm::synthetic {

scoring::ScoreRecord synthetic_score(const std::string& method_id, const std::string& topic_id,
                                     const std::string& doc_id, std::uint64_t seed,
                                     std::optional<int> planted_label) {
    KeyedRng rng(seed, topic_id, doc_id);
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double w = rng.uniform();

    scoring::ScoreRecord r;
    r.method_id = method_id;
    r.topic_id = topic_id;
    r.doc_id = doc_id;
    if (!planted_label) {
        r.p_yes = u1;
        r.p_no = (1.0 - u1) * u2;
    } else if (*planted_label == 1) {
        if (w < 0.4)
            r.p_yes = 0.75;
        else if (w < 0.8)
            r.p_yes = 1.0;
        else
            r.p_yes = 0.75 + 0.25 * u2;
        r.p_no = 1.0 - r.p_yes;
    } else {
        r.p_yes = 0.5 * u1;
        r.p_no = 1.0 - r.p_yes;
    }
    r.indeterminate = false;
    return r;
}

SyntheticBackend::SyntheticBackend(scoring::BackendProfile profile, std::uint64_t seed,
                                   const corpus::LabelSet* labels, bool jitter_delays)
    : profile_(std::move(profile)), seed_(seed), labels_(labels), jitter_delays_(jitter_delays) {
    scoring::validate_profile(profile_);
}

void SyntheticBackend::set_planned_failures(std::function<int(const std::string&)> fn) {
    planned_failures_ = std::move(fn);
}

scoring::TokenDistribution SyntheticBackend::next_token_distribution(const scoring::ScoreRequest& req) {
    if (planned_failures_) {
        std::lock_guard lock(failures_mu_);
        const int planned = planned_failures_(req.doc_id);
        int& used = failures_used_[req.doc_id];
        if (used < planned) {
            ++used;
            throw ScoringError("synthetic transport failure for " + req.topic_id + "/" + req.doc_id);
        }
    }
    if (jitter_delays_) {
        KeyedRng rng(seed_ ^ 0x6a09e667f3bcc908ull, req.topic_id, req.doc_id);
        const auto micros = static_cast<int>(rng.uniform() * 3000.0);
        std::this_thread::sleep_for(std::chrono::microseconds(micros));
    }

    std::optional<int> label;
    if (labels_ != nullptr) {
        label = labels_->find(req.topic_id, req.doc_id);
        if (!label) label = 1; // seed studies and other off-list documents
    }
    const scoring::ScoreRecord r =
        synthetic_score(profile_.method_id, req.topic_id, req.doc_id, seed_, label);

    scoring::TokenDistribution dist;
    dist.log_space = false;
    dist.entries.push_back({"yes", r.p_yes});
    dist.entries.push_back({"no", r.p_no});
    const double rest = 1.0 - r.p_yes - r.p_no;
    if (rest > 0.0) dist.entries.push_back({"the", rest});
    return dist;
}

corpus::Dataset make_planted_dataset(const DatasetSpec& spec) {
    if (spec.topics < 1 || spec.docs_per_topic < 2)
        throw ConfigError("synthetic dataset needs >= 1 topic and >= 2 documents per topic");
    if (spec.prevalence <= 0.0 || spec.prevalence >= 1.0)
        throw ConfigError("synthetic prevalence must lie in (0, 1)");

    std::vector<corpus::Topic> topics;
    corpus::CandidateMap candidates;
    corpus::LabelSet labels;
    corpus::SeedMap seeds;

    const int included_per_topic =
        std::clamp(static_cast<int>(std::lround(spec.prevalence * spec.docs_per_topic)), 1,
                   spec.docs_per_topic - 1);

    for (int t = 0; t < spec.topics; ++t) {
        char tid[16];
        std::snprintf(tid, sizeof tid, "T%03d", t + 1);
        const std::string topic_id(tid);
        topics.push_back({topic_id, "Synthetic review " + topic_id});

        // Choose the included set as the docs with the smallest label draws.
        std::vector<double> draw(static_cast<std::size_t>(spec.docs_per_topic));
        std::vector<std::string> doc_ids(static_cast<std::size_t>(spec.docs_per_topic));
        for (int d = 0; d < spec.docs_per_topic; ++d) {
            char did[24];
            std::snprintf(did, sizeof did, "%s-D%05d", tid, d + 1);
            doc_ids[static_cast<std::size_t>(d)] = did;
            draw[static_cast<std::size_t>(d)] =
                KeyedRng(spec.seed ^ 0x9e3779b97f4a7c15ull, topic_id, did).uniform();
        }
        std::vector<int> order(static_cast<std::size_t>(spec.docs_per_topic));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return draw[static_cast<std::size_t>(a)] < draw[static_cast<std::size_t>(b)]; });
        std::vector<int> label_of(static_cast<std::size_t>(spec.docs_per_topic), 0);
        for (int i = 0; i < included_per_topic; ++i) label_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

        auto& list = candidates[topic_id];
        std::vector<std::string> included_docs;
        for (int d = 0; d < spec.docs_per_topic; ++d) {
            const std::string& did = doc_ids[static_cast<std::size_t>(d)];
            list.push_back({did, "Study " + did, "Abstract for " + did + "."});
            labels.by_topic[topic_id][did] = label_of[static_cast<std::size_t>(d)];
            if (label_of[static_cast<std::size_t>(d)] == 1) included_docs.push_back(did);
        }

        if (spec.with_seeds) {
            const int n_seeds = std::min<int>(spec.seeds_per_topic, static_cast<int>(included_docs.size()));
            for (int s = 0; s < n_seeds; ++s) seeds[topic_id].push_back({included_docs[static_cast<std::size_t>(s)], "", "", false});
            if (spec.non_retrieved_seed) {
                const std::string sid = topic_id + "-SEED-X";
                seeds[topic_id].push_back({sid, "Seed study " + sid, "Abstract for " + sid + ".", true});
            }
        }
    }

    std::optional<corpus::SeedMap> seed_arg;
    if (spec.with_seeds) seed_arg = std::move(seeds);
    return corpus::assemble_dataset(std::move(topics), std::move(candidates), std::move(labels),
                                    std::move(seed_arg));
}

} // namespace screenlm::synthetic
