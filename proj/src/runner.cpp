#include "screenlm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

#ifndef SCREENLM_VERSION
#define SCREENLM_VERSION "0.0.0"
#endif

namespace screenlm::runner {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::synthetic: return "synthetic";
        case BackendKind::http: return "http";
        case BackendKind::cache: return "cache";
    }
    return "?";
}

std::string to_string(Setting setting) {
    return setting == Setting::uncalibrated ? "uncalibrated" : "calibrated";
}

namespace {

BackendKind backend_kind_from(const std::string& s) {
    if (s == "synthetic") return BackendKind::synthetic;
    if (s == "http") return BackendKind::http;
    if (s == "cache") return BackendKind::cache;
    throw ConfigError("unknown backend kind \"" + s + "\"");
}

Setting setting_from(const std::string& s) {
    if (s == "uncalibrated") return Setting::uncalibrated;
    if (s == "calibrated") return Setting::calibrated;
    throw ConfigError("unknown setting \"" + s + "\" (expected uncalibrated or calibrated)");
}

calibration::Mode mode_from(const std::string& s) {
    if (s == "fixed") return calibration::Mode::fixed;
    if (s == "extrapolate") return calibration::Mode::extrapolate;
    if (s == "seed") return calibration::Mode::seed;
    throw ConfigError("unknown calibration mode \"" + s + "\"");
}

calibration::ExtrapolationVariant variant_from(const std::string& s) {
    if (s == "per_topic_median") return calibration::ExtrapolationVariant::per_topic_median;
    if (s == "pooled_median") return calibration::ExtrapolationVariant::pooled_median;
    throw ConfigError("unknown extrapolation_variant \"" + s + "\"");
}

bool valid_method_id(const std::string& id) {
    if (id.empty()) return false;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '.' || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    return std::filesystem::absolute(base / path);
}

class StageTimer {
public:
    StageTimer(std::map<std::string, double>& sink, std::string stage)
        : sink_(sink), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const auto end = std::chrono::steady_clock::now();
        sink_[stage_] = std::chrono::duration<double, std::milli>(end - start_).count();
    }

private:
    std::map<std::string, double>& sink_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
};

} // namespace

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig cfg;

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        if (!d.is_object()) throw ConfigError("dataset must be an object");
        if (d.contains("dir")) cfg.dataset.dir = resolve(base_dir, d["dir"].get<std::string>());
        if (d.contains("topics")) cfg.dataset.topics = resolve(base_dir, d["topics"].get<std::string>());
        if (d.contains("candidates"))
            cfg.dataset.candidates = resolve(base_dir, d["candidates"].get<std::string>());
        if (d.contains("qrels")) cfg.dataset.qrels = resolve(base_dir, d["qrels"].get<std::string>());
        if (d.contains("seeds")) cfg.dataset.seeds = resolve(base_dir, d["seeds"].get<std::string>());
        if (d.contains("synthetic")) {
            const json& s = d["synthetic"];
            synthetic::DatasetSpec spec;
            spec.topics = s.value("topics", spec.topics);
            spec.docs_per_topic = s.value("docs_per_topic", spec.docs_per_topic);
            spec.prevalence = s.value("prevalence", spec.prevalence);
            spec.seed = s.value("seed", spec.seed);
            spec.with_seeds = s.value("with_seeds", spec.with_seeds);
            spec.seeds_per_topic = s.value("seeds_per_topic", spec.seeds_per_topic);
            spec.non_retrieved_seed = s.value("non_retrieved_seed", spec.non_retrieved_seed);
            cfg.dataset.synthetic_spec = spec;
        }
    }

    if (!j.contains("backends") || !j["backends"].is_array() || j["backends"].empty())
        throw ConfigError("config needs a non-empty backends array");
    for (const json& b : j["backends"]) {
        BackendConfig bc;
        bc.profile.method_id = b.value("method_id", std::string());
        if (!valid_method_id(bc.profile.method_id))
            throw ConfigError("method_id must match [A-Za-z0-9._-]+, got \"" + bc.profile.method_id +
                              "\"");
        bc.kind = backend_kind_from(b.value("kind", std::string("synthetic")));
        bc.template_id = b.value("template", std::string("generic"));
        bc.synthetic_planted = b.value("planted", true);
        bc.profile.endpoint = b.value("endpoint", std::string());
        bc.profile.model = b.value("model", std::string());
        bc.profile.auth_env = b.value("auth_env", std::string());
        bc.profile.top_k = b.value("top_k", bc.profile.top_k);
        bc.profile.prompt_prefix = b.value("prompt_prefix", std::string());
        bc.profile.prompt_suffix = b.value("prompt_suffix", std::string());
        bc.profile.max_inflight = b.value("max_inflight", bc.profile.max_inflight);
        if (b.contains("retry")) {
            bc.profile.retry.max_attempts = b["retry"].value("max_attempts", bc.profile.retry.max_attempts);
            bc.profile.retry.backoff_ms = b["retry"].value("backoff_ms", bc.profile.retry.backoff_ms);
        }
        if (b.contains("yes_variants"))
            bc.profile.yes_variants = b["yes_variants"].get<std::vector<std::string>>();
        if (b.contains("no_variants"))
            bc.profile.no_variants = b["no_variants"].get<std::vector<std::string>>();
        scoring::validate_profile(bc.profile);
        if (bc.kind == BackendKind::http && bc.profile.endpoint.empty())
            throw ConfigError("http backend \"" + bc.profile.method_id + "\" needs an endpoint");
        cfg.backends.push_back(std::move(bc));
    }
    {
        std::vector<std::string> ids;
        for (const auto& b : cfg.backends) ids.push_back(b.profile.method_id);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            throw ConfigError("duplicate method_id in backends");
    }

    if (j.contains("ensembles")) {
        for (const json& e : j["ensembles"]) {
            EnsembleSpec spec;
            spec.ensemble_id = e.value("ensemble_id", std::string());
            if (!valid_method_id(spec.ensemble_id))
                throw ConfigError("ensemble_id must match [A-Za-z0-9._-]+");
            if (!e.contains("methods") || !e["methods"].is_array())
                throw ConfigError("ensemble \"" + spec.ensemble_id + "\" needs a methods array");
            spec.method_ids = e["methods"].get<std::vector<std::string>>();
            if (spec.method_ids.size() < 2)
                throw ConfigError("ensemble \"" + spec.ensemble_id + "\" needs >= 2 methods");
            auto sorted = spec.method_ids;
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
                throw ConfigError("ensemble \"" + spec.ensemble_id + "\" lists a method twice");
            for (const auto& id : spec.method_ids) {
                const bool known = std::any_of(cfg.backends.begin(), cfg.backends.end(),
                                               [&](const auto& b) { return b.profile.method_id == id; });
                if (!known)
                    throw ConfigError("ensemble \"" + spec.ensemble_id + "\" references unknown method \"" +
                                      id + "\"");
            }
            cfg.ensembles.push_back(std::move(spec));
        }
    }

    if (j.contains("template_registry"))
        cfg.template_registry = resolve(base_dir, j["template_registry"].get<std::string>());
    cfg.budget_tokens = j.value("budget_tokens", cfg.budget_tokens);
    if (cfg.budget_tokens <= 0) throw ConfigError("budget_tokens must be positive");
    if (j.contains("cache")) cfg.cache_file = resolve(base_dir, j["cache"].get<std::string>());

    if (j.contains("settings")) {
        cfg.settings.clear();
        for (const json& s : j["settings"]) cfg.settings.push_back(setting_from(s.get<std::string>()));
        if (cfg.settings.empty()) throw ConfigError("settings must not be empty");
    }

    if (j.contains("calibration")) {
        const json& c = j["calibration"];
        cfg.calibration.mode = mode_from(c.value("mode", std::string("extrapolate")));
        cfg.calibration.target_recall = c.value("target_recall", cfg.calibration.target_recall);
        if (c.contains("fixed_theta") && !c["fixed_theta"].is_null())
            cfg.calibration.fixed_theta = c["fixed_theta"].get<double>();
        cfg.calibration.variant =
            variant_from(c.value("extrapolation_variant", std::string("per_topic_median")));
        calibration::validate_config(cfg.calibration);
    }

    if (j.contains("metrics")) {
        const json& m = j["metrics"];
        cfg.metrics.beta = m.value("beta", cfg.metrics.beta);
        cfg.metrics.wss_recall_level = m.value("wss_recall_level", cfg.metrics.wss_recall_level);
        cfg.metrics.success_target = m.value("success_target", cfg.metrics.success_target);
    }

    if (j.contains("significance_pairs")) {
        for (const json& p : j["significance_pairs"]) {
            if (!p.is_array() || p.size() != 2)
                throw ConfigError("significance_pairs entries must be [method_a, method_b]");
            cfg.significance_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        }
    }

    const std::string policy = j.value("indeterminate_policy", std::string("exclude"));
    if (policy == "exclude")
        cfg.indeterminate_policy = decision::IndeterminatePolicy::exclude;
    else if (policy == "include")
        cfg.indeterminate_policy = decision::IndeterminatePolicy::include;
    else
        throw ConfigError("indeterminate_policy must be include or exclude");

    cfg.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    if (cfg.workers < 0) throw ConfigError("workers must be >= 0");
    if (cfg.workers == 0) cfg.workers = 1;
    cfg.offline = j.value("offline", cfg.offline);
    cfg.max_failure_fraction = j.value("max_failure_fraction", cfg.max_failure_fraction);
    if (cfg.max_failure_fraction < 0.0 || cfg.max_failure_fraction > 1.0)
        throw ConfigError("max_failure_fraction must lie in [0, 1]");
    cfg.verbose_reports = j.value("verbose_reports", cfg.verbose_reports);
    cfg.serial_pipeline = j.value("serial_pipeline", cfg.serial_pipeline);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(jsonl::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    ordered_json d;
    if (cfg.dataset.dir) d["dir"] = cfg.dataset.dir->string();
    if (cfg.dataset.topics) d["topics"] = cfg.dataset.topics->string();
    if (cfg.dataset.candidates) d["candidates"] = cfg.dataset.candidates->string();
    if (cfg.dataset.qrels) d["qrels"] = cfg.dataset.qrels->string();
    if (cfg.dataset.seeds) d["seeds"] = cfg.dataset.seeds->string();
    if (cfg.dataset.synthetic_spec) {
        const auto& s = *cfg.dataset.synthetic_spec;
        ordered_json sj;
        sj["topics"] = s.topics;
        sj["docs_per_topic"] = s.docs_per_topic;
        sj["prevalence"] = s.prevalence;
        sj["seed"] = s.seed;
        sj["with_seeds"] = s.with_seeds;
        sj["seeds_per_topic"] = s.seeds_per_topic;
        sj["non_retrieved_seed"] = s.non_retrieved_seed;
        d["synthetic"] = std::move(sj);
    }
    j["dataset"] = std::move(d);

    ordered_json backends = ordered_json::array();
    for (const auto& b : cfg.backends) {
        ordered_json bj;
        bj["method_id"] = b.profile.method_id;
        bj["kind"] = to_string(b.kind);
        bj["template"] = b.template_id;
        if (b.kind == BackendKind::synthetic) bj["planted"] = b.synthetic_planted;
        if (!b.profile.endpoint.empty()) bj["endpoint"] = b.profile.endpoint;
        if (!b.profile.model.empty()) bj["model"] = b.profile.model;
        if (!b.profile.auth_env.empty()) bj["auth_env"] = b.profile.auth_env;
        bj["top_k"] = b.profile.top_k;
        if (!b.profile.prompt_prefix.empty()) bj["prompt_prefix"] = b.profile.prompt_prefix;
        if (!b.profile.prompt_suffix.empty()) bj["prompt_suffix"] = b.profile.prompt_suffix;
        bj["max_inflight"] = b.profile.max_inflight;
        bj["retry"] = {{"max_attempts", b.profile.retry.max_attempts},
                       {"backoff_ms", b.profile.retry.backoff_ms}};
        bj["yes_variants"] = b.profile.yes_variants;
        bj["no_variants"] = b.profile.no_variants;
        backends.push_back(std::move(bj));
    }
    j["backends"] = std::move(backends);

    if (!cfg.ensembles.empty()) {
        ordered_json ens = ordered_json::array();
        for (const auto& e : cfg.ensembles) {
            ordered_json ej;
            ej["ensemble_id"] = e.ensemble_id;
            ej["methods"] = e.method_ids;
            ens.push_back(std::move(ej));
        }
        j["ensembles"] = std::move(ens);
    }

    if (cfg.template_registry) j["template_registry"] = cfg.template_registry->string();
    j["budget_tokens"] = cfg.budget_tokens;
    if (cfg.cache_file) j["cache"] = cfg.cache_file->string();

    ordered_json settings = ordered_json::array();
    for (const auto s : cfg.settings) settings.push_back(to_string(s));
    j["settings"] = std::move(settings);

    ordered_json cal;
    cal["mode"] = calibration::to_string(cfg.calibration.mode);
    cal["target_recall"] = cfg.calibration.target_recall;
    if (cfg.calibration.fixed_theta) cal["fixed_theta"] = *cfg.calibration.fixed_theta;
    cal["extrapolation_variant"] = calibration::to_string(cfg.calibration.variant);
    j["calibration"] = std::move(cal);

    ordered_json metrics;
    metrics["beta"] = cfg.metrics.beta;
    metrics["wss_recall_level"] = cfg.metrics.wss_recall_level;
    metrics["success_target"] = cfg.metrics.success_target;
    j["metrics"] = std::move(metrics);

    if (!cfg.significance_pairs.empty()) {
        ordered_json pairs = ordered_json::array();
        for (const auto& [a, b] : cfg.significance_pairs) pairs.push_back(ordered_json::array({a, b}));
        j["significance_pairs"] = std::move(pairs);
    }

    j["indeterminate_policy"] =
        cfg.indeterminate_policy == decision::IndeterminatePolicy::exclude ? "exclude" : "include";
    j["output_dir"] = cfg.output_dir.string();
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["offline"] = cfg.offline;
    j["max_failure_fraction"] = cfg.max_failure_fraction;
    j["verbose_reports"] = cfg.verbose_reports;
    j["serial_pipeline"] = cfg.serial_pipeline;
    return j;
}

ExperimentConfig config_from_manifest(const std::filesystem::path& manifest_path) {
    json j;
    try {
        j = json::parse(jsonl::read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }
    if (!j.contains("config")) throw ConfigError("manifest has no config snapshot");
    return config_from_json(j["config"], std::filesystem::absolute(manifest_path).parent_path());
}

// ---------------------------------------------------------------------------
// Dataset

corpus::Dataset load_dataset(const DatasetConfig& cfg) {
    if (cfg.synthetic_spec) return synthetic::make_planted_dataset(*cfg.synthetic_spec);
    if (cfg.dir) return corpus::read_dataset(*cfg.dir);
    if (!cfg.topics || !cfg.candidates)
        throw ConfigError("dataset needs either dir, synthetic, or topics+candidates paths");
    auto topics = corpus::load_topics(*cfg.topics);
    auto candidates = corpus::load_candidates(*cfg.candidates);
    corpus::LabelSet labels;
    if (cfg.qrels) labels = corpus::parse_qrels(*cfg.qrels);
    std::optional<corpus::SeedMap> seeds;
    if (cfg.seeds) seeds = corpus::load_seeds(*cfg.seeds);
    return corpus::assemble_dataset(std::move(topics), std::move(candidates), std::move(labels),
                                    std::move(seeds));
}

corpus::Dataset run_ingest(const DatasetConfig& in, const std::filesystem::path& out_dir) {
    corpus::Dataset ds = load_dataset(in);
    corpus::write_dataset(ds, out_dir);
    return ds;
}

// ---------------------------------------------------------------------------
// Scoring

namespace {

// Used for offline runs and for methods whose scores only ever live in the
// cache (e.g. an externally produced classifier's probabilities).
class CacheOnlyBackend : public scoring::ScoreBackend {
public:
    explicit CacheOnlyBackend(scoring::BackendProfile profile) : profile_(std::move(profile)) {
        profile_.retry.max_attempts = 1;
        profile_.retry.backoff_ms = 0;
    }
    const scoring::BackendProfile& profile() const override { return profile_; }
    scoring::TokenDistribution next_token_distribution(const scoring::ScoreRequest& req) override {
        throw ScoringError("no cached score for " + req.topic_id + "/" + req.doc_id);
    }

private:
    scoring::BackendProfile profile_;
};

struct ScoredMethod {
    std::string method_id;
    std::vector<scoring::ScoreRecord> records; // dataset order
    std::map<std::string, std::vector<scoring::ScoreRecord>> seed_records;
    std::int64_t truncated = 0;
    std::int64_t indeterminate = 0;
    std::int64_t retries = 0;
    std::int64_t cache_hits = 0;
    std::int64_t failed_docs = 0;
};

std::unique_ptr<scoring::ScoreBackend> make_backend(const ExperimentConfig& cfg,
                                                    const corpus::Dataset& ds,
                                                    const BackendConfig& bc) {
    if (cfg.offline || bc.kind == BackendKind::cache)
        return std::make_unique<CacheOnlyBackend>(bc.profile);
    if (bc.kind == BackendKind::http) return std::make_unique<scoring::HttpBackend>(bc.profile);
    const corpus::LabelSet* labels =
        (bc.synthetic_planted && ds.labeled) ? &ds.labels : nullptr;
    return std::make_unique<synthetic::SyntheticBackend>(bc.profile, cfg.seed, labels);
}

ScoredMethod score_method(const ExperimentConfig& cfg, const corpus::Dataset& ds,
                          const BackendConfig& bc, scoring::ScoreCache* cache, bool score_seeds) {
    std::vector<prompting::PromptTemplate> registry;
    if (cfg.template_registry) registry = prompting::load_template_registry(*cfg.template_registry);
    const prompting::PromptTemplate& tpl = prompting::resolve_template(registry, bc.template_id);

    auto backend = make_backend(cfg, ds, bc);

    ScoredMethod out;
    out.method_id = bc.profile.method_id;

    const std::size_t n_topics = ds.topics.size();
    std::vector<scoring::TopicScores> per_topic(n_topics);
    std::vector<std::string> errors;
    std::mutex errors_mu;
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= n_topics) return;
            const auto& topic = ds.topics[t];
            try {
                per_topic[t] = scoring::score_topic(*backend, cache, topic,
                                                    ds.candidates_for(topic.topic_id), tpl,
                                                    cfg.budget_tokens, cfg.max_failure_fraction);
            } catch (const std::exception& e) {
                std::lock_guard lock(errors_mu);
                errors.emplace_back(e.what());
            }
        }
    };
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(n_topics)));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (!errors.empty()) {
        std::sort(errors.begin(), errors.end());
        throw ScoringError("method " + out.method_id + ": " + errors.front() +
                           (errors.size() > 1
                                ? " (and " + std::to_string(errors.size() - 1) + " more topics)"
                                : ""));
    }

    for (std::size_t t = 0; t < n_topics; ++t) {
        auto& ts = per_topic[t];
        out.truncated += ts.truncated_prompts;
        out.indeterminate += ts.indeterminate;
        out.retries += ts.retries;
        out.cache_hits += ts.cache_hits;
        out.failed_docs += static_cast<std::int64_t>(ts.failed_docs.size());
        // Tolerated failures become indeterminate records so every candidate
        // still receives a decision; the manifest carries the count.
        if (!ts.failed_docs.empty()) {
            std::unordered_map<std::string, scoring::ScoreRecord*> by_doc;
            for (auto& r : ts.records) by_doc[r.doc_id] = &r;
            std::vector<scoring::ScoreRecord> full;
            full.reserve(ds.candidates_for(ds.topics[t].topic_id).size());
            for (const auto& c : ds.candidates_for(ds.topics[t].topic_id)) {
                auto it = by_doc.find(c.doc_id);
                if (it != by_doc.end()) {
                    full.push_back(*it->second);
                } else {
                    scoring::ScoreRecord r;
                    r.method_id = out.method_id;
                    r.topic_id = ds.topics[t].topic_id;
                    r.doc_id = c.doc_id;
                    r.indeterminate = true;
                    full.push_back(std::move(r));
                }
            }
            ts.records = std::move(full);
        }
        for (auto& r : ts.records) out.records.push_back(std::move(r));
    }

    if (score_seeds && ds.has_seeds) {
        for (const auto& topic : ds.topics) {
            auto sit = ds.seeds.find(topic.topic_id);
            if (sit == ds.seeds.end()) continue;
            auto& list = out.seed_records[topic.topic_id];
            for (const auto& seed : sit->second) {
                corpus::Candidate c{seed.doc_id, seed.title, seed.abstract_text};
                auto prompt = prompting::fit_to_budget(prompting::render_prompt(tpl, topic.title, c),
                                                       cfg.budget_tokens);
                if (prompt.truncated) ++out.truncated;
                auto res = scoring::score_document(*backend, cache, prompt, topic.topic_id, seed.doc_id);
                out.retries += res.retries;
                if (res.from_cache) ++out.cache_hits;
                list.push_back(std::move(res.record));
            }
        }
    }
    return out;
}

// Normalization pooled with the non-retrieved seeds' margins, so seed scores
// and the decision boundary live on the same per-topic scale.
void normalize_with_seeds(const corpus::Dataset& ds, const pipeline::ScoreMatrix& m,
                          const std::map<std::string, std::vector<scoring::ScoreRecord>>& seed_records,
                          std::span<const double> raw, std::vector<double>& s_norm,
                          std::map<std::string, std::vector<double>>& seed_s_norm,
                          std::size_t& degenerate_topics) {
    s_norm.assign(m.docs(), 0.0);
    for (std::size_t t = 0; t < m.topics(); ++t) {
        const auto [b, e] = m.topic_range(t);
        const std::string& topic_id = m.topic_ids[t];

        std::vector<double> seed_raw;
        const corpus::SeedDoc* seed_meta = nullptr;
        auto sit = ds.seeds.find(topic_id);
        auto rit = seed_records.find(topic_id);
        if (sit != ds.seeds.end() && rit != seed_records.end()) {
            seed_meta = sit->second.data();
            for (const auto& r : rit->second) seed_raw.push_back(decision::raw_margin(r));
        }

        double lo = raw[b], hi = raw[b];
        for (std::size_t i = b + 1; i < e; ++i) {
            lo = std::min(lo, raw[i]);
            hi = std::max(hi, raw[i]);
        }
        for (std::size_t s = 0; s < seed_raw.size(); ++s) {
            if (!seed_meta[s].non_retrieved) continue; // retrieved seeds are already in the pool
            lo = std::min(lo, seed_raw[s]);
            hi = std::max(hi, seed_raw[s]);
        }

        auto transform = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 1.0; };
        if (hi <= lo) ++degenerate_topics;
        for (std::size_t i = b; i < e; ++i) s_norm[i] = transform(raw[i]);
        if (!seed_raw.empty()) {
            auto& dst = seed_s_norm[topic_id];
            for (double v : seed_raw) dst.push_back(transform(v));
        }
    }
}

} // namespace

std::vector<MethodView> build_views(const ExperimentConfig& cfg, const corpus::Dataset& ds,
                                    scoring::ScoreCache* cache) {
    const bool calibrated_requested =
        std::find(cfg.settings.begin(), cfg.settings.end(), Setting::calibrated) != cfg.settings.end();
    const bool seed_mode = cfg.calibration.mode == calibration::Mode::seed;
    if (calibrated_requested && seed_mode && !ds.has_seeds)
        throw ConfigError("seed calibration requires a seed set");
    const bool score_seeds = calibrated_requested && seed_mode;

    const pipeline::Exec exec = cfg.serial_pipeline ? pipeline::Exec::serial : pipeline::Exec::openmp;

    std::vector<MethodView> views;
    for (const auto& bc : cfg.backends) {
        ScoredMethod sm = score_method(cfg, ds, bc, cache, score_seeds);
        MethodView v;
        v.method_id = sm.method_id;
        v.truncated = sm.truncated;
        v.indeterminate = sm.indeterminate;
        v.retries = sm.retries;
        v.cache_hits = sm.cache_hits;
        v.failed_docs = sm.failed_docs;
        v.matrix = pipeline::make_matrix(ds, sm.records);
        v.s_raw.resize(v.matrix.docs());
        pipeline::margins(v.matrix, v.s_raw, exec);
        if (score_seeds) {
            normalize_with_seeds(ds, v.matrix, sm.seed_records, v.s_raw, v.s_norm, v.seed_s_norm,
                                 v.degenerate_topics);
        } else {
            v.s_norm.resize(v.matrix.docs());
            pipeline::normalize(v.matrix, v.s_raw, v.s_norm, exec);
            for (std::size_t t = 0; t < v.matrix.topics(); ++t) {
                const auto [b, e] = v.matrix.topic_range(t);
                if (b == e) continue;
                const auto [lo, hi] = std::minmax_element(v.s_raw.begin() + static_cast<std::ptrdiff_t>(b),
                                                          v.s_raw.begin() + static_cast<std::ptrdiff_t>(e));
                if (*lo == *hi) ++v.degenerate_topics;
            }
        }
        views.push_back(std::move(v));
    }

    // Ensembles fuse aligned matrices: CombSUM masses for the uncalibrated
    // rule, mean of normalized scores for the calibrated one.
    const std::size_t n_backends = views.size();
    for (const auto& spec : cfg.ensembles) {
        MethodView v;
        v.method_id = spec.ensemble_id;
        v.is_ensemble = true;
        std::vector<const MethodView*> parts;
        for (const auto& id : spec.method_ids) {
            for (std::size_t i = 0; i < n_backends; ++i)
                if (views[i].method_id == id) parts.push_back(&views[i]);
        }
        if (parts.size() != spec.method_ids.size())
            throw ConfigError("ensemble \"" + spec.ensemble_id + "\" references unknown methods");

        v.matrix = parts.front()->matrix;
        const std::size_t n = v.matrix.docs();
        v.s_norm.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double py = 0.0, pn = 0.0, sn = 0.0;
            bool all_ind = true;
            for (const MethodView* p : parts) {
                py += p->matrix.p_yes[i];
                pn += p->matrix.p_no[i];
                sn += p->s_norm[i];
                all_ind = all_ind && p->matrix.indeterminate[i];
            }
            v.matrix.p_yes[i] = py;
            v.matrix.p_no[i] = pn;
            v.matrix.indeterminate[i] = all_ind ? 1 : 0;
            v.s_norm[i] = sn / static_cast<double>(parts.size());
        }
        for (const auto& [topic_id, seeds] : parts.front()->seed_s_norm) {
            auto& dst = v.seed_s_norm[topic_id];
            dst.assign(seeds.size(), 0.0);
            for (const MethodView* p : parts) {
                const auto& src = p->seed_s_norm.at(topic_id);
                for (std::size_t s = 0; s < src.size(); ++s) dst[s] += src[s];
            }
            for (auto& x : dst) x /= static_cast<double>(parts.size());
        }
        views.push_back(std::move(v));
    }
    return views;
}

// ---------------------------------------------------------------------------
// Calibration over a view

std::pair<std::vector<double>, std::vector<calibration::ThresholdPolicy>> fit_thetas(
    const ExperimentConfig& cfg, const MethodView& view) {
    const auto& cal = cfg.calibration;
    calibration::validate_config(cal);
    const std::size_t n_topics = view.matrix.topics();

    std::vector<double> thetas(n_topics, 0.0);
    std::vector<calibration::ThresholdPolicy> policies(n_topics);

    if (cal.mode == calibration::Mode::fixed) {
        for (std::size_t t = 0; t < n_topics; ++t) {
            thetas[t] = *cal.fixed_theta;
            policies[t].theta = *cal.fixed_theta;
            policies[t].mode = calibration::to_string(calibration::Mode::fixed);
            policies[t].target_recall = cal.target_recall;
        }
        return {std::move(thetas), std::move(policies)};
    }

    std::vector<std::pair<std::string, std::vector<calibration::ScoredLabel>>> scored;
    scored.reserve(n_topics);
    for (std::size_t t = 0; t < n_topics; ++t) {
        const auto [b, e] = view.matrix.topic_range(t);
        std::vector<calibration::ScoredLabel> rows;
        rows.reserve(e - b);
        for (std::size_t i = b; i < e; ++i)
            rows.push_back({view.s_norm[i], view.matrix.label[i] == 1});
        scored.emplace_back(view.matrix.topic_ids[t], std::move(rows));
    }

    for (std::size_t t = 0; t < n_topics; ++t) {
        calibration::ThresholdPolicy policy = calibration::extrapolate_threshold(
            scored, view.matrix.topic_ids[t], cal.target_recall, cal.variant);
        if (cal.mode == calibration::Mode::seed) {
            std::vector<double> seed_scores;
            auto it = view.seed_s_norm.find(view.matrix.topic_ids[t]);
            if (it != view.seed_s_norm.end()) seed_scores = it->second;
            calibration::ThresholdPolicy adjusted = calibration::seed_adjust(policy.theta, seed_scores);
            adjusted.target_recall = policy.target_recall;
            adjusted.extrapolation_variant = policy.extrapolation_variant;
            adjusted.per_topic_thresholds = std::move(policy.per_topic_thresholds);
            policy = std::move(adjusted);
        }
        thetas[t] = policy.theta;
        policies[t] = std::move(policy);
    }
    return {std::move(thetas), std::move(policies)};
}

// ---------------------------------------------------------------------------
// Runs

namespace {

struct Warnings {
    std::int64_t truncated = 0;
    std::int64_t indeterminate = 0;
    std::int64_t retries = 0;
    std::int64_t cache_hits = 0;
    std::int64_t failed_docs = 0;
    std::int64_t degenerate_topics = 0;
    std::int64_t skipped_unlabeled = 0;

    void absorb(const MethodView& v) {
        truncated += v.truncated;
        indeterminate += v.indeterminate;
        retries += v.retries;
        cache_hits += v.cache_hits;
        failed_docs += v.failed_docs;
        degenerate_topics += static_cast<std::int64_t>(v.degenerate_topics);
    }
};

ordered_json effective_settings(const ExperimentConfig& cfg) {
    ordered_json e;
    e["degenerate_normalization"] = "all_ones";
    e["tie_break"] = "include";
    e["indeterminate_policy"] =
        cfg.indeterminate_policy == decision::IndeterminatePolicy::exclude ? "exclude" : "include";
    e["calibrated_fusion"] = "mean_of_normalized";
    e["extrapolation_variant"] = calibration::to_string(cfg.calibration.variant);
    e["calibration_mode"] = calibration::to_string(cfg.calibration.mode);
    e["target_recall"] = cfg.calibration.target_recall;
    e["budget_tokens"] = cfg.budget_tokens;
    ordered_json variants;
    for (const auto& b : cfg.backends) {
        ordered_json v;
        v["yes"] = b.profile.yes_variants;
        v["no"] = b.profile.no_variants;
        variants[b.profile.method_id] = std::move(v);
    }
    e["variant_sets"] = std::move(variants);
    return e;
}

std::vector<std::string> report_header_notes(const ExperimentConfig& cfg, int bonferroni_m) {
    std::vector<std::string> notes;
    notes.push_back(std::string("screenlm ") + SCREENLM_VERSION);
    notes.push_back("indeterminate_policy=" + std::string(cfg.indeterminate_policy ==
                                                                  decision::IndeterminatePolicy::exclude
                                                              ? "exclude"
                                                              : "include"));
    notes.push_back("degenerate_normalization=all_ones tie_break=include");
    notes.push_back("calibrated_fusion=mean_of_normalized");
    notes.push_back("calibration_mode=" + calibration::to_string(cfg.calibration.mode) +
                    " target_recall=" + std::to_string(cfg.calibration.target_recall) +
                    " extrapolation_variant=" + calibration::to_string(cfg.calibration.variant));
    notes.push_back("metrics beta=" + std::to_string(cfg.metrics.beta) +
                    " wss_recall_level=" + std::to_string(cfg.metrics.wss_recall_level) +
                    " success_target=" + std::to_string(cfg.metrics.success_target));
    if (bonferroni_m > 0) notes.push_back("bonferroni_m=" + std::to_string(bonferroni_m));
    return notes;
}

std::vector<decision::DecisionRecord> decision_records(const MethodView& view, Setting setting,
                                                       std::span<const std::uint8_t> include,
                                                       std::span<const double> thetas) {
    std::vector<decision::DecisionRecord> rows;
    rows.reserve(view.matrix.docs());
    for (std::size_t t = 0; t < view.matrix.topics(); ++t) {
        const auto [b, e] = view.matrix.topic_range(t);
        for (std::size_t i = b; i < e; ++i) {
            decision::DecisionRecord r;
            r.topic_id = view.matrix.topic_ids[t];
            r.doc_id = view.matrix.doc_ids[i];
            r.method_id = view.method_id;
            r.setting = to_string(setting);
            if (setting == Setting::calibrated) {
                r.s_norm = view.s_norm[i];
                r.theta = thetas[t];
            }
            r.include = include[i] != 0;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::vector<std::pair<std::string, std::string>> default_pairs(const std::vector<MethodView>& views) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < views.size(); ++i)
        for (std::size_t j = i + 1; j < views.size(); ++j)
            pairs.emplace_back(views[i].method_id, views[j].method_id);
    return pairs;
}

struct RunState {
    corpus::Dataset dataset;
    std::vector<MethodView> views;
    std::map<std::string, double> timings;
    Warnings warnings;
    std::unique_ptr<scoring::ScoreCache> cache;
};

RunState prepare(const ExperimentConfig& cfg) {
    RunState st;
    {
        StageTimer timer(st.timings, "load_ms");
        st.dataset = load_dataset(cfg.dataset);
    }
    if (cfg.cache_file) st.cache = std::make_unique<scoring::ScoreCache>(*cfg.cache_file);
    {
        StageTimer timer(st.timings, "score_ms");
        st.views = build_views(cfg, st.dataset, st.cache.get());
    }
    for (const auto& v : st.views) st.warnings.absorb(v);
    return st;
}

ordered_json manifest_json(const ExperimentConfig& cfg, const RunState& st,
                           const std::map<std::string, std::filesystem::path>& outputs) {
    ordered_json m;
    m["version"] = SCREENLM_VERSION;
    m["config"] = config_to_json(cfg);
    m["effective"] = effective_settings(cfg);
    ordered_json timings;
    for (const auto& [stage, ms] : st.timings) timings[stage] = ms;
    m["timings"] = std::move(timings);
    ordered_json w;
    w["truncated_prompts"] = st.warnings.truncated;
    w["indeterminate_records"] = st.warnings.indeterminate;
    w["retries"] = st.warnings.retries;
    w["cache_hits"] = st.warnings.cache_hits;
    w["failed_documents"] = st.warnings.failed_docs;
    w["degenerate_normalizations"] = st.warnings.degenerate_topics;
    w["skipped_unlabeled"] = st.warnings.skipped_unlabeled;
    w["dropped_labels"] = static_cast<std::int64_t>(st.dataset.report.dropped_labels);
    w["dropped_seeds"] = static_cast<std::int64_t>(st.dataset.report.dropped_seeds);
    w["duplicate_label_overwrites"] =
        static_cast<std::int64_t>(st.dataset.report.duplicate_label_overwrites);
    w["removed_topics"] = st.dataset.report.removed_topics;
    m["warnings"] = std::move(w);
    ordered_json out;
    for (const auto& [name, path] : outputs) out[name] = path.string();
    m["outputs"] = std::move(out);
    return m;
}

void write_policies(const std::filesystem::path& path, const MethodView& view,
                    std::span<const calibration::ThresholdPolicy> policies) {
    ordered_json o;
    o["method_id"] = view.method_id;
    ordered_json arr = ordered_json::array();
    for (std::size_t t = 0; t < view.matrix.topics(); ++t) {
        ordered_json e;
        e["topic_id"] = view.matrix.topic_ids[t];
        e["policy"] = policies[t].to_json();
        arr.push_back(std::move(e));
    }
    o["per_topic"] = std::move(arr);
    jsonl::write_file_atomic(path, o.dump(2) + "\n");
}

struct EvaluatedSetting {
    Setting setting;
    std::vector<std::pair<std::string, std::vector<evaluation::TopicEvaluation>>> per_method;
    std::vector<evaluation::ReportRow> rows;
};

} // namespace

RunResult run_screen(const ExperimentConfig& cfg) {
    RunState st = prepare(cfg);
    const pipeline::Exec exec = cfg.serial_pipeline ? pipeline::Exec::serial : pipeline::Exec::openmp;

    RunResult result;
    const std::filesystem::path out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir / "decisions");

    {
        StageTimer timer(st.timings, "screen_ms");
        for (auto& view : st.views) {
            for (const Setting setting : cfg.settings) {
                std::vector<std::uint8_t> include(view.matrix.docs());
                std::vector<double> thetas;
                if (setting == Setting::uncalibrated) {
                    pipeline::decide_uncalibrated(view.matrix, include, cfg.indeterminate_policy, exec);
                } else {
                    auto [t, policies] = fit_thetas(cfg, view);
                    thetas = std::move(t);
                    pipeline::decide_calibrated(view.matrix, view.s_norm, thetas, include, exec);
                    std::filesystem::create_directories(out_dir / "policies");
                    const auto ppath = out_dir / "policies" / (view.method_id + "__calibrated.json");
                    write_policies(ppath, view, policies);
                    result.outputs["policies/" + view.method_id] = ppath;
                    result.policies[view.method_id] = std::move(policies);
                }
                const auto rows = decision_records(view, setting, include, thetas);
                const auto dpath =
                    out_dir / "decisions" / (view.method_id + "__" + to_string(setting) + ".jsonl");
                decision::write_decisions(dpath, rows);
                result.outputs["decisions/" + view.method_id + "/" + to_string(setting)] = dpath;
            }
        }
    }

    result.manifest = manifest_json(cfg, st, result.outputs);
    result.manifest_path = out_dir / "manifest.json";
    jsonl::write_file_atomic(result.manifest_path, result.manifest.dump(2) + "\n");
    return result;
}

namespace {

RunResult evaluate_views(const ExperimentConfig& cfg, RunState& st, bool write_decisions_files) {
    const pipeline::Exec exec = cfg.serial_pipeline ? pipeline::Exec::serial : pipeline::Exec::openmp;
    RunResult result;
    const std::filesystem::path out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir);
    if (write_decisions_files) std::filesystem::create_directories(out_dir / "decisions");

    std::vector<EvaluatedSetting> evaluated;
    std::string evaluations_jsonl;

    {
        StageTimer timer(st.timings, "screen_and_evaluate_ms");
        for (const Setting setting : cfg.settings) {
            EvaluatedSetting es;
            es.setting = setting;
            for (auto& view : st.views) {
                std::vector<std::uint8_t> include(view.matrix.docs());
                std::vector<double> thetas;
                if (setting == Setting::uncalibrated) {
                    pipeline::decide_uncalibrated(view.matrix, include, cfg.indeterminate_policy, exec);
                } else {
                    auto [t, policies] = fit_thetas(cfg, view);
                    thetas = std::move(t);
                    pipeline::decide_calibrated(view.matrix, view.s_norm, thetas, include, exec);
                    std::filesystem::create_directories(out_dir / "policies");
                    const auto ppath = out_dir / "policies" / (view.method_id + "__calibrated.json");
                    write_policies(ppath, view, policies);
                    result.outputs["policies/" + view.method_id] = ppath;
                    result.policies[view.method_id] = std::move(policies);
                }
                if (write_decisions_files) {
                    const auto rows = decision_records(view, setting, include, thetas);
                    const auto dpath = out_dir / "decisions" /
                                       (view.method_id + "__" + to_string(setting) + ".jsonl");
                    decision::write_decisions(dpath, rows);
                    result.outputs["decisions/" + view.method_id + "/" + to_string(setting)] = dpath;
                }

                auto evals = pipeline::evaluate(view.matrix, include, cfg.metrics, exec);
                for (const auto& ev : evals) {
                    st.warnings.skipped_unlabeled += static_cast<std::int64_t>(ev.skipped_unlabeled);
                    ordered_json line;
                    line["method_id"] = view.method_id;
                    line["setting"] = to_string(setting);
                    line["topic_id"] = ev.topic_id;
                    line["tp"] = ev.confusion.tp;
                    line["fp"] = ev.confusion.fp;
                    line["tn"] = ev.confusion.tn;
                    line["fn"] = ev.confusion.fn;
                    line["precision"] = ev.precision;
                    line["recall"] = ev.recall;
                    line["b_ac"] = ev.b_ac;
                    line["f_beta"] = ev.f_beta;
                    line["wss"] = ev.wss;
                    line["success"] = ev.success;
                    if (ev.skipped_unlabeled > 0)
                        line["skipped_unlabeled"] = static_cast<std::int64_t>(ev.skipped_unlabeled);
                    if (ev.vacuous_tn_rate) line["vacuous_tn_rate"] = true;
                    evaluations_jsonl += line.dump();
                    evaluations_jsonl += '\n';
                }
                evaluation::ReportRow row;
                row.method_id = view.method_id;
                row.setting = to_string(setting);
                row.eval = evaluation::macro_average(evals, cfg.metrics);
                es.rows.push_back(row);
                result.rows.push_back(std::move(row));
                es.per_method.emplace_back(view.method_id, std::move(evals));
            }
            evaluated.push_back(std::move(es));
        }
    }

    int bonferroni_m = 0;
    {
        StageTimer timer(st.timings, "significance_ms");
        const auto pairs =
            cfg.significance_pairs.empty() ? default_pairs(st.views) : cfg.significance_pairs;
        bonferroni_m = static_cast<int>(pairs.size());
        for (const auto& es : evaluated) {
            if (pairs.empty()) continue;
            result.significance.emplace_back(to_string(es.setting),
                                             evaluation::significance(es.per_method, pairs));
        }
    }

    {
        StageTimer timer(st.timings, "report_ms");
        const auto notes = report_header_notes(cfg, bonferroni_m);
        const auto csv_path = out_dir / "report.csv";
        const auto txt_path = out_dir / "report.txt";
        const auto evals_path = out_dir / "evaluations.jsonl";
        jsonl::write_file_atomic(csv_path, evaluation::render_csv(result.rows, notes, cfg.verbose_reports));
        jsonl::write_file_atomic(txt_path, evaluation::render_text(result.rows, notes, cfg.verbose_reports));
        jsonl::write_file_atomic(evals_path, evaluations_jsonl);
        result.outputs["report_csv"] = csv_path;
        result.outputs["report_txt"] = txt_path;
        result.outputs["evaluations"] = evals_path;
        if (!result.significance.empty()) {
            ordered_json sig = ordered_json::array();
            for (const auto& [setting, report] : result.significance) {
                ordered_json e;
                e["setting"] = setting;
                e["report"] = report.to_json();
                sig.push_back(std::move(e));
            }
            const auto sig_path = out_dir / "significance.json";
            jsonl::write_file_atomic(sig_path, sig.dump(2) + "\n");
            result.outputs["significance"] = sig_path;
        }
    }

    result.manifest = manifest_json(cfg, st, result.outputs);
    result.manifest_path = out_dir / "manifest.json";
    jsonl::write_file_atomic(result.manifest_path, result.manifest.dump(2) + "\n");
    return result;
}

} // namespace

RunResult run_loo(const ExperimentConfig& cfg) {
    const ExperimentConfig& effective = cfg;
    if (effective.calibration.mode == calibration::Mode::fixed)
        throw ConfigError("the leave-one-out pipeline needs calibration mode extrapolate or seed");

    RunState st = prepare(effective);
    if (!st.dataset.labeled)
        throw ValidationError("leave-one-out evaluation requires a labeled dataset");
    if (st.dataset.topics.size() < 2)
        throw ValidationError("leave-one-out evaluation needs at least 2 topics");
    return evaluate_views(effective, st, /*write_decisions_files=*/true);
}

RunResult evaluate_decision_files(const ExperimentConfig& cfg,
                                  const std::vector<std::filesystem::path>& decision_files) {
    corpus::Dataset ds = load_dataset(cfg.dataset);
    if (!ds.labeled) throw ValidationError("evaluation requires a labeled dataset");

    // (method, setting) -> topic -> doc -> include
    struct Group {
        std::string method_id;
        std::string setting;
        std::map<std::string, std::map<std::string, bool>> by_topic;
    };
    std::vector<Group> groups;
    auto group_for = [&](const std::string& method, const std::string& setting) -> Group& {
        for (auto& g : groups)
            if (g.method_id == method && g.setting == setting) return g;
        groups.push_back({method, setting, {}});
        return groups.back();
    };
    for (const auto& file : decision_files) {
        for (const auto& r : decision::read_decisions(file))
            group_for(r.method_id, r.setting).by_topic[r.topic_id][r.doc_id] = r.include;
    }
    if (groups.empty()) throw ValidationError("no decision records to evaluate");

    RunResult result;
    std::map<std::string, double> timings;
    std::string evaluations_jsonl;
    std::map<std::string, std::vector<std::pair<std::string, std::vector<evaluation::TopicEvaluation>>>>
        per_setting;
    std::int64_t skipped_unlabeled = 0;

    for (const auto& g : groups) {
        std::vector<evaluation::TopicEvaluation> evals;
        for (const auto& topic : ds.topics) {
            auto tit = g.by_topic.find(topic.topic_id);
            if (tit == g.by_topic.end())
                throw ValidationError("decisions for method " + g.method_id + " miss topic " +
                                      topic.topic_id);
            auto lit = ds.labels.by_topic.find(topic.topic_id);
            static const std::unordered_map<std::string, int> kNoLabels;
            const auto& labels = lit == ds.labels.by_topic.end() ? kNoLabels : lit->second;
            std::size_t skipped = 0;
            const auto cm = evaluation::confusion(tit->second, labels, &skipped);
            skipped_unlabeled += static_cast<std::int64_t>(skipped);
            evals.push_back(evaluation::metric_suite(cm, cfg.metrics, topic.topic_id, skipped));
        }
        for (const auto& ev : evals) {
            ordered_json line;
            line["method_id"] = g.method_id;
            line["setting"] = g.setting;
            line["topic_id"] = ev.topic_id;
            line["tp"] = ev.confusion.tp;
            line["fp"] = ev.confusion.fp;
            line["tn"] = ev.confusion.tn;
            line["fn"] = ev.confusion.fn;
            line["precision"] = ev.precision;
            line["recall"] = ev.recall;
            line["b_ac"] = ev.b_ac;
            line["f_beta"] = ev.f_beta;
            line["wss"] = ev.wss;
            line["success"] = ev.success;
            evaluations_jsonl += line.dump();
            evaluations_jsonl += '\n';
        }
        evaluation::ReportRow row;
        row.method_id = g.method_id;
        row.setting = g.setting;
        row.eval = evaluation::macro_average(evals, cfg.metrics);
        result.rows.push_back(row);
        per_setting[g.setting].emplace_back(g.method_id, std::move(evals));
    }

    int bonferroni_m = 0;
    for (auto& [setting, per_method] : per_setting) {
        std::vector<std::pair<std::string, std::string>> pairs = cfg.significance_pairs;
        if (pairs.empty()) {
            for (std::size_t i = 0; i < per_method.size(); ++i)
                for (std::size_t j = i + 1; j < per_method.size(); ++j)
                    pairs.emplace_back(per_method[i].first, per_method[j].first);
        }
        if (pairs.empty()) continue;
        bonferroni_m = static_cast<int>(pairs.size());
        result.significance.emplace_back(setting, evaluation::significance(per_method, pairs));
    }

    const std::filesystem::path out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir);
    const auto notes = report_header_notes(cfg, bonferroni_m);
    jsonl::write_file_atomic(out_dir / "report.csv",
                             evaluation::render_csv(result.rows, notes, cfg.verbose_reports));
    jsonl::write_file_atomic(out_dir / "report.txt",
                             evaluation::render_text(result.rows, notes, cfg.verbose_reports));
    jsonl::write_file_atomic(out_dir / "evaluations.jsonl", evaluations_jsonl);
    result.outputs["report_csv"] = out_dir / "report.csv";
    result.outputs["report_txt"] = out_dir / "report.txt";
    result.outputs["evaluations"] = out_dir / "evaluations.jsonl";
    if (!result.significance.empty()) {
        ordered_json sig = ordered_json::array();
        for (const auto& [setting, report] : result.significance) {
            ordered_json e;
            e["setting"] = setting;
            e["report"] = report.to_json();
            sig.push_back(std::move(e));
        }
        jsonl::write_file_atomic(out_dir / "significance.json", sig.dump(2) + "\n");
        result.outputs["significance"] = out_dir / "significance.json";
    }

    ordered_json m;
    m["version"] = SCREENLM_VERSION;
    m["config"] = config_to_json(cfg);
    m["warnings"] = {{"skipped_unlabeled", skipped_unlabeled}};
    ordered_json outs;
    for (const auto& [name, path] : result.outputs) outs[name] = path.string();
    m["outputs"] = std::move(outs);
    result.manifest = std::move(m);
    result.manifest_path = out_dir / "manifest.json";
    jsonl::write_file_atomic(result.manifest_path, result.manifest.dump(2) + "\n");
    return result;
}

RunResult report_from_evaluations(const ExperimentConfig& cfg,
                                  const std::filesystem::path& evaluations_file) {
    struct Group {
        std::string method_id;
        std::string setting;
        std::vector<evaluation::TopicEvaluation> evals;
    };
    std::vector<Group> groups;
    auto group_for = [&](const std::string& method, const std::string& setting) -> Group& {
        for (auto& g : groups)
            if (g.method_id == method && g.setting == setting) return g;
        groups.push_back({method, setting, {}});
        return groups.back();
    };
    jsonl::for_each(evaluations_file, [&](std::size_t line, const ordered_json& o) {
        const std::string method = jsonl::require_string(o, "method_id", evaluations_file, line);
        const std::string setting = jsonl::require_string(o, "setting", evaluations_file, line);
        const std::string topic = jsonl::require_string(o, "topic_id", evaluations_file, line);
        evaluation::ConfusionMatrix cm;
        auto count = [&](const char* field) -> std::int64_t {
            auto it = o.find(field);
            if (it == o.end() || !it->is_number_integer())
                throw ParseError(evaluations_file.string() + ":" + std::to_string(line) +
                                 ": missing integer field \"" + std::string(field) + "\"");
            return it->get<std::int64_t>();
        };
        cm.tp = count("tp");
        cm.fp = count("fp");
        cm.tn = count("tn");
        cm.fn = count("fn");
        group_for(method, setting).evals.push_back(evaluation::metric_suite(cm, cfg.metrics, topic));
    });
    if (groups.empty()) throw ValidationError("no evaluation records in " + evaluations_file.string());

    RunResult result;
    std::map<std::string, std::vector<std::pair<std::string, std::vector<evaluation::TopicEvaluation>>>>
        per_setting;
    for (auto& g : groups) {
        evaluation::ReportRow row;
        row.method_id = g.method_id;
        row.setting = g.setting;
        row.eval = evaluation::macro_average(g.evals, cfg.metrics);
        result.rows.push_back(row);
        per_setting[g.setting].emplace_back(g.method_id, std::move(g.evals));
    }

    int bonferroni_m = 0;
    for (auto& [setting, per_method] : per_setting) {
        std::vector<std::pair<std::string, std::string>> pairs = cfg.significance_pairs;
        if (pairs.empty()) {
            for (std::size_t i = 0; i < per_method.size(); ++i)
                for (std::size_t j = i + 1; j < per_method.size(); ++j)
                    pairs.emplace_back(per_method[i].first, per_method[j].first);
        }
        if (pairs.empty()) continue;
        bonferroni_m = static_cast<int>(pairs.size());
        result.significance.emplace_back(setting, evaluation::significance(per_method, pairs));
    }

    const std::filesystem::path out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir);
    const auto notes = report_header_notes(cfg, bonferroni_m);
    jsonl::write_file_atomic(out_dir / "report.csv",
                             evaluation::render_csv(result.rows, notes, cfg.verbose_reports));
    jsonl::write_file_atomic(out_dir / "report.txt",
                             evaluation::render_text(result.rows, notes, cfg.verbose_reports));
    result.outputs["report_csv"] = out_dir / "report.csv";
    result.outputs["report_txt"] = out_dir / "report.txt";
    if (!result.significance.empty()) {
        ordered_json sig = ordered_json::array();
        for (const auto& [setting, report] : result.significance) {
            ordered_json e;
            e["setting"] = setting;
            e["report"] = report.to_json();
            sig.push_back(std::move(e));
        }
        jsonl::write_file_atomic(out_dir / "significance.json", sig.dump(2) + "\n");
        result.outputs["significance"] = out_dir / "significance.json";
    }
    return result;
}

} // namespace screenlm::runner
