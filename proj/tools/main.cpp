// Command-line front end: ingest, score, calibrate, screen, ensemble,
// evaluate, report, loo. Library errors map to distinct exit codes so batch
// drivers can tell configuration, data and scoring failures apart.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"
#include "screenlm/runner.hpp"

namespace {

using namespace screenlm;

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool offline = false;
    std::optional<int> workers;
    std::optional<std::string> output_dir;
};

void add_common(CLI::App* cmd, GlobalOpts& g, bool config_required = true) {
    auto* opt = cmd->add_option("--config", g.config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--seed", g.seed, "override the config's random seed");
    cmd->add_flag("--offline", g.offline, "score from the cache only; no backend calls");
    cmd->add_option("--workers", g.workers, "topic-level scoring concurrency");
    cmd->add_option("--out", g.output_dir, "override the config's output directory");
}

runner::ExperimentConfig resolve_config(const GlobalOpts& g) {
    runner::ExperimentConfig cfg = runner::load_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.offline) cfg.offline = true;
    if (g.workers) cfg.workers = *g.workers;
    if (g.output_dir) cfg.output_dir = std::filesystem::absolute(*g.output_dir);
    return cfg;
}

void print_report_rows(const runner::RunResult& result) {
    for (const auto& [name, path] : result.outputs) std::printf("%-32s %s\n", name.c_str(), path.string().c_str());
    std::printf("manifest                         %s\n", result.manifest_path.string().c_str());
}

int dispatch(int argc, char** argv) {
    CLI::App app{"screening automation with next-token likelihoods"};
    app.require_subcommand(1);

    GlobalOpts g;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate and canonicalize a dataset");
    std::string in_topics, in_candidates, in_qrels, in_seeds, in_out;
    ingest->add_option("--topics", in_topics, "topics JSONL")->required();
    ingest->add_option("--candidates", in_candidates, "candidates JSONL")->required();
    ingest->add_option("--qrels", in_qrels, "TREC-style qrels");
    ingest->add_option("--seeds", in_seeds, "seed studies JSONL");
    ingest->add_option("--out", in_out, "output dataset directory")->required();

    auto* score = app.add_subcommand("score", "run backends over the dataset into the score cache");
    add_common(score, g);

    auto* calibrate = app.add_subcommand("calibrate", "fit per-topic thresholds and write policies");
    add_common(calibrate, g);
    std::string cal_method;
    calibrate->add_option("--method", cal_method, "restrict to one method id");

    auto* screen = app.add_subcommand("screen", "score, calibrate and write decisions");
    add_common(screen, g, /*config_required=*/false);
    std::string screen_policy;
    screen->add_option("--policy", screen_policy, "apply a fixed threshold policy JSON");
    std::string screen_manifest;
    screen->add_option("--from-manifest", screen_manifest, "rerun the config embedded in a manifest");

    auto* ensemble = app.add_subcommand("ensemble", "screen with the configured ensembles");
    add_common(ensemble, g);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate decision files against the dataset");
    add_common(evaluate, g);
    std::vector<std::string> eval_decisions;
    evaluate->add_option("--decisions", eval_decisions, "decision JSONL files")->required();

    auto* report = app.add_subcommand("report", "re-render tables from an evaluations file");
    add_common(report, g);
    std::string report_evals;
    report->add_option("--evaluations", report_evals, "evaluations.jsonl")->required();

    auto* loo = app.add_subcommand("loo", "full leave-one-out experiment");
    add_common(loo, g);

    CLI11_PARSE(app, argc, argv);

    if (ingest->parsed()) {
        runner::DatasetConfig in;
        in.topics = std::filesystem::absolute(in_topics);
        in.candidates = std::filesystem::absolute(in_candidates);
        if (!in_qrels.empty()) in.qrels = std::filesystem::absolute(in_qrels);
        if (!in_seeds.empty()) in.seeds = std::filesystem::absolute(in_seeds);
        const corpus::Dataset ds = runner::run_ingest(in, in_out);
        std::printf("topics: %zu\n", ds.topics.size());
        std::printf("labels: %zu\n", ds.labels.size());
        std::printf("removed_topics: %zu\n", ds.report.removed_topics.size());
        for (const auto& t : ds.report.removed_topics) std::printf("  removed %s\n", t.c_str());
        std::printf("dropped_labels: %zu\n", ds.report.dropped_labels);
        std::printf("dropped_seeds: %zu\n", ds.report.dropped_seeds);
        std::printf("wrote %s\n", in_out.c_str());
        return exit_ok;
    }

    if (score->parsed()) {
        runner::ExperimentConfig cfg = resolve_config(g);
        if (!cfg.cache_file) throw ConfigError("score needs a cache path in the config");
        const corpus::Dataset ds = runner::load_dataset(cfg.dataset);
        scoring::ScoreCache cache(*cfg.cache_file);
        const auto views = runner::build_views(cfg, ds, &cache);
        for (const auto& v : views) {
            if (v.is_ensemble) continue;
            std::printf("%s: %zu documents scored (%lld from cache, %lld retries, %lld indeterminate)\n",
                        v.method_id.c_str(), v.matrix.docs(), static_cast<long long>(v.cache_hits),
                        static_cast<long long>(v.retries), static_cast<long long>(v.indeterminate));
        }
        std::printf("cache entries: %zu -> %s\n", cache.size(), cfg.cache_file->string().c_str());
        return exit_ok;
    }

    if (calibrate->parsed()) {
        runner::ExperimentConfig cfg = resolve_config(g);
        const corpus::Dataset ds = runner::load_dataset(cfg.dataset);
        std::unique_ptr<scoring::ScoreCache> cache;
        if (cfg.cache_file) cache = std::make_unique<scoring::ScoreCache>(*cfg.cache_file);
        cfg.settings = {runner::Setting::calibrated};
        const auto views = runner::build_views(cfg, ds, cache.get());
        std::filesystem::create_directories(cfg.output_dir / "policies");
        for (const auto& v : views) {
            if (!cal_method.empty() && v.method_id != cal_method) continue;
            const auto [thetas, policies] = runner::fit_thetas(cfg, v);
            nlohmann::ordered_json o;
            o["method_id"] = v.method_id;
            auto arr = nlohmann::ordered_json::array();
            for (std::size_t t = 0; t < v.matrix.topics(); ++t) {
                nlohmann::ordered_json e;
                e["topic_id"] = v.matrix.topic_ids[t];
                e["policy"] = policies[t].to_json();
                arr.push_back(std::move(e));
            }
            o["per_topic"] = std::move(arr);
            const auto path = cfg.output_dir / "policies" / (v.method_id + "__calibrated.json");
            jsonl::write_file_atomic(path, o.dump(2) + "\n");
            std::printf("%s: wrote %s\n", v.method_id.c_str(), path.string().c_str());
        }
        return exit_ok;
    }

    if (screen->parsed() || ensemble->parsed()) {
        runner::ExperimentConfig cfg;
        if (!screen_manifest.empty()) {
            cfg = runner::config_from_manifest(screen_manifest);
            if (g.seed) cfg.seed = *g.seed;
            if (g.offline) cfg.offline = true;
            if (g.output_dir) cfg.output_dir = std::filesystem::absolute(*g.output_dir);
        } else if (!g.config_path.empty()) {
            cfg = resolve_config(g);
        } else {
            throw ConfigError("screen needs --config or --from-manifest");
        }
        if (ensemble->parsed() && cfg.ensembles.empty())
            throw ConfigError("ensemble needs at least one ensemble in the config");
        if (!screen_policy.empty()) {
            const auto policy = calibration::read_policy(screen_policy);
            cfg.calibration.mode = calibration::Mode::fixed;
            cfg.calibration.fixed_theta = policy.theta;
        }
        const runner::RunResult result = runner::run_screen(cfg);
        print_report_rows(result);
        return exit_ok;
    }

    if (evaluate->parsed()) {
        runner::ExperimentConfig cfg = resolve_config(g);
        std::vector<std::filesystem::path> files;
        for (const auto& f : eval_decisions) files.emplace_back(std::filesystem::absolute(f));
        const runner::RunResult result = runner::evaluate_decision_files(cfg, files);
        print_report_rows(result);
        return exit_ok;
    }

    if (report->parsed()) {
        runner::ExperimentConfig cfg = resolve_config(g);
        const runner::RunResult result =
            runner::report_from_evaluations(cfg, std::filesystem::absolute(report_evals));
        for (const auto& [name, path] : result.outputs)
            std::printf("%-32s %s\n", name.c_str(), path.string().c_str());
        return exit_ok;
    }

    if (loo->parsed()) {
        runner::ExperimentConfig cfg = resolve_config(g);
        const runner::RunResult result = runner::run_loo(cfg);
        print_report_rows(result);
        return exit_ok;
    }

    return exit_unexpected;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return exit_data;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return exit_data;
    } catch (const ScoringError& e) {
        std::fprintf(stderr, "scoring error: %s\n", e.what());
        return exit_scoring;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_unexpected;
    }
}
