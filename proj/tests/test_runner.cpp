#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"
#include "screenlm/runner.hpp"

using namespace screenlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("screenlm-runner-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

runner::ExperimentConfig synthetic_config(const fs::path& out, int topics = 6, int docs = 40,
                                          std::uint64_t seed = 7) {
    runner::ExperimentConfig cfg;
    synthetic::DatasetSpec spec;
    spec.topics = topics;
    spec.docs_per_topic = docs;
    spec.prevalence = 0.25;
    spec.seed = seed;
    cfg.dataset.synthetic_spec = spec;
    runner::BackendConfig backend;
    backend.kind = runner::BackendKind::synthetic;
    backend.profile.method_id = "synth-a";
    cfg.backends.push_back(backend);
    cfg.calibration.mode = calibration::Mode::extrapolate;
    cfg.calibration.target_recall = 0.95;
    cfg.output_dir = out;
    cfg.seed = seed;
    return cfg;
}

std::string slurp(const fs::path& p) { return jsonl::read_file(p); }

} // namespace

TEST_CASE("config JSON round-trips through the manifest snapshot") {
    const auto dir = temp_dir("config");
    const std::string config_text = R"({
      "dataset": {"synthetic": {"topics": 4, "docs_per_topic": 30, "prevalence": 0.2, "seed": 3}},
      "backends": [
        {"method_id": "a", "kind": "synthetic"},
        {"method_id": "b", "kind": "synthetic", "yes_variants": ["yes", "y"]}
      ],
      "ensembles": [{"ensemble_id": "ens", "methods": ["a", "b"]}],
      "calibration": {"mode": "extrapolate", "target_recall": 1.0},
      "settings": ["uncalibrated", "calibrated"],
      "output_dir": "out",
      "seed": 3
    })";
    std::ofstream(dir / "config.json") << config_text;
    const auto cfg = runner::load_config(dir / "config.json");
    CHECK(cfg.backends.size() == 2);
    CHECK(cfg.backends[1].profile.yes_variants.size() == 2);
    CHECK(cfg.output_dir == dir / "out");

    const auto snapshot = runner::config_to_json(cfg);
    const auto back = runner::config_from_json(snapshot, dir);
    CHECK(runner::config_to_json(back) == snapshot);
}

TEST_CASE("config validation catches the usual mistakes") {
    const auto dir = temp_dir("config-bad");
    auto parse = [&](const std::string& text) {
        std::ofstream(dir / "c.json") << text;
        return runner::load_config(dir / "c.json");
    };
    CHECK_THROWS_AS(parse("{}"), ConfigError);                         // no backends
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "bad id"}]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "a", "kind": "warp"}]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "a"}, {"method_id": "a"}]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "a"}],
                              "ensembles": [{"ensemble_id": "e", "methods": ["a"]}]})"),
                    ConfigError);
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "a", "kind": "http"}]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"backends": [{"method_id": "a"}],
                              "calibration": {"mode": "fixed"}})"),
                    ConfigError);
}

TEST_CASE("run_screen is deterministic for a fixed seed") {
    const auto out1 = temp_dir("screen-1");
    const auto out2 = temp_dir("screen-2");
    const auto out3 = temp_dir("screen-3");
    auto cfg1 = synthetic_config(out1);
    auto cfg2 = synthetic_config(out2);
    auto cfg3 = synthetic_config(out3);
    cfg3.workers = 4; // concurrency must not leak into the outputs
    runner::run_screen(cfg1);
    runner::run_screen(cfg2);
    runner::run_screen(cfg3);
    for (const char* rel : {"decisions/synth-a__uncalibrated.jsonl",
                            "decisions/synth-a__calibrated.jsonl",
                            "policies/synth-a__calibrated.json"}) {
        CHECK(slurp(out1 / rel) == slurp(out2 / rel));
        CHECK(slurp(out1 / rel) == slurp(out3 / rel));
    }
}

TEST_CASE("cached scores replay without a live backend") {
    const auto out = temp_dir("offline");
    auto cfg = synthetic_config(out);
    cfg.cache_file = out / "scores.jsonl";
    runner::run_screen(cfg);
    const std::string first = slurp(out / "decisions" / "synth-a__calibrated.jsonl");

    auto offline = cfg;
    offline.output_dir = temp_dir("offline-replay");
    offline.offline = true; // any backend call would now fail
    runner::run_screen(offline);
    CHECK(slurp(offline.output_dir / "decisions" / "synth-a__calibrated.jsonl") == first);
}

TEST_CASE("offline without a cache fails as a scoring error") {
    const auto out = temp_dir("offline-miss");
    auto cfg = synthetic_config(out);
    cfg.cache_file = out / "scores.jsonl"; // empty cache
    cfg.offline = true;
    CHECK_THROWS_AS(runner::run_screen(cfg), ScoringError);
}

TEST_CASE("tolerated scoring failures become indeterminate decisions") {
    const auto out = temp_dir("tolerated");
    auto cfg = synthetic_config(out, 2, 10);
    cfg.settings = {runner::Setting::uncalibrated};
    cfg.max_failure_fraction = 0.5;
    cfg.offline = true;
    cfg.cache_file = out / "scores.jsonl";

    // Pre-fill the cache for every document except two (empty prompt_hash
    // records match any prompt).
    const corpus::Dataset ds = runner::load_dataset(cfg.dataset);
    std::vector<scoring::ScoreRecord> external;
    int dropped = 0;
    for (const auto& topic : ds.topics) {
        for (const auto& c : ds.candidates_for(topic.topic_id)) {
            if (dropped < 2 && topic.topic_id == ds.topics[0].topic_id) {
                ++dropped;
                continue;
            }
            external.push_back({"synth-a", topic.topic_id, c.doc_id, 0.8, 0.2, false, ""});
        }
    }
    scoring::write_score_records(*cfg.cache_file, external);

    const auto result = runner::run_screen(cfg);
    CHECK(result.manifest["warnings"]["failed_documents"] == 2);
    const auto decisions =
        decision::read_decisions(out / "decisions" / "synth-a__uncalibrated.jsonl");
    CHECK(decisions.size() == 20); // every candidate still gets a decision
    std::size_t excluded = 0;
    for (const auto& d : decisions)
        if (!d.include) ++excluded;
    CHECK(excluded == 2); // the unscored pair, excluded under the default policy
}

TEST_CASE("seed calibration requires a seed set") {
    const auto out = temp_dir("no-seeds");
    auto cfg = synthetic_config(out);
    cfg.calibration.mode = calibration::Mode::seed;
    try {
        runner::run_screen(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("seed calibration requires a seed set") != std::string::npos);
    }
}

TEST_CASE("seed calibration lowers thresholds and never hurts recall") {
    const auto out = temp_dir("seed-mode");
    auto cfg = synthetic_config(out, 5, 40);
    cfg.dataset.synthetic_spec->with_seeds = true;
    cfg.dataset.synthetic_spec->non_retrieved_seed = true;
    cfg.calibration.mode = calibration::Mode::seed;
    cfg.settings = {runner::Setting::calibrated};
    const auto result = runner::run_loo(cfg);
    REQUIRE(result.policies.count("synth-a") == 1);
    for (const auto& policy : result.policies.at("synth-a")) {
        REQUIRE(policy.base_theta.has_value());
        CHECK(policy.theta <= *policy.base_theta);
        CHECK(policy.mode == "seed");
        CHECK_FALSE(policy.seed_scores.empty());
    }
}

TEST_CASE("each leave-one-out fold fits on the other topics only") {
    const auto out = temp_dir("folds");
    auto cfg = synthetic_config(out, 3, 30, 23);
    const corpus::Dataset ds = runner::load_dataset(cfg.dataset);
    const auto views = runner::build_views(cfg, ds, nullptr);
    const auto [thetas, policies] = runner::fit_thetas(cfg, views[0]);
    REQUIRE(policies.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(policies[t].per_topic_thresholds.size() == 2);
        for (const auto& [sample_id, _] : policies[t].per_topic_thresholds)
            CHECK(sample_id != ds.topics[t].topic_id);
    }
}

TEST_CASE("leave-one-out thresholds ignore the target topic's scores") {
    const auto out = temp_dir("leakage");
    auto cfg = synthetic_config(out, 5, 30, 21);
    const corpus::Dataset ds = runner::load_dataset(cfg.dataset);
    const auto views = runner::build_views(cfg, ds, nullptr);
    REQUIRE(views.size() == 1);
    const auto [thetas, policies] = runner::fit_thetas(cfg, views[0]);

    // Perturb every score of the first (target) topic and refit.
    runner::MethodView perturbed = views[0];
    const auto [b, e] = perturbed.matrix.topic_range(0);
    for (std::size_t i = b; i < e; ++i)
        perturbed.s_norm[i] = std::min(1.0, perturbed.s_norm[i] * 0.5 + 0.01);
    const auto [thetas2, policies2] = runner::fit_thetas(cfg, perturbed);
    CHECK(thetas2[0] == thetas[0]);
    // The perturbation was real: other folds sample the target topic, so its
    // per-topic threshold in their provenance must have moved.
    const std::string& target = ds.topics[0].topic_id;
    auto sample_theta = [&](const calibration::ThresholdPolicy& p) {
        for (const auto& [topic_id, theta] : p.per_topic_thresholds)
            if (topic_id == target) return theta;
        FAIL("target topic missing from the fold's samples");
        return 0.0;
    };
    CHECK(sample_theta(policies2[1]) != sample_theta(policies[1]));
}

TEST_CASE("the loo pipeline writes aligned reports and byte-identical reruns") {
    const auto out1 = temp_dir("loo-1");
    auto cfg = synthetic_config(out1, 6, 50, 13);
    runner::BackendConfig second;
    second.kind = runner::BackendKind::synthetic;
    second.profile.method_id = "synth-b";
    second.profile.yes_variants = {"yes", "yeah"};
    cfg.backends.push_back(second);
    runner::EnsembleSpec ens;
    ens.ensemble_id = "ens-ab";
    ens.method_ids = {"synth-a", "synth-b"};
    cfg.ensembles.push_back(ens);

    const auto result = runner::run_loo(cfg);
    CHECK(result.rows.size() == 2 * 3); // settings x methods
    REQUIRE(result.significance.size() == 2);
    CHECK(result.significance[0].second.comparisons == 3);

    const auto out2 = temp_dir("loo-2");
    auto cfg2 = cfg;
    cfg2.output_dir = out2;
    runner::run_loo(cfg2);
    for (const char* rel : {"report.csv", "report.txt", "evaluations.jsonl", "significance.json",
                            "decisions/ens-ab__calibrated.jsonl"}) {
        CHECK(slurp(out1 / rel) == slurp(out2 / rel));
    }

    // The serial reference lane produces the same bytes as the OpenMP lane.
    const auto out3 = temp_dir("loo-serial");
    auto cfg3 = cfg;
    cfg3.output_dir = out3;
    cfg3.serial_pipeline = true;
    runner::run_loo(cfg3);
    CHECK(slurp(out3 / "report.csv") == slurp(out1 / "report.csv"));
    CHECK(slurp(out3 / "evaluations.jsonl") == slurp(out1 / "evaluations.jsonl"));
}

TEST_CASE("a run reproduces from its manifest alone") {
    const auto out = temp_dir("manifest");
    auto cfg = synthetic_config(out, 5, 30, 17);
    cfg.cache_file = out / "scores.jsonl";
    const auto result = runner::run_screen(cfg);

    auto replay_cfg = runner::config_from_manifest(result.manifest_path);
    replay_cfg.output_dir = temp_dir("manifest-replay");
    const auto replay = runner::run_screen(replay_cfg);
    CHECK(slurp(out / "decisions" / "synth-a__calibrated.jsonl") ==
          slurp(replay_cfg.output_dir / "decisions" / "synth-a__calibrated.jsonl"));
    CHECK(result.manifest["effective"] == replay.manifest["effective"]);
}

TEST_CASE("manifests count warnings as hard numbers") {
    const auto out = temp_dir("warnings");
    auto cfg = synthetic_config(out);
    const auto result = runner::run_screen(cfg);
    const auto& w = result.manifest["warnings"];
    CHECK(w.contains("indeterminate_records"));
    CHECK(w.contains("truncated_prompts"));
    CHECK(w.contains("degenerate_normalizations"));
    CHECK(w["failed_documents"] == 0);
}

TEST_CASE("evaluate_decision_files matches the loo evaluation") {
    const auto out = temp_dir("evalfiles");
    auto cfg = synthetic_config(out, 6, 50, 13);
    const auto result = runner::run_loo(cfg);

    auto cfg2 = cfg;
    cfg2.output_dir = temp_dir("evalfiles-re");
    const auto re = runner::evaluate_decision_files(
        cfg2, {out / "decisions" / "synth-a__uncalibrated.jsonl",
               out / "decisions" / "synth-a__calibrated.jsonl"});
    REQUIRE(re.rows.size() == 2);
    for (const auto& row : re.rows) {
        for (const auto& orig : result.rows) {
            if (orig.method_id == row.method_id && orig.setting == row.setting) {
                CHECK(row.eval.recall == orig.eval.recall);
                CHECK(row.eval.b_ac == orig.eval.b_ac);
                CHECK(row.eval.wss == orig.eval.wss);
                CHECK(row.eval.success_rate == orig.eval.success_rate);
            }
        }
    }

    // report_from_evaluations re-renders the same table rows.
    auto cfg3 = cfg;
    cfg3.output_dir = temp_dir("evalfiles-report");
    const auto rep = runner::report_from_evaluations(cfg3, out / "evaluations.jsonl");
    CHECK(rep.rows.size() == result.rows.size());
}

TEST_CASE("loo refuses unlabeled or single-topic datasets") {
    const auto out = temp_dir("loo-bad");
    auto cfg = synthetic_config(out, 1, 30);
    CHECK_THROWS_AS(runner::run_loo(cfg), ValidationError);
    auto fixed = synthetic_config(out);
    fixed.calibration.mode = calibration::Mode::fixed;
    fixed.calibration.fixed_theta = 0.5;
    CHECK_THROWS_AS(runner::run_loo(fixed), ConfigError);
}

TEST_CASE("ingest canonicalizes into a reloadable dataset") {
    const auto data = fs::path(SCREENLM_TEST_DATA_DIR);
    runner::DatasetConfig in;
    in.topics = data / "topics.jsonl";
    in.candidates = data / "candidates.jsonl";
    in.qrels = data / "qrels.txt";
    in.seeds = data / "seeds.jsonl";
    const auto out = temp_dir("ingest");
    const auto ds = runner::run_ingest(in, out);
    CHECK(ds.topics.size() == 3);
    const auto reloaded = corpus::read_dataset(out);
    CHECK(corpus::structurally_equal(ds, reloaded));
}
