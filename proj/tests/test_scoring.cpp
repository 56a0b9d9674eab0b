#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "screenlm/decision.hpp"
#include "screenlm/hash.hpp"
#include "screenlm/errors.hpp"
#include "screenlm/scoring.hpp"
#include "screenlm/synthetic.hpp"

using namespace screenlm;
using namespace screenlm::scoring;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kYes{"yes"};
const std::vector<std::string> kNo{"no"};

BackendProfile synth_profile(const std::string& id = "synth") {
    BackendProfile p;
    p.method_id = id;
    return p;
}

corpus::Topic topic() { return {"T1", "Synthetic review"}; }

std::vector<corpus::Candidate> candidates(int n) {
    std::vector<corpus::Candidate> out;
    for (int i = 0; i < n; ++i)
        out.push_back({"D" + std::to_string(i), "Study " + std::to_string(i), "Abstract."});
    return out;
}

fs::path temp_file(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("screenlm-scoring-" + name);
    fs::remove(p);
    return p;
}

} // namespace

TEST_CASE("extract_yes_no sums every matching surface") {
    TokenDistribution dist{{{"Yes", 0.55}, {"yes", 0.10}, {"No", 0.20}}, false};
    const auto m = extract_yes_no(dist, kYes, kNo);
    CHECK(m.p_yes == doctest::Approx(0.65).epsilon(1e-12));
    CHECK(m.p_no == doctest::Approx(0.20).epsilon(1e-12));
    CHECK_FALSE(m.indeterminate);
}

TEST_CASE("absent answer tokens make the record indeterminate") {
    TokenDistribution dist{{{"the", 0.9}, {"a", 0.1}}, false};
    const auto m = extract_yes_no(dist, kYes, kNo);
    CHECK(m.p_yes == 0.0);
    CHECK(m.p_no == 0.0);
    CHECK(m.indeterminate);
}

TEST_CASE("log-space distributions convert at the boundary") {
    TokenDistribution dist{{{"yes", std::log(0.5)}, {"no", std::log(0.25)}}, true};
    const auto m = extract_yes_no(dist, kYes, kNo);
    CHECK(m.p_yes == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.p_no == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("surfaces are trimmed and case-folded") {
    TokenDistribution dist{{{" YES", 0.3}, {"\tNo\n", 0.2}, {"maybe", 0.5}}, false};
    const auto m = extract_yes_no(dist, kYes, kNo);
    CHECK(m.p_yes == doctest::Approx(0.3));
    CHECK(m.p_no == doctest::Approx(0.2));
}

TEST_CASE("adding a yes-variant token never decreases p_yes") {
    KeyedRng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        TokenDistribution dist;
        const int n = 1 + static_cast<int>(rng.uniform() * 6);
        for (int i = 0; i < n; ++i) {
            const double u = rng.uniform();
            std::string tok = u < 0.3 ? "yes" : u < 0.6 ? "no" : "other" + std::to_string(i);
            dist.entries.push_back({tok, rng.uniform()});
        }
        const double before = extract_yes_no(dist, kYes, kNo).p_yes;
        dist.entries.push_back({"Yes", rng.uniform()});
        const double after = extract_yes_no(dist, kYes, kNo).p_yes;
        CHECK(after >= before);
    }
}

TEST_CASE("synthetic scores are deterministic and in range") {
    const auto a = synthetic::synthetic_score("m", "T1", "D1", 42);
    const auto b = synthetic::synthetic_score("m", "T1", "D1", 42);
    CHECK(a == b);
    CHECK(a != synthetic::synthetic_score("m", "T1", "D2", 42));

    KeyedRng rng(7);
    for (int i = 0; i < 100000; ++i) {
        const std::string doc = "D" + std::to_string(i);
        const int label = rng.uniform() < 0.5 ? 1 : 0;
        const auto r = synthetic::synthetic_score("m", "T", doc, 7, label);
        CHECK(r.p_yes >= 0.0);
        CHECK(r.p_yes <= 1.0);
        CHECK(r.p_no >= 0.0);
        CHECK(r.p_no <= 1.0);
    }
}

TEST_CASE("planted included scores dominate excluded ones") {
    double mean_inc = 0.0, mean_exc = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        mean_inc += synthetic::synthetic_score("m", "T", "I" + std::to_string(i), 11, 1).p_yes;
        mean_exc += synthetic::synthetic_score("m", "T", "E" + std::to_string(i), 11, 0).p_yes;
    }
    mean_inc /= n;
    mean_exc /= n;
    CHECK(mean_inc > mean_exc);
    // Margins separate completely under the planted parameters.
    for (int i = 0; i < 200; ++i) {
        const auto inc = synthetic::synthetic_score("m", "T", "I" + std::to_string(i), 11, 1);
        const auto exc = synthetic::synthetic_score("m", "T", "E" + std::to_string(i), 11, 0);
        CHECK(decision::raw_margin(inc) >= 0.5);
        CHECK(decision::raw_margin(exc) == 0.0);
    }
}

TEST_CASE("cache returns the fetched record and rereads bit-identically") {
    const auto path = temp_file("cache.jsonl");
    synthetic::SyntheticBackend backend(synth_profile(), 42);
    const auto prompt = prompting::render_prompt(prompting::builtin_template("generic"),
                                                 topic().title, candidates(1)[0]);
    {
        ScoreCache cache(path);
        const auto fetched = score_document(backend, &cache, prompt, "T1", "D0");
        CHECK_FALSE(fetched.from_cache);
        const auto hit = score_document(backend, &cache, prompt, "T1", "D0");
        CHECK(hit.from_cache);
        CHECK(hit.record == fetched.record);
    }
    {
        ScoreCache reloaded(path);
        CHECK(reloaded.size() == 1);
        const auto hit = score_document(backend, &reloaded, prompt, "T1", "D0");
        CHECK(hit.from_cache);
        // Bit-exact: the synthetic backend is deterministic, so regenerating
        // must equal the reread bytes-for-bytes on every double.
        const auto regenerated = score_document(backend, nullptr, prompt, "T1", "D0");
        CHECK(hit.record == regenerated.record);
    }
}

TEST_CASE("externally produced scores match any prompt via an empty hash") {
    const auto path = temp_file("cache-external.jsonl");
    std::vector<ScoreRecord> external{
        {"clf", "T1", "D0", 0.83, 0.17, false, ""},
        {"clf", "T1", "D1", 0.12, 0.88, false, ""},
    };
    write_score_records(path, external);

    ScoreCache cache(path);
    CHECK(cache.size() == 2);
    auto profile = synth_profile("clf");
    synthetic::SyntheticBackend backend(profile, 1); // never consulted on a hit
    const auto prompt = prompting::render_prompt(prompting::builtin_template("generic"),
                                                 topic().title, candidates(1)[0]);
    const auto out = score_document(backend, &cache, prompt, "T1", "D0");
    CHECK(out.from_cache);
    CHECK(out.record.p_yes == 0.83);
    CHECK(out.record.p_no == 0.17);
}

TEST_CASE("score record files reread bit-exactly") {
    const auto path = temp_file("records.jsonl");
    std::vector<ScoreRecord> records;
    KeyedRng rng(3);
    for (int i = 0; i < 50; ++i)
        records.push_back({"m", "T", "D" + std::to_string(i), rng.uniform(), rng.uniform(),
                           false, hex64(rng.next_u64())});
    write_score_records(path, records);
    const auto back = read_score_records(path);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(back[i] == records[i]);
}

TEST_CASE("cache keeps the last write on key collisions") {
    const auto path = temp_file("cache-lww.jsonl");
    {
        ScoreCache cache(path);
        ScoreRecord r{"m", "T", "D", 0.1, 0.2, false, "h"};
        cache.put(r);
        r.p_yes = 0.9;
        cache.put(r);
    }
    ScoreCache reloaded(path);
    CHECK(reloaded.size() == 1);
    CHECK(reloaded.find("m", "T", "D", "h")->p_yes == 0.9);
}

TEST_CASE("score_topic preserves input order under jittered completion") {
    auto profile = synth_profile();
    profile.max_inflight = 8;
    synthetic::SyntheticBackend backend(profile, 42, nullptr, /*jitter_delays=*/true);
    const auto cands = candidates(64);
    const auto ts = score_topic(backend, nullptr, topic(), cands,
                                prompting::builtin_template("generic"), 2048);
    REQUIRE(ts.records.size() == cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) CHECK(ts.records[i].doc_id == cands[i].doc_id);
    CHECK(ts.failed_docs.empty());
}

TEST_CASE("a retried failure still yields a full record set") {
    auto profile = synth_profile();
    profile.retry.max_attempts = 3;
    profile.retry.backoff_ms = 0;
    synthetic::SyntheticBackend backend(profile, 42);
    backend.set_planned_failures([](const std::string& doc) { return doc == "D3" ? 1 : 0; });
    const auto cands = candidates(10);
    const auto ts = score_topic(backend, nullptr, topic(), cands,
                                prompting::builtin_template("generic"), 2048);
    CHECK(ts.records.size() == 10);
    CHECK(ts.retries == 1);
}

TEST_CASE("too many hard failures fail the whole topic and list the documents") {
    auto profile = synth_profile();
    profile.retry.max_attempts = 2;
    profile.retry.backoff_ms = 0;
    synthetic::SyntheticBackend backend(profile, 42);
    backend.set_planned_failures([](const std::string& doc) {
        return (doc == "D1" || doc == "D4" || doc == "D7") ? 99 : 0;
    });
    const auto cands = candidates(100);
    try {
        score_topic(backend, nullptr, topic(), cands, prompting::builtin_template("generic"), 2048,
                    /*max_failure_fraction=*/0.01);
        FAIL("expected ScoringError");
    } catch (const ScoringError& e) {
        REQUIRE(e.failed_docs().size() == 3);
        CHECK(e.failed_docs()[0] == "D1");
        CHECK(e.failed_docs()[1] == "D4");
        CHECK(e.failed_docs()[2] == "D7");
    }
}

namespace {

// A backend whose top-K never contains an answer token.
class NoAnswerBackend : public ScoreBackend {
public:
    NoAnswerBackend() { profile_.method_id = "noanswer"; }
    const BackendProfile& profile() const override { return profile_; }
    TokenDistribution next_token_distribution(const ScoreRequest&) override {
        return {{{"the", 0.6}, {"a", 0.2}, {"of", 0.1}, {"and", 0.05}, {"in", 0.05}}, false};
    }

private:
    BackendProfile profile_;
};

} // namespace

TEST_CASE("a top-K without answer tokens scores as indeterminate") {
    NoAnswerBackend backend;
    const auto prompt = prompting::render_prompt(prompting::builtin_template("generic"),
                                                 topic().title, candidates(1)[0]);
    const auto out = score_document(backend, nullptr, prompt, "T1", "D0");
    CHECK(out.record.indeterminate);
    CHECK(out.record.p_yes == 0.0);
    CHECK(out.record.p_no == 0.0);
}

TEST_CASE("completions request and response follow the wire format") {
    BackendProfile profile = synth_profile("llm");
    profile.model = "test-model";
    profile.top_k = 5;
    const std::string body = build_completions_request(profile, "PROMPT");
    const auto j = nlohmann::json::parse(body);
    CHECK(j["model"] == "test-model");
    CHECK(j["prompt"] == "PROMPT");
    CHECK(j["max_tokens"] == 1);
    CHECK(j["logprobs"] == 5);

    const std::string response = R"({
      "choices": [{"text": "yes", "logprobs": {"top_logprobs": [
        {"yes": -0.105360515657826, " no": -2.525728644308255, "the": -4.0}
      ]}}]
    })";
    const auto dist = parse_completions_response(response);
    REQUIRE(dist.entries.size() == 3);
    CHECK(dist.log_space);
    const auto m = extract_yes_no(dist, kYes, kNo);
    CHECK(m.p_yes == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(m.p_no == doctest::Approx(0.08).epsilon(1e-9));

    CHECK_THROWS_AS(parse_completions_response("not json"), ScoringError);
    CHECK_THROWS_AS(parse_completions_response(R"({"choices": []})"), ScoringError);
    CHECK_THROWS_AS(parse_completions_response(R"({"choices": [{"text": "x"}]})"), ScoringError);
}

TEST_CASE("http backend scores against an in-process server") {
    httplib::Server server;
    int hits = 0;
    server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (hits == 1) { // first attempt fails; the client must retry
            res.status = 500;
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body["max_tokens"] == 1);
        CHECK(req.get_header_value("Authorization") == "Bearer sk-test");
        res.set_content(R"({"choices":[{"logprobs":{"top_logprobs":[
            {"yes": -0.2231435513, "no": -1.6094379124}
        ]}}]})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    if (port <= 0) {
        MESSAGE("cannot bind a local port; skipping");
        return;
    }
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("SCREENLM_TEST_KEY", "sk-test", 1);
    BackendProfile profile = synth_profile("llm");
    profile.endpoint = "http://127.0.0.1:" + std::to_string(port);
    profile.model = "test-model";
    profile.auth_env = "SCREENLM_TEST_KEY";
    profile.retry.max_attempts = 3;
    profile.retry.backoff_ms = 1;
    HttpBackend backend(profile);

    const auto prompt = prompting::render_prompt(prompting::builtin_template("generic"),
                                                 "Review title", {"D1", "Doc title", "Abstract."});
    const auto outcome = score_document(backend, nullptr, prompt, "T1", "D1");
    CHECK(outcome.retries == 1);
    CHECK(outcome.record.p_yes == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(outcome.record.p_no == doctest::Approx(0.2).epsilon(1e-9));

    server.stop();
    server_thread.join();
}

TEST_CASE("https endpoints are rejected up front") {
    BackendProfile profile = synth_profile("llm");
    profile.endpoint = "https://example.org";
    CHECK_THROWS_AS(HttpBackend{profile}, ConfigError);
}
