#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "screenlm/corpus.hpp"
#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

using namespace screenlm;
namespace fs = std::filesystem;

namespace {

const fs::path kData = SCREENLM_TEST_DATA_DIR;

corpus::Dataset load_fixture(bool with_seeds = false) {
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    auto labels = corpus::parse_qrels(kData / "qrels.txt");
    std::optional<corpus::SeedMap> seeds;
    if (with_seeds) seeds = corpus::load_seeds(kData / "seeds.jsonl");
    return corpus::assemble_dataset(std::move(topics), std::move(candidates), std::move(labels),
                                    std::move(seeds));
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("screenlm-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("load_topics keeps file order") {
    const auto topics = corpus::load_topics(kData / "topics.jsonl");
    REQUIRE(topics.size() == 3);
    CHECK(topics[0].topic_id == "CD007394");
    CHECK(topics[1].topic_id == "CD007427");
    CHECK(topics[2].topic_id == "CD008122");
}

TEST_CASE("load_topics on an empty file gives an empty list") {
    const auto dir = temp_dir("empty-topics");
    std::ofstream(dir / "topics.jsonl").close();
    CHECK(corpus::load_topics(dir / "topics.jsonl").empty());
}

TEST_CASE("load_topics names the line of a missing title") {
    try {
        corpus::load_topics(kData / "topics_bad_missing_title.jsonl");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
        CHECK(std::string(e.what()).find("title") != std::string::npos);
    }
}

TEST_CASE("load_topics rejects duplicate topic ids") {
    const auto dir = temp_dir("dup-topics");
    std::ofstream out(dir / "topics.jsonl");
    out << R"({"topic_id": "T1", "title": "a"})" << "\n"
        << R"({"topic_id": "T1", "title": "b"})" << "\n";
    out.close();
    CHECK_THROWS_AS(corpus::load_topics(dir / "topics.jsonl"), ValidationError);
}

TEST_CASE("parse_qrels reads TREC lines") {
    const auto labels = corpus::parse_qrels(kData / "qrels.txt");
    CHECK(labels.size() == 7);
    CHECK(*labels.find("CD008122", "18212099") == 1);
    CHECK(*labels.find("CD008122", "18212100") == 0);
    CHECK_FALSE(labels.find("CD008122", "nope").has_value());
}

TEST_CASE("parse_qrels rejects non-binary labels") {
    try {
        corpus::parse_qrels(kData / "qrels_bad_label.txt");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("label must be 0 or 1") != std::string::npos);
    }
}

TEST_CASE("parse_qrels rejects wrong field counts") {
    const auto dir = temp_dir("qrels-fields");
    std::ofstream(dir / "q.txt") << "CD1 0 doc1 1 extra\n";
    CHECK_THROWS_AS(corpus::parse_qrels(dir / "q.txt"), ParseError);
    std::ofstream(dir / "q2.txt") << "CD1 0 1\n";
    CHECK_THROWS_AS(corpus::parse_qrels(dir / "q2.txt"), ParseError);
}

TEST_CASE("parse_qrels lets later duplicates overwrite with a counter") {
    const auto dir = temp_dir("qrels-dup");
    std::ofstream(dir / "q.txt") << "CD1 0 doc1 1\nCD1 0 doc1 0\n";
    const auto labels = corpus::parse_qrels(dir / "q.txt");
    CHECK(labels.size() == 1);
    CHECK(*labels.find("CD1", "doc1") == 0);
    CHECK(labels.duplicate_overwrites == 1);
}

TEST_CASE("load_candidates accepts empty abstracts and groups by topic") {
    const auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    REQUIRE(candidates.count("CD007394") == 1);
    CHECK(candidates.at("CD007394").size() == 3);
    CHECK(candidates.at("CD007394")[2].abstract_text.empty());
}

TEST_CASE("load_candidates reports both lines of a duplicate") {
    try {
        corpus::load_candidates(kData / "candidates_dup.jsonl");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":3") != std::string::npos);
        CHECK(msg.find("line 1") != std::string::npos);
    }
}

TEST_CASE("assemble keeps well-formed topics") {
    const auto ds = load_fixture();
    CHECK(ds.topics.size() == 3);
    CHECK(ds.labeled);
    CHECK(ds.report.removed_topics.empty());
    CHECK(ds.report.dropped_labels == 0);
}

TEST_CASE("assemble removes topics without an included document") {
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    auto labels = corpus::parse_qrels(kData / "qrels.txt");
    labels.by_topic["CD007394"]["10024889"] = 0; // flip the only included doc
    const auto ds = corpus::assemble_dataset(std::move(topics), std::move(candidates),
                                             std::move(labels), std::nullopt);
    CHECK(ds.topics.size() == 2);
    REQUIRE(ds.report.removed_topics.size() == 1);
    CHECK(ds.report.removed_topics[0] == "CD007394");
    CHECK_FALSE(ds.candidates.count("CD007394"));
}

TEST_CASE("after assembly every label refers to a known candidate") {
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    auto labels = corpus::parse_qrels(kData / "qrels.txt");
    labels.by_topic["CD008122"]["99999999"] = 1;  // dangling doc
    labels.by_topic["UNKNOWN"]["18212099"] = 1;   // dangling topic
    const auto ds = corpus::assemble_dataset(std::move(topics), std::move(candidates),
                                             std::move(labels), std::nullopt);
    for (const auto& [topic_id, docs] : ds.labels.by_topic) {
        REQUIRE(ds.candidates.count(topic_id) == 1);
        std::set<std::string> ids;
        for (const auto& c : ds.candidates.at(topic_id)) ids.insert(c.doc_id);
        for (const auto& [doc_id, _] : docs) CHECK(ids.count(doc_id) == 1);
    }
}

TEST_CASE("assemble drops labels for unknown documents with a count") {
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    auto labels = corpus::parse_qrels(kData / "qrels.txt");
    labels.by_topic["CD008122"]["99999999"] = 1;
    const auto ds = corpus::assemble_dataset(std::move(topics), std::move(candidates),
                                             std::move(labels), std::nullopt);
    CHECK(ds.report.dropped_labels == 1);
    CHECK_FALSE(ds.labels.find("CD008122", "99999999").has_value());
}

TEST_CASE("assemble fails when nothing is evaluable") {
    std::vector<corpus::Topic> topics{{"T1", "title"}};
    corpus::CandidateMap candidates;
    candidates["T1"].push_back({"d1", "doc", ""});
    corpus::LabelSet labels;
    labels.by_topic["T1"]["d1"] = 0;
    CHECK_THROWS_AS(
        corpus::assemble_dataset(std::move(topics), std::move(candidates), std::move(labels)),
        ValidationError);
}

TEST_CASE("unlabeled datasets stay whole for screening-only runs") {
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    const auto ds =
        corpus::assemble_dataset(std::move(topics), std::move(candidates), corpus::LabelSet{});
    CHECK_FALSE(ds.labeled);
    CHECK(ds.topics.size() == 3);
}

TEST_CASE("seeds resolve against candidates; textless strays are dropped") {
    auto ds = load_fixture(/*with_seeds=*/true);
    REQUIRE(ds.has_seeds);
    REQUIRE(ds.seeds.count("CD007394") == 1);
    const auto& seeds = ds.seeds.at("CD007394");
    REQUIRE(seeds.size() == 2);
    CHECK_FALSE(seeds[0].non_retrieved);
    CHECK(seeds[0].title == "Serum galactomannan assay performance"); // text from the candidate list
    CHECK(seeds[1].non_retrieved);
    CHECK(seeds[1].doc_id == "99900001");

    // A seed with no candidate match and no text of its own cannot be scored.
    auto topics = corpus::load_topics(kData / "topics.jsonl");
    auto candidates = corpus::load_candidates(kData / "candidates.jsonl");
    auto labels = corpus::parse_qrels(kData / "qrels.txt");
    corpus::SeedMap stray;
    stray["CD008122"].push_back({"00000000", "", "", false});
    const auto ds2 = corpus::assemble_dataset(std::move(topics), std::move(candidates),
                                              std::move(labels), std::move(stray));
    CHECK(ds2.report.dropped_seeds == 1);
}

TEST_CASE("canonical serialization round-trips") {
    const auto ds = load_fixture(/*with_seeds=*/true);
    const auto dir = temp_dir("roundtrip");
    corpus::write_dataset(ds, dir);
    const auto reloaded = corpus::read_dataset(dir);
    CHECK(corpus::structurally_equal(ds, reloaded));
}

TEST_CASE("canonical serialization is byte-deterministic") {
    const auto a = temp_dir("canon-a");
    const auto b = temp_dir("canon-b");
    corpus::write_dataset(load_fixture(true), a);
    corpus::write_dataset(load_fixture(true), b);
    for (const char* name : {"topics.jsonl", "candidates.jsonl", "qrels.txt", "seeds.jsonl"})
        CHECK(jsonl::read_file(a / name) == jsonl::read_file(b / name));
}
