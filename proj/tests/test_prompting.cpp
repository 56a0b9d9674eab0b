#include <doctest.h>

#include <filesystem>

#include "screenlm/errors.hpp"
#include "screenlm/prompting.hpp"

using namespace screenlm;
using namespace screenlm::prompting;

namespace {
const corpus::Candidate kDoc{"d1", "D", ""};
const corpus::Candidate kDocWithAbstract{"d2", "Study title", "Some abstract text."};
} // namespace

TEST_CASE("generic prompt carries review, study and the continuation point") {
    const auto p = render_prompt(builtin_template("generic"), "T", kDoc);
    CHECK(p.text.find("Review: T") != std::string::npos);
    CHECK(p.text.find("Study: D") != std::string::npos);
    const std::string suffix = "The answer is '";
    REQUIRE(p.text.size() >= suffix.size());
    CHECK(p.text.substr(p.text.size() - suffix.size()) == suffix);
}

TEST_CASE("alpaca prompt uses the instruction scaffold") {
    const auto p = render_prompt(builtin_template("alpaca"), "T", kDoc);
    CHECK(p.text.find("### Instruction:") != std::string::npos);
    CHECK(p.text.find("### Input:") != std::string::npos);
    CHECK(p.text.find("### Response:") != std::string::npos);
    CHECK(p.text.find("Review: T") != std::string::npos);
}

TEST_CASE("candidate document is title and abstract joined by one space") {
    CHECK(candidate_document_text(kDocWithAbstract) == "Study title Some abstract text.");
    // Empty abstract: title only, no trailing space.
    CHECK(candidate_document_text(kDoc) == "D");
    const auto p = render_prompt(builtin_template("generic"), "T", kDoc);
    CHECK(p.text.find("Study: D\n") != std::string::npos);
}

TEST_CASE("rendering is pure") {
    const auto a = render_prompt(builtin_template("generic"), "T", kDocWithAbstract);
    const auto b = render_prompt(builtin_template("generic"), "T", kDocWithAbstract);
    CHECK(a.text == b.text);
    CHECK(a.doc_offset == b.doc_offset);
    CHECK(a.doc_size == b.doc_size);
}

TEST_CASE("token estimate is ceil(chars/4)") {
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("abc") == 1);
    CHECK(estimate_tokens("abcd") == 1);
    CHECK(estimate_tokens("abcde") == 2);
}

TEST_CASE("short prompts fit the default budget untouched") {
    auto p = render_prompt(builtin_template("generic"), "T", kDocWithAbstract);
    const std::string before = p.text;
    p = fit_to_budget(std::move(p), kDefaultBudgetTokens);
    CHECK_FALSE(p.truncated);
    CHECK(p.text == before);
}

TEST_CASE("oversized documents are cut from the end until the estimate fits") {
    corpus::Candidate huge{"d", "T", std::string(50000, 'x')};
    auto p = fit_to_budget(render_prompt(builtin_template("generic"), "T", huge), 2048);
    CHECK(p.truncated);
    CHECK(p.estimated_tokens <= 2048);
    CHECK(estimate_tokens(p.text) == p.estimated_tokens);
}

TEST_CASE("fit_to_budget never touches the scaffold") {
    corpus::Candidate huge{"d", "DOCTITLE", std::string(50000, 'x')};
    const auto before = render_prompt(builtin_template("generic"), "REVIEWTITLE", huge);
    const auto after = fit_to_budget(before, 100);
    CHECK(after.text.substr(0, after.doc_offset) == before.text.substr(0, before.doc_offset));
    CHECK(after.text.substr(after.doc_offset + after.doc_size) ==
          before.text.substr(before.doc_offset + before.doc_size));
    CHECK(after.text.find("The answer is '") != std::string::npos);
}

TEST_CASE("fit_to_budget is idempotent") {
    corpus::Candidate huge{"d", "T", std::string(50000, 'x')};
    const auto once = fit_to_budget(render_prompt(builtin_template("generic"), "T", huge), 512);
    const auto twice = fit_to_budget(once, 512);
    CHECK(once.text == twice.text);
    CHECK(once.truncated == twice.truncated);
    CHECK(once.estimated_tokens == twice.estimated_tokens);
}

TEST_CASE("a budget below the scaffold is an error") {
    auto p = render_prompt(builtin_template("generic"), "T", kDoc);
    try {
        fit_to_budget(std::move(p), 1);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("budget too small") != std::string::npos);
    }
}

TEST_CASE("templates must contain each placeholder exactly once") {
    PromptTemplate bad{"bad", "no placeholders here", TemplateStyle::generic};
    CHECK_THROWS_AS(validate_template(bad), ValidationError);
    PromptTemplate twice{"twice", "{review_title} {review_title} {candidate_document}",
                         TemplateStyle::generic};
    CHECK_THROWS_AS(validate_template(twice), ValidationError);
}

TEST_CASE("registry templates shadow built-ins by id") {
    const auto registry =
        load_template_registry(std::filesystem::path(SCREENLM_TEST_DATA_DIR) / "templates.jsonl");
    REQUIRE(registry.size() == 1);
    CHECK(resolve_template(registry, "terse").template_id == "terse");
    CHECK(resolve_template(registry, "generic").template_id == "generic"); // built-in fallback
    CHECK_THROWS_AS(resolve_template(registry, "nope"), ConfigError);
}
