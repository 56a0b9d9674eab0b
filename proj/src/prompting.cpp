#include "screenlm/prompting.hpp"

#include "screenlm/errors.hpp"
#include "screenlm/jsonl.hpp"

namespace screenlm::prompting {

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size()))
        ++n;
    return n;
}

const char* kGenericBody =
    "Answer 'yes' or 'no' to Judge if the following retrieved study should be included by the "
    "systematic review?\n"
    "Review: {review_title}\n"
    "Study: {candidate_document}\n"
    "The answer is '";

const char* kAlpacaBody =
    "Below is an instruction that describes a task, paired with an input that provides further "
    "context. Write a response that appropriately completes the request.\n"
    "### Instruction:\n"
    "Answer 'yes' or 'no' to Judge if the following retrieved study should be included by the "
    "systematic review?\n"
    "### Input:\n"
    "Review: {review_title}\n"
    "Study: {candidate_document}\n"
    "### Response:";

TemplateStyle style_from_string(const std::string& s, const std::filesystem::path& path,
                                std::size_t line) {
    if (s == "generic") return TemplateStyle::generic;
    if (s == "alpaca") return TemplateStyle::alpaca;
    throw ParseError(path.string() + ":" + std::to_string(line) + ": unknown template style \"" + s +
                     "\" (expected generic or alpaca)");
}

} // namespace

int estimate_tokens(std::string_view text) {
    return static_cast<int>((text.size() + 3) / 4);
}

void validate_template(const PromptTemplate& tpl) {
    if (tpl.template_id.empty()) throw ValidationError("template with empty template_id");
    if (count_occurrences(tpl.body, kTitlePlaceholder) != 1 ||
        count_occurrences(tpl.body, kDocumentPlaceholder) != 1)
        throw ValidationError("template \"" + tpl.template_id + "\" must contain " +
                              std::string(kTitlePlaceholder) + " and " +
                              std::string(kDocumentPlaceholder) + " exactly once");
}

std::string candidate_document_text(const corpus::Candidate& c) {
    if (c.abstract_text.empty()) return c.title;
    return c.title + " " + c.abstract_text;
}

RenderedPrompt render_prompt(const PromptTemplate& tpl, std::string_view review_title,
                             const corpus::Candidate& candidate) {
    validate_template(tpl);
    if (review_title.empty()) throw ValidationError("empty review title");

    const std::string doc_text = candidate_document_text(candidate);
    const std::size_t t_pos = tpl.body.find(kTitlePlaceholder);
    const std::size_t d_pos = tpl.body.find(kDocumentPlaceholder);

    // Emit body segments in position order, substituting each placeholder.
    struct Slot {
        std::size_t pos;
        std::size_t len;
        const std::string* value;
        bool is_document;
    };
    const std::string title_str(review_title);
    Slot slots[2] = {
        {t_pos, kTitlePlaceholder.size(), &title_str, false},
        {d_pos, kDocumentPlaceholder.size(), &doc_text, true},
    };
    if (slots[0].pos > slots[1].pos) std::swap(slots[0], slots[1]);

    RenderedPrompt out;
    std::size_t cursor = 0;
    for (const Slot& s : slots) {
        out.text.append(tpl.body, cursor, s.pos - cursor);
        if (s.is_document) {
            out.doc_offset = out.text.size();
            out.doc_size = s.value->size();
        }
        out.text.append(*s.value);
        cursor = s.pos + s.len;
    }
    out.text.append(tpl.body, cursor, std::string::npos);
    out.estimated_tokens = estimate_tokens(out.text);
    out.truncated = false;
    return out;
}

RenderedPrompt fit_to_budget(RenderedPrompt prompt, int budget_tokens) {
    if (budget_tokens <= 0) throw ValidationError("budget must be positive");
    prompt.estimated_tokens = estimate_tokens(prompt.text);
    if (prompt.estimated_tokens <= budget_tokens) return prompt;

    const std::size_t budget_chars = static_cast<std::size_t>(budget_tokens) * 4;
    const std::size_t scaffold_chars = prompt.text.size() - prompt.doc_size;
    if (scaffold_chars > budget_chars)
        throw ValidationError("budget too small: scaffold alone is " +
                              std::to_string((scaffold_chars + 3) / 4) +
                              " tokens against a budget of " + std::to_string(budget_tokens));

    const std::size_t keep = budget_chars - scaffold_chars; // new document length
    prompt.text.erase(prompt.doc_offset + keep, prompt.doc_size - keep);
    prompt.doc_size = keep;
    prompt.estimated_tokens = estimate_tokens(prompt.text);
    prompt.truncated = true;
    return prompt;
}

const std::vector<PromptTemplate>& builtin_templates() {
    static const std::vector<PromptTemplate> builtins = {
        {"generic", kGenericBody, TemplateStyle::generic},
        {"alpaca", kAlpacaBody, TemplateStyle::alpaca},
    };
    return builtins;
}

const PromptTemplate& builtin_template(std::string_view template_id) {
    for (const auto& t : builtin_templates())
        if (t.template_id == template_id) return t;
    throw ConfigError("unknown built-in template \"" + std::string(template_id) + "\"");
}

std::vector<PromptTemplate> load_template_registry(const std::filesystem::path& path) {
    std::vector<PromptTemplate> out;
    jsonl::for_each(path, [&](std::size_t line, const jsonl::ordered_json& obj) {
        PromptTemplate t;
        t.template_id = jsonl::require_string(obj, "template_id", path, line);
        t.body = jsonl::require_string(obj, "body", path, line);
        t.style = style_from_string(jsonl::optional_string(obj, "style", path, line, "generic"), path, line);
        validate_template(t);
        out.push_back(std::move(t));
    });
    return out;
}

const PromptTemplate& resolve_template(const std::vector<PromptTemplate>& registry,
                                       std::string_view template_id) {
    for (const auto& t : registry)
        if (t.template_id == template_id) return t;
    return builtin_template(template_id);
}

} // namespace screenlm::prompting
