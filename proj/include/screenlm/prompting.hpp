#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "screenlm/corpus.hpp"

namespace screenlm::prompting {

inline constexpr int kDefaultBudgetTokens = 2048;
inline constexpr std::string_view kTitlePlaceholder = "{review_title}";
inline constexpr std::string_view kDocumentPlaceholder = "{candidate_document}";

enum class TemplateStyle { generic, alpaca };

/// Prompt body with exactly one {review_title} and one {candidate_document}
/// placeholder. Backend-specific special tokens are not part of templates;
/// the scoring backend applies them from its profile.
struct PromptTemplate {
    std::string template_id;
    std::string body;
    TemplateStyle style = TemplateStyle::generic;
};

/// A prompt with the candidate-document span tracked, so budget fitting can
/// shorten the document without touching the scaffold.
struct RenderedPrompt {
    std::string text;
    std::size_t doc_offset = 0;
    std::size_t doc_size = 0;
    int estimated_tokens = 0;
    bool truncated = false;
};

/// Coarse model-agnostic estimate: ceil(characters / 4). Exact budgets belong
/// to the backend; this exists to pre-empt obvious overflows.
int estimate_tokens(std::string_view text);

/// Throws ValidationError unless both placeholders occur exactly once.
void validate_template(const PromptTemplate& tpl);

/// Title and abstract joined by a single space; title alone when the
/// abstract is empty.
std::string candidate_document_text(const corpus::Candidate& c);

RenderedPrompt render_prompt(const PromptTemplate& tpl, std::string_view review_title,
                             const corpus::Candidate& candidate);

/// Shortens the candidate-document span from its end until the estimate fits.
/// Idempotent; never touches the scaffold. Throws ValidationError
/// "budget too small" when the scaffold alone exceeds the budget.
RenderedPrompt fit_to_budget(RenderedPrompt prompt, int budget_tokens);

const std::vector<PromptTemplate>& builtin_templates();
const PromptTemplate& builtin_template(std::string_view template_id);

/// Registry file: JSONL records {template_id, body, style}. Built-ins are
/// available under their ids without a registry file.
std::vector<PromptTemplate> load_template_registry(const std::filesystem::path& path);

/// Resolves `template_id` against a loaded registry first, then built-ins.
const PromptTemplate& resolve_template(const std::vector<PromptTemplate>& registry,
                                       std::string_view template_id);

} // namespace screenlm::prompting
