#include "screenlm/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "screenlm/errors.hpp"
#include "screenlm/hash.hpp"
#include "screenlm/jsonl.hpp"

namespace screenlm::scoring {

using nlohmann::json;
using jsonl::ordered_json;

void validate_profile(const BackendProfile& profile) {
    if (profile.method_id.empty()) throw ConfigError("backend profile without method_id");
    if (profile.top_k < 2) throw ConfigError("top_k must be >= 2 for \"" + profile.method_id + "\"");
    if (profile.max_inflight < 1)
        throw ConfigError("max_inflight must be >= 1 for \"" + profile.method_id + "\"");
    if (profile.retry.max_attempts < 1)
        throw ConfigError("retry.max_attempts must be >= 1 for \"" + profile.method_id + "\"");
    if (profile.yes_variants.empty() || profile.no_variants.empty())
        throw ConfigError("empty yes/no variant set for \"" + profile.method_id + "\"");
}

std::string normalize_token_surface(std::string_view token) {
    std::size_t begin = 0, end = token.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(token[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(token[end - 1]))) --end;
    std::string out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i)
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(token[i]))));
    return out;
}

YesNoMass extract_yes_no(const TokenDistribution& dist, std::span<const std::string> yes_variants,
                         std::span<const std::string> no_variants) {
    auto in_set = [](const std::string& surface, std::span<const std::string> variants) {
        for (const auto& v : variants)
            if (surface == normalize_token_surface(v)) return true;
        return false;
    };
    YesNoMass mass;
    for (const auto& entry : dist.entries) {
        double p = dist.log_space ? std::exp(entry.value) : entry.value;
        const std::string surface = normalize_token_surface(entry.token);
        if (in_set(surface, yes_variants))
            mass.p_yes += p;
        else if (in_set(surface, no_variants))
            mass.p_no += p;
    }
    mass.indeterminate = mass.p_yes == 0.0 && mass.p_no == 0.0;
    return mass;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(BackendProfile profile) : profile_(std::move(profile)) {
    validate_profile(profile_);
    if (profile_.endpoint.rfind("https://", 0) == 0)
        throw ConfigError("https endpoints are not supported by this build; use a plain-http proxy");
    if (profile_.endpoint.rfind("http://", 0) != 0)
        throw ConfigError("endpoint must start with http:// for \"" + profile_.method_id + "\"");
    host_ = profile_.endpoint;
    path_ = "/v1/completions";
    // Split any path component off the endpoint.
    const std::size_t scheme_end = std::string("http://").size();
    const std::size_t slash = host_.find('/', scheme_end);
    if (slash != std::string::npos) {
        std::string base = host_.substr(slash);
        if (base.back() == '/') base.pop_back();
        path_ = base + path_;
        host_ = host_.substr(0, slash);
    }
}

std::string build_completions_request(const BackendProfile& profile, const std::string& prompt_text) {
    ordered_json body;
    body["model"] = profile.model;
    body["prompt"] = prompt_text;
    body["max_tokens"] = 1;
    body["temperature"] = 0.0;
    body["logprobs"] = profile.top_k;
    return body.dump();
}

TokenDistribution parse_completions_response(const std::string& body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ScoringError(std::string("protocol error: response is not JSON: ") + e.what());
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
        throw ScoringError("protocol error: response has no choices");
    const json& choice = doc["choices"][0];
    if (!choice.contains("logprobs") || choice["logprobs"].is_null())
        throw ScoringError("protocol error: choice carries no logprobs");
    const json& logprobs = choice["logprobs"];
    if (!logprobs.contains("top_logprobs") || !logprobs["top_logprobs"].is_array() ||
        logprobs["top_logprobs"].empty())
        throw ScoringError("protocol error: missing top_logprobs for the first position");
    const json& top = logprobs["top_logprobs"][0];
    if (!top.is_object()) throw ScoringError("protocol error: top_logprobs[0] is not an object");

    TokenDistribution dist;
    dist.log_space = true;
    for (auto it = top.begin(); it != top.end(); ++it) {
        if (!it.value().is_number())
            throw ScoringError("protocol error: non-numeric logprob for token");
        dist.entries.push_back({it.key(), it.value().get<double>()});
    }
    return dist;
}

TokenDistribution HttpBackend::next_token_distribution(const ScoreRequest& req) {
    httplib::Client client(host_);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    httplib::Headers headers;
    if (!profile_.auth_env.empty()) {
        const char* key = std::getenv(profile_.auth_env.c_str());
        if (key != nullptr && *key != '\0')
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const std::string body = build_completions_request(profile_, req.prompt_text);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res)
        throw ScoringError("transport failure for " + req.topic_id + "/" + req.doc_id + ": " +
                           httplib::to_string(res.error()));
    if (res->status != 200)
        throw ScoringError("backend returned HTTP " + std::to_string(res->status) + " for " +
                           req.topic_id + "/" + req.doc_id);
    return parse_completions_response(res->body);
}

// ---------------------------------------------------------------------------
// Cache

namespace {

ordered_json record_to_json(const ScoreRecord& r) {
    ordered_json o;
    o["method_id"] = r.method_id;
    o["topic_id"] = r.topic_id;
    o["doc_id"] = r.doc_id;
    o["p_yes"] = r.p_yes;
    o["p_no"] = r.p_no;
    o["indeterminate"] = r.indeterminate;
    o["prompt_hash"] = r.prompt_hash;
    return o;
}

ScoreRecord record_from_json(const ordered_json& o, const std::filesystem::path& path, std::size_t line) {
    ScoreRecord r;
    r.method_id = jsonl::require_string(o, "method_id", path, line);
    r.topic_id = jsonl::require_string(o, "topic_id", path, line);
    r.doc_id = jsonl::require_string(o, "doc_id", path, line);
    auto num = [&](const char* field) {
        auto it = o.find(field);
        if (it == o.end() || !it->is_number())
            throw ParseError(path.string() + ":" + std::to_string(line) + ": missing numeric field \"" +
                             field + "\"");
        return it->get<double>();
    };
    r.p_yes = num("p_yes");
    r.p_no = num("p_no");
    r.indeterminate = jsonl::optional_bool(o, "indeterminate", path, line, false);
    r.prompt_hash = jsonl::optional_string(o, "prompt_hash", path, line, "");
    return r;
}

} // namespace

ScoreCache::ScoreCache(std::filesystem::path file) {
    if (std::filesystem::exists(file)) {
        jsonl::for_each(file, [&](std::size_t line, const ordered_json& obj) {
            ScoreRecord r = record_from_json(obj, file, line);
            map_[key(r.method_id, r.topic_id, r.doc_id, r.prompt_hash)] = std::move(r);
        });
    } else if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path());
    }
    out_ = std::make_unique<std::ofstream>(file, std::ios::app);
    if (!*out_) throw ValidationError("cannot open score cache " + file.string());
}

std::string ScoreCache::key(const std::string& method_id, const std::string& topic_id,
                            const std::string& doc_id, const std::string& prompt_hash) {
    std::string k;
    k.reserve(method_id.size() + topic_id.size() + doc_id.size() + prompt_hash.size() + 3);
    k += method_id;
    k += '\x1f';
    k += topic_id;
    k += '\x1f';
    k += doc_id;
    k += '\x1f';
    k += prompt_hash;
    return k;
}

std::optional<ScoreRecord> ScoreCache::find(const std::string& method_id, const std::string& topic_id,
                                            const std::string& doc_id,
                                            const std::string& prompt_hash) const {
    std::shared_lock lock(mu_);
    auto it = map_.find(key(method_id, topic_id, doc_id, prompt_hash));
    if (it == map_.end() && !prompt_hash.empty())
        it = map_.find(key(method_id, topic_id, doc_id, ""));
    if (it == map_.end()) return std::nullopt;
    return it->second;
}

void ScoreCache::put(const ScoreRecord& record) {
    std::unique_lock lock(mu_);
    map_[key(record.method_id, record.topic_id, record.doc_id, record.prompt_hash)] = record;
    if (out_) {
        *out_ << record_to_json(record).dump() << '\n';
        out_->flush();
    }
}

std::size_t ScoreCache::size() const {
    std::shared_lock lock(mu_);
    return map_.size();
}

// ---------------------------------------------------------------------------
// Scoring

ScoreOutcome score_document(ScoreBackend& backend, ScoreCache* cache,
                            const prompting::RenderedPrompt& prompt, const std::string& topic_id,
                            const std::string& doc_id) {
    const BackendProfile& profile = backend.profile();
    const std::string wrapped = profile.prompt_prefix + prompt.text + profile.prompt_suffix;
    const std::string prompt_hash = hex64(fnv1a64(wrapped));

    ScoreOutcome outcome;
    if (cache != nullptr) {
        if (auto hit = cache->find(profile.method_id, topic_id, doc_id, prompt_hash)) {
            outcome.record = *hit;
            outcome.from_cache = true;
            return outcome;
        }
    }

    ScoreRequest req{topic_id, doc_id, wrapped};
    TokenDistribution dist;
    for (int attempt = 1;; ++attempt) {
        try {
            dist = backend.next_token_distribution(req);
            break;
        } catch (const ScoringError&) {
            if (attempt >= profile.retry.max_attempts) throw;
            ++outcome.retries;
            std::this_thread::sleep_for(std::chrono::milliseconds(profile.retry.backoff_ms * attempt));
        }
    }

    YesNoMass mass = extract_yes_no(dist, profile.yes_variants, profile.no_variants);
    outcome.record = ScoreRecord{profile.method_id, topic_id, doc_id,
                                 mass.p_yes,        mass.p_no, mass.indeterminate,
                                 prompt_hash};
    if (cache != nullptr) cache->put(outcome.record);
    return outcome;
}

TopicScores score_topic(ScoreBackend& backend, ScoreCache* cache, const corpus::Topic& topic,
                        std::span<const corpus::Candidate> candidates,
                        const prompting::PromptTemplate& tpl, int budget_tokens,
                        double max_failure_fraction) {
    TopicScores result;
    const std::size_t n = candidates.size();
    if (n == 0) return result;

    // Rendering is pure and cheap; do it up front so truncation is counted
    // even for documents that later fail to score.
    std::vector<prompting::RenderedPrompt> prompts;
    prompts.reserve(n);
    for (const auto& c : candidates) {
        auto p = prompting::fit_to_budget(prompting::render_prompt(tpl, topic.title, c), budget_tokens);
        if (p.truncated) ++result.truncated_prompts;
        prompts.push_back(std::move(p));
    }

    std::vector<std::optional<ScoreRecord>> slots(n);
    std::vector<std::pair<std::size_t, std::string>> failures; // input index, message
    std::atomic<std::size_t> next{0};
    std::atomic<int> retries{0};
    std::atomic<int> cache_hits{0};
    std::mutex failures_mu;

    const int workers =
        static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(backend.profile().max_inflight), n));
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                ScoreOutcome out = score_document(backend, cache, prompts[i], topic.topic_id,
                                                  candidates[i].doc_id);
                retries += out.retries;
                if (out.from_cache) ++cache_hits;
                slots[i] = std::move(out.record);
            } catch (const ScoringError& e) {
                std::lock_guard lock(failures_mu);
                failures.emplace_back(i, e.what());
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    result.retries = retries.load();
    result.cache_hits = cache_hits.load();
    std::sort(failures.begin(), failures.end());
    for (const auto& [i, _] : failures) result.failed_docs.push_back(candidates[i].doc_id);

    if (static_cast<double>(failures.size()) > max_failure_fraction * static_cast<double>(n)) {
        std::string msg = "scoring failed for " + std::to_string(failures.size()) + " of " +
                          std::to_string(n) + " documents in topic " + topic.topic_id + ":";
        const std::size_t listed = std::min<std::size_t>(result.failed_docs.size(), 20);
        for (std::size_t i = 0; i < listed; ++i) msg += " " + result.failed_docs[i];
        if (result.failed_docs.size() > listed)
            msg += " (and " + std::to_string(result.failed_docs.size() - listed) + " more)";
        throw ScoringError(msg, result.failed_docs);
    }

    for (auto& slot : slots) {
        if (!slot) continue;
        if (slot->indeterminate) ++result.indeterminate;
        result.records.push_back(std::move(*slot));
    }
    return result;
}

void write_score_records(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    jsonl::write_file_atomic(path, out);
}

std::vector<ScoreRecord> read_score_records(const std::filesystem::path& path) {
    std::vector<ScoreRecord> out;
    jsonl::for_each(path, [&](std::size_t line, const ordered_json& obj) {
        out.push_back(record_from_json(obj, path, line));
    });
    return out;
}

} // namespace screenlm::scoring
