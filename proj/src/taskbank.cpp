#include "deskrl/taskbank.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "deskrl/sandbox.hpp"
#include "deskrl/verifier.hpp"

namespace deskrl {

using nlohmann::json;

const Problem* ProblemBank::find(const std::string& id) const {
    for (const auto& p : problems)
        if (p.id == id) return &p;
    return nullptr;
}

Vocab default_vocab(int size) {
    if (size < 12) throw std::invalid_argument("vocab needs the 10 digits plus sep and eos");
    Vocab v;
    v.size = size;
    v.sep = size - 2;
    v.eos = size - 1;
    return v;
}

std::string decode_token(const Vocab& vocab, TokenId t) {
    if (t == vocab.eos) return "";
    if (t == vocab.sep) return kSepMarker;
    if (t >= 0 && t <= 9) return std::string(1, static_cast<char>('0' + t));
    return "<t" + std::to_string(t) + ">";
}

std::string decode_text(const Vocab& vocab, std::span<const TokenId> tokens) {
    std::string out;
    for (TokenId t : tokens) out += decode_token(vocab, t);
    return out;
}

namespace {

// Index just past the last sep token, or npos when absent.
std::size_t answer_start(const Vocab& vocab, std::span<const TokenId> tokens) {
    for (std::size_t i = tokens.size(); i > 0; --i) {
        if (tokens[i - 1] == vocab.sep) return i;
    }
    return std::string::npos;
}

}  // namespace

std::string decode_response_text(const Vocab& vocab, std::span<const TokenId> tokens) {
    const std::size_t start = answer_start(vocab, tokens);
    if (start == std::string::npos) return decode_text(vocab, tokens);
    std::string out = decode_text(vocab, tokens.subspan(0, start));
    out += "\\boxed{";
    out += decode_text(vocab, tokens.subspan(start));
    out += "}";
    return out;
}

std::optional<std::string> answer_span_digits(const Vocab& vocab, std::span<const TokenId> tokens) {
    const std::size_t start = answer_start(vocab, tokens);
    if (start == std::string::npos) return std::nullopt;
    std::string out;
    for (std::size_t i = start; i < tokens.size(); ++i) {
        if (tokens[i] == vocab.eos) break;
        if (tokens[i] >= 0 && tokens[i] <= 9) out += static_cast<char>('0' + tokens[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

std::string normalize_family(std::string f) {
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

TokenSeq random_digits(Rng& rng, int n) {
    TokenSeq out(static_cast<std::size_t>(n));
    for (auto& t : out) t = static_cast<TokenId>(rng.next_below(10));
    return out;
}

std::string digits_of(long long v) { return std::to_string(v); }

Problem gen_mod_sum(const BankSpec& spec, Rng& rng, int index, bool hard) {
    Problem p;
    p.kind = ProblemKind::math_like;
    p.source_tag = "mod-sum";
    int len = spec.prompt_len_min +
              static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.prompt_len_max - spec.prompt_len_min + 1)));
    if (hard) len = std::max(len, 4);  // sum depends on digits outside the feature window
    p.prompt = random_digits(rng, len);
    long long sum = 0;
    for (TokenId t : p.prompt) sum += t;
    p.gold_expr = digits_of(sum % spec.mod_base);
    p.id = "mod-sum-" + std::to_string(index);
    return p;
}

Problem gen_copy_k(const BankSpec& spec, Rng& rng, int index) {
    Problem p;
    p.kind = ProblemKind::math_like;
    p.source_tag = "copy-k";
    // k beyond the payload length is invalid; reject and resample. The k
    // header token counts toward the prompt length bounds.
    while (true) {
        const int len = std::max(2, spec.prompt_len_min) +
                        static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                            std::max(2, spec.prompt_len_max) - std::max(2, spec.prompt_len_min) + 1)));
        const int payload_len = len - 1;
        int k = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.copy_k_max)));
        if (k > payload_len) continue;
        TokenSeq payload = random_digits(rng, payload_len);
        p.prompt.clear();
        p.prompt.push_back(static_cast<TokenId>(k % 10));
        p.prompt.insert(p.prompt.end(), payload.begin(), payload.end());
        p.gold_expr = digits_of(payload[static_cast<std::size_t>(k - 1)]);
        break;
    }
    p.id = "copy-k-" + std::to_string(index);
    return p;
}

Problem gen_copy_last(const BankSpec& spec, Rng& rng, int index) {
    Problem p;
    p.kind = ProblemKind::math_like;
    p.source_tag = "copy-last";
    const int len = spec.prompt_len_min +
                    static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.prompt_len_max - spec.prompt_len_min + 1)));
    p.prompt = random_digits(rng, len);
    p.gold_expr = digits_of(p.prompt.back());
    p.id = "copy-last-" + std::to_string(index);
    return p;
}

Problem gen_affine_code(const BankSpec& spec, Rng& rng, int index) {
    Problem p;
    p.kind = ProblemKind::code_like;
    p.source_tag = "affine-code";
    const int len = std::max(2, spec.prompt_len_min);
    p.prompt = random_digits(rng, len);
    const int c = p.prompt.back();  // secret constant, visible at the prompt tail
    const bool multiply = rng.next_below(2) == 1;
    const char* op = multiply ? "*" : "+";
    p.code.program_template = std::string("(") + op + " x ?)";
    p.code.program = std::string("(") + op + " x " + std::to_string(c) + ")";
    for (int i = 0; i < 3; ++i) {
        const long long x = static_cast<long long>(rng.next_below(50));
        p.code.tests.push_back({x, multiply ? x * c : x + c});
    }
    p.id = "affine-code-" + std::to_string(index);
    return p;
}

}  // namespace

ProblemBank generate_bank(const BankSpec& spec) {
    if (spec.count <= 0) throw std::invalid_argument("bank count must be positive");
    if (spec.families.empty()) throw std::invalid_argument("bank spec names no families");
    if (spec.prompt_len_min < 1 || spec.prompt_len_max > 12 || spec.prompt_len_min > spec.prompt_len_max)
        throw std::invalid_argument("prompt length bounds must satisfy 1 <= min <= max <= 12");

    ProblemBank bank;
    bank.vocab = default_vocab(spec.vocab_size);
    Rng rng(mix_seed(spec.seed, 0xba9cULL));
    int hard_budget = static_cast<int>(spec.hard_fraction * spec.count + 0.5);
    for (int i = 0; i < spec.count; ++i) {
        const std::string family = normalize_family(spec.families[static_cast<std::size_t>(i) % spec.families.size()]);
        Problem p;
        if (family == "mod-sum") {
            const bool hard = hard_budget > 0;
            if (hard) --hard_budget;
            p = gen_mod_sum(spec, rng, i, hard);
        } else if (family == "copy-k") {
            p = gen_copy_k(spec, rng, i);
        } else if (family == "copy-last") {
            p = gen_copy_last(spec, rng, i);
        } else if (family == "affine-code") {
            p = gen_affine_code(spec, rng, i);
        } else {
            throw std::invalid_argument("unknown problem family: " + family);
        }
        // golds are stored pre-canonicalized and must self-verify
        if (p.kind == ProblemKind::math_like) {
            auto canon = canonical_form(p.gold_expr);
            if (!canon) throw std::runtime_error("generated gold does not parse: " + p.gold_expr);
            p.gold_expr = *canon;
            if (!verify_answer(p.gold_expr, p.gold_expr).correct)
                throw std::runtime_error("generated gold fails self-verification: " + p.gold_expr);
        } else {
            if (!sandbox_run(p.code.program, p.code.tests).passed)
                throw std::runtime_error("generated gold program fails its own tests: " + p.code.program);
        }
        bank.problems.push_back(std::move(p));
    }
    if (spec.holdout_fraction > 0.0) {
        const int n_hold = static_cast<int>(spec.holdout_fraction * spec.count + 0.5);
        std::vector<std::size_t> idx(bank.problems.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        shuffle_in_place(idx, rng);
        for (int i = 0; i < n_hold && i < static_cast<int>(idx.size()); ++i)
            bank.holdout_ids.insert(bank.problems[idx[static_cast<std::size_t>(i)]].id);
    }
    return bank;
}

ProblemBank inject_flaws(const ProblemBank& bank, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("flaw rate must lie in [0, 1]");
    ProblemBank out = bank;
    const int n_flaw = static_cast<int>(rate * static_cast<double>(bank.problems.size()) + 0.5);
    if (n_flaw == 0) return out;
    Rng rng(mix_seed(seed, 0xf1a3));
    std::vector<std::size_t> idx(out.problems.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_in_place(idx, rng);
    for (int i = 0; i < n_flaw; ++i) {
        Problem& p = out.problems[idx[static_cast<std::size_t>(i)]];
        switch (rng.next_below(3)) {
            case 0: {  // statement cut short
                p.flaw = FlawKind::truncated_statement;
                const std::size_t keep = std::max<std::size_t>(1, p.prompt.size() / 2);
                p.prompt.resize(keep);
                break;
            }
            case 1: {  // statement appears twice verbatim
                p.flaw = FlawKind::duplicated_statement;
                TokenSeq doubled = p.prompt;
                doubled.insert(doubled.end(), p.prompt.begin(), p.prompt.end());
                p.prompt = std::move(doubled);
                break;
            }
            default: {  // referenced position no longer exists
                p.flaw = FlawKind::missing_referent;
                if (p.prompt.size() > 1) p.prompt.resize(1);
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: first line holds bank metadata, then one problem per line.
// ---------------------------------------------------------------------------

namespace {

const char* kind_name(ProblemKind k) { return k == ProblemKind::math_like ? "math_like" : "code_like"; }

ProblemKind kind_from(const std::string& s) {
    if (s == "math_like") return ProblemKind::math_like;
    if (s == "code_like") return ProblemKind::code_like;
    throw std::runtime_error("unknown problem kind: " + s);
}

const char* flaw_name(FlawKind f) {
    switch (f) {
        case FlawKind::none: return "none";
        case FlawKind::truncated_statement: return "truncated_statement";
        case FlawKind::duplicated_statement: return "duplicated_statement";
        case FlawKind::missing_referent: return "missing_referent";
    }
    return "none";
}

FlawKind flaw_from(const std::string& s) {
    if (s == "truncated_statement") return FlawKind::truncated_statement;
    if (s == "duplicated_statement") return FlawKind::duplicated_statement;
    if (s == "missing_referent") return FlawKind::missing_referent;
    return FlawKind::none;
}

}  // namespace

void save_bank_file(const ProblemBank& bank, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    json meta;
    meta["bank"] = {{"vocab_size", bank.vocab.size},
                    {"eos", bank.vocab.eos},
                    {"sep", bank.vocab.sep},
                    {"holdout_ids", std::vector<std::string>(bank.holdout_ids.begin(), bank.holdout_ids.end())}};
    f << meta.dump() << "\n";
    for (const auto& p : bank.problems) {
        json j;
        j["id"] = p.id;
        j["kind"] = kind_name(p.kind);
        j["prompt"] = p.prompt;
        j["source_tag"] = p.source_tag;
        if (p.flaw != FlawKind::none) j["flaw"] = flaw_name(p.flaw);
        if (p.kind == ProblemKind::math_like) {
            j["gold"] = p.gold_expr;
        } else {
            json tests = json::array();
            for (const auto& t : p.code.tests) tests.push_back({{"input", t.input}, {"expected", t.expected}});
            j["gold"] = {{"program", p.code.program}, {"template", p.code.program_template}, {"tests", tests}};
        }
        f << j.dump() << "\n";
    }
}

ProblemBank load_bank_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    ProblemBank bank;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty bank file: " + path);
    {
        const json meta = json::parse(line);
        const auto& b = meta.at("bank");
        bank.vocab.size = b.at("vocab_size").get<int>();
        bank.vocab.eos = b.at("eos").get<TokenId>();
        bank.vocab.sep = b.at("sep").get<TokenId>();
        for (const auto& id : b.at("holdout_ids")) bank.holdout_ids.insert(id.get<std::string>());
    }
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        Problem p;
        p.id = j.at("id").get<std::string>();
        p.kind = kind_from(j.at("kind").get<std::string>());
        p.prompt = j.at("prompt").get<TokenSeq>();
        p.source_tag = j.at("source_tag").get<std::string>();
        if (j.contains("flaw")) p.flaw = flaw_from(j.at("flaw").get<std::string>());
        if (p.kind == ProblemKind::math_like) {
            p.gold_expr = j.at("gold").get<std::string>();
        } else {
            const auto& g = j.at("gold");
            p.code.program = g.at("program").get<std::string>();
            p.code.program_template = g.at("template").get<std::string>();
            for (const auto& t : g.at("tests"))
                p.code.tests.push_back({t.at("input").get<long long>(), t.at("expected").get<long long>()});
        }
        if (!seen.insert(p.id).second) throw std::runtime_error("duplicate problem id: " + p.id);
        bank.problems.push_back(std::move(p));
    }
    return bank;
}

BankSpec bank_spec_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    json j;
    f >> j;
    BankSpec spec;
    spec.families = j.at("families").get<std::vector<std::string>>();
    spec.count = j.at("count").get<int>();
    spec.seed = j.value("seed", 0ULL);
    if (j.contains("difficulty")) {
        const auto& d = j.at("difficulty");
        spec.prompt_len_min = d.value("prompt_len_min", spec.prompt_len_min);
        spec.prompt_len_max = d.value("prompt_len_max", spec.prompt_len_max);
        spec.mod_base = d.value("mod", spec.mod_base);
        spec.copy_k_max = d.value("copy_k_max", spec.copy_k_max);
        spec.hard_fraction = d.value("hard_fraction", spec.hard_fraction);
    }
    spec.holdout_fraction = j.value("holdout_fraction", spec.holdout_fraction);
    spec.vocab_size = j.value("vocab_size", spec.vocab_size);
    return spec;
}

}  // namespace deskrl
