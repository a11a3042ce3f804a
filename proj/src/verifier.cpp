#include "deskrl/verifier.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include "deskrl/sandbox.hpp"

namespace deskrl {

namespace {

// ---------------------------------------------------------------------------
// Exact rational arithmetic with overflow detection.
// ---------------------------------------------------------------------------

struct Rat {
    long long num = 0;
    long long den = 1;
};

bool fits_ll(__int128 v) {
    return v <= static_cast<__int128>(INT64_MAX) && v >= static_cast<__int128>(INT64_MIN);
}

std::optional<Rat> make_rat(__int128 num, __int128 den) {
    if (den == 0) return std::nullopt;
    if (den < 0) {
        num = -num;
        den = -den;
    }
    __int128 a = num < 0 ? -num : num;
    __int128 b = den;
    while (b) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        num /= a;
        den /= a;
    }
    if (!fits_ll(num) || !fits_ll(den)) return std::nullopt;
    return Rat{static_cast<long long>(num), static_cast<long long>(den)};
}

std::optional<Rat> rat_add(Rat a, Rat b) {
    return make_rat(static_cast<__int128>(a.num) * b.den + static_cast<__int128>(b.num) * a.den,
                    static_cast<__int128>(a.den) * b.den);
}

std::optional<Rat> rat_mul(Rat a, Rat b) {
    return make_rat(static_cast<__int128>(a.num) * b.num, static_cast<__int128>(a.den) * b.den);
}

std::optional<Rat> rat_pow(Rat base, int exp) {
    if (exp < 0) {
        if (base.num == 0) return std::nullopt;
        base = Rat{base.den, base.num};
        if (base.den < 0) {
            base.num = -base.num;
            base.den = -base.den;
        }
        exp = -exp;
    }
    Rat acc{1, 1};
    for (int i = 0; i < exp; ++i) {
        auto next = rat_mul(acc, base);
        if (!next) return std::nullopt;
        acc = *next;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Recursive-descent parser. Precedence: ^ > unary- > * > +/-.
// Multiplication accepts '*' and the UTF-8 multiplication sign; minus accepts
// '-' and the UTF-8 minus sign.
// ---------------------------------------------------------------------------

struct Parser {
    std::string_view s;
    std::size_t pos = 0;
    bool failed = false;

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool eat(char c) {
        skip_ws();
        if (pos < s.size() && s[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    bool eat_minus() {
        skip_ws();
        if (pos < s.size() && s[pos] == '-') {
            ++pos;
            return true;
        }
        // U+2212 minus sign
        if (s.substr(pos, 3) == "\xe2\x88\x92") {
            pos += 3;
            return true;
        }
        return false;
    }

    bool eat_times() {
        skip_ws();
        if (pos < s.size() && s[pos] == '*') {
            ++pos;
            return true;
        }
        // U+00D7 multiplication sign
        if (s.substr(pos, 2) == "\xc3\x97") {
            pos += 2;
            return true;
        }
        return false;
    }

    ExprPtr fail() {
        failed = true;
        return nullptr;
    }

    ExprPtr make_rational(long long num, long long den) {
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::rational;
        e->num = num;
        e->den = den;
        return e;
    }

    ExprPtr parse_sum() {
        ExprPtr first = parse_product();
        if (failed) return nullptr;
        std::vector<ExprPtr> terms{first};
        std::vector<bool> negated{false};
        while (true) {
            if (eat('+')) {
                terms.push_back(parse_product());
                negated.push_back(false);
            } else if (eat_minus()) {
                terms.push_back(parse_product());
                negated.push_back(true);
            } else {
                break;
            }
            if (failed) return nullptr;
        }
        if (terms.size() == 1) return first;
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::add;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            if (negated[i]) {
                auto n = std::make_shared<Expr>();
                n->kind = Expr::Kind::neg;
                n->kids.push_back(terms[i]);
                e->kids.push_back(n);
            } else {
                e->kids.push_back(terms[i]);
            }
        }
        return e;
    }

    ExprPtr parse_product() {
        ExprPtr first = parse_unary();
        if (failed) return nullptr;
        std::vector<ExprPtr> factors{first};
        while (eat_times()) {
            factors.push_back(parse_unary());
            if (failed) return nullptr;
        }
        if (factors.size() == 1) return first;
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::mul;
        e->kids = std::move(factors);
        return e;
    }

    ExprPtr parse_unary() {
        if (eat_minus()) {
            ExprPtr inner = parse_unary();
            if (failed) return nullptr;
            auto e = std::make_shared<Expr>();
            e->kind = Expr::Kind::neg;
            e->kids.push_back(inner);
            return e;
        }
        return parse_power();
    }

    ExprPtr parse_power() {
        ExprPtr base = parse_atom();
        if (failed) return nullptr;
        if (!eat('^')) return base;
        bool neg = false;
        bool paren = eat('(');
        if (eat_minus()) neg = true;
        skip_ws();
        if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) return fail();
        long long v = 0;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            v = v * 10 + (s[pos] - '0');
            if (v > 1000) return fail();
            ++pos;
        }
        if (paren && !eat(')')) return fail();
        if (neg) v = -v;
        if (v < -8 || v > 8) return fail();
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::pow;
        e->kids.push_back(base);
        e->exponent = static_cast<int>(v);
        return e;
    }

    ExprPtr parse_atom() {
        skip_ws();
        if (pos >= s.size()) return fail();
        const char c = s[pos];
        if (c == '(') {
            ++pos;
            ExprPtr inner = parse_sum();
            if (failed) return nullptr;
            if (!eat(')')) return fail();
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::string name;
            while (pos < s.size() &&
                   (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) {
                name.push_back(s[pos]);
                ++pos;
            }
            auto e = std::make_shared<Expr>();
            e->kind = Expr::Kind::var;
            e->name = std::move(name);
            return e;
        }
        return fail();
    }

    std::optional<long long> parse_integer_digits() {
        skip_ws();
        if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) return std::nullopt;
        __int128 v = 0;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            v = v * 10 + (s[pos] - '0');
            if (!fits_ll(v)) return std::nullopt;
            ++pos;
        }
        return static_cast<long long>(v);
    }

    ExprPtr parse_number() {
        auto ip = parse_integer_digits();
        if (!ip) return fail();
        // decimal literal: admitted as an exact rational
        if (pos < s.size() && s[pos] == '.') {
            ++pos;
            __int128 num = *ip;
            __int128 den = 1;
            if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) return fail();
            while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                num = num * 10 + (s[pos] - '0');
                den *= 10;
                if (!fits_ll(num) || !fits_ll(den)) return fail();
                ++pos;
            }
            return make_rational(static_cast<long long>(num), static_cast<long long>(den));
        }
        // rational literal: int '/' int
        const std::size_t save = pos;
        skip_ws();
        if (pos < s.size() && s[pos] == '/') {
            ++pos;
            auto denom = parse_integer_digits();
            if (!denom || *denom == 0) {
                return fail();
            }
            return make_rational(*ip, *denom);
        }
        pos = save;
        return make_rational(*ip, 1);
    }
};

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

ExprPtr rat_node(Rat r) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::rational;
    e->num = r.num;
    e->den = r.den;
    return e;
}

bool is_rat(const ExprPtr& e) { return e->kind == Expr::Kind::rational; }

std::string print_expr(const ExprPtr& e);

std::string print_rat(long long num, long long den) {
    std::string s = std::to_string(num);
    if (den != 1) s += "/" + std::to_string(den);
    return s;
}

bool needs_parens_in_mul(const ExprPtr& e) {
    return e->kind == Expr::Kind::add || (e->kind == Expr::Kind::rational && (e->num < 0 || e->den != 1));
}

bool needs_parens_in_pow_base(const ExprPtr& e) { return e->kind != Expr::Kind::var; }

std::string print_expr(const ExprPtr& e) {
    switch (e->kind) {
        case Expr::Kind::rational:
            return print_rat(e->num, e->den);
        case Expr::Kind::var:
            return e->name;
        case Expr::Kind::pow: {
            std::string base = print_expr(e->kids[0]);
            if (needs_parens_in_pow_base(e->kids[0])) base = "(" + base + ")";
            return base + "^" + std::to_string(e->exponent);
        }
        case Expr::Kind::mul: {
            std::string out;
            for (std::size_t i = 0; i < e->kids.size(); ++i) {
                std::string part = print_expr(e->kids[i]);
                const bool is_add = e->kids[i]->kind == Expr::Kind::add;
                if (is_add || (i > 0 && needs_parens_in_mul(e->kids[i]))) part = "(" + part + ")";
                if (i == 0 && e->kids[i]->kind == Expr::Kind::rational && e->kids[i]->num == -1 &&
                    e->kids[i]->den == 1 && e->kids.size() > 1) {
                    out += "-";
                    continue;
                }
                if (!out.empty() && out != "-") out += "*";
                out += part;
            }
            return out;
        }
        case Expr::Kind::add: {
            std::string out;
            for (std::size_t i = 0; i < e->kids.size(); ++i) {
                std::string part = print_expr(e->kids[i]);
                if (i == 0) {
                    out = part;
                } else if (!part.empty() && part[0] == '-') {
                    out += part;
                } else {
                    out += "+" + part;
                }
            }
            return out;
        }
        case Expr::Kind::neg:
            return "-" + print_expr(e->kids[0]);
    }
    return "";
}

ExprPtr canon_node(const ExprPtr& e);

// Splits a canonical product into (coefficient, symbolic factors).
void split_mul(const ExprPtr& e, Rat& coef, std::vector<ExprPtr>& factors) {
    if (e->kind == Expr::Kind::mul) {
        for (const auto& k : e->kids) split_mul(k, coef, factors);
        return;
    }
    if (is_rat(e)) {
        if (auto c = rat_mul(coef, Rat{e->num, e->den})) {
            coef = *c;
        } else {
            factors.push_back(e);  // keep unfolded on overflow
        }
        return;
    }
    factors.push_back(e);
}

ExprPtr canon_mul(std::vector<ExprPtr> kids) {
    Rat coef{1, 1};
    std::vector<ExprPtr> factors;
    for (const auto& k : kids) split_mul(k, coef, factors);
    if (coef.num == 0) return rat_node(Rat{0, 1});
    std::sort(factors.begin(), factors.end(),
              [](const ExprPtr& a, const ExprPtr& b) { return print_expr(a) < print_expr(b); });
    if (factors.empty()) return rat_node(coef);
    if (coef.num == 1 && coef.den == 1) {
        if (factors.size() == 1) return factors[0];
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::mul;
        e->kids = std::move(factors);
        return e;
    }
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::mul;
    e->kids.push_back(rat_node(coef));
    for (auto& f : factors) e->kids.push_back(std::move(f));
    return e;
}

void split_add(const ExprPtr& e, std::optional<Rat>& constant, std::vector<ExprPtr>& terms) {
    if (e->kind == Expr::Kind::add) {
        for (const auto& k : e->kids) split_add(k, constant, terms);
        return;
    }
    if (is_rat(e)) {
        if (constant) {
            if (auto c = rat_add(*constant, Rat{e->num, e->den})) {
                constant = *c;
                return;
            }
            terms.push_back(e);
            return;
        }
        constant = Rat{e->num, e->den};
        return;
    }
    terms.push_back(e);
}

ExprPtr canon_add(std::vector<ExprPtr> kids) {
    std::optional<Rat> constant;
    std::vector<ExprPtr> terms;
    for (const auto& k : kids) split_add(k, constant, terms);
    std::sort(terms.begin(), terms.end(),
              [](const ExprPtr& a, const ExprPtr& b) { return print_expr(a) < print_expr(b); });
    if (constant && constant->num != 0) terms.push_back(rat_node(*constant));
    if (terms.empty()) return rat_node(Rat{0, 1});
    if (terms.size() == 1) return terms[0];
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::add;
    e->kids = std::move(terms);
    return e;
}

ExprPtr canon_node(const ExprPtr& e) {
    switch (e->kind) {
        case Expr::Kind::rational: {
            auto r = make_rat(e->num, e->den);
            if (!r) return e;
            return rat_node(*r);
        }
        case Expr::Kind::var:
            return e;
        case Expr::Kind::neg: {
            std::vector<ExprPtr> kids;
            kids.push_back(rat_node(Rat{-1, 1}));
            kids.push_back(canon_node(e->kids[0]));
            return canon_mul(std::move(kids));
        }
        case Expr::Kind::mul: {
            std::vector<ExprPtr> kids;
            kids.reserve(e->kids.size());
            for (const auto& k : e->kids) kids.push_back(canon_node(k));
            return canon_mul(std::move(kids));
        }
        case Expr::Kind::add: {
            std::vector<ExprPtr> kids;
            kids.reserve(e->kids.size());
            for (const auto& k : e->kids) kids.push_back(canon_node(k));
            return canon_add(std::move(kids));
        }
        case Expr::Kind::pow: {
            ExprPtr base = canon_node(e->kids[0]);
            if (e->exponent == 0) return rat_node(Rat{1, 1});
            if (e->exponent == 1) return base;
            if (is_rat(base)) {
                if (auto folded = rat_pow(Rat{base->num, base->den}, e->exponent)) return rat_node(*folded);
            }
            auto p = std::make_shared<Expr>();
            p->kind = Expr::Kind::pow;
            p->kids.push_back(base);
            p->exponent = e->exponent;
            return p;
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// Semantic equality via seeded rational assignments
// ---------------------------------------------------------------------------

void collect_vars(const ExprPtr& e, std::vector<std::string>& out) {
    if (e->kind == Expr::Kind::var) {
        if (std::find(out.begin(), out.end(), e->name) == out.end()) out.push_back(e->name);
    }
    for (const auto& k : e->kids) collect_vars(k, out);
}

std::optional<Rat> eval_exact(const ExprPtr& e, const std::map<std::string, Rat>& env) {
    switch (e->kind) {
        case Expr::Kind::rational:
            return make_rat(e->num, e->den);
        case Expr::Kind::var: {
            auto it = env.find(e->name);
            if (it == env.end()) return std::nullopt;
            return it->second;
        }
        case Expr::Kind::neg: {
            auto v = eval_exact(e->kids[0], env);
            if (!v) return std::nullopt;
            return make_rat(-static_cast<__int128>(v->num), v->den);
        }
        case Expr::Kind::add: {
            Rat acc{0, 1};
            for (const auto& k : e->kids) {
                auto v = eval_exact(k, env);
                if (!v) return std::nullopt;
                auto next = rat_add(acc, *v);
                if (!next) return std::nullopt;
                acc = *next;
            }
            return acc;
        }
        case Expr::Kind::mul: {
            Rat acc{1, 1};
            for (const auto& k : e->kids) {
                auto v = eval_exact(k, env);
                if (!v) return std::nullopt;
                auto next = rat_mul(acc, *v);
                if (!next) return std::nullopt;
                acc = *next;
            }
            return acc;
        }
        case Expr::Kind::pow: {
            auto base = eval_exact(e->kids[0], env);
            if (!base) return std::nullopt;
            return rat_pow(*base, e->exponent);
        }
    }
    return std::nullopt;
}

double eval_double(const ExprPtr& e, const std::map<std::string, Rat>& env, bool& ok) {
    switch (e->kind) {
        case Expr::Kind::rational:
            return static_cast<double>(e->num) / static_cast<double>(e->den);
        case Expr::Kind::var: {
            auto it = env.find(e->name);
            if (it == env.end()) {
                ok = false;
                return 0.0;
            }
            return static_cast<double>(it->second.num) / static_cast<double>(it->second.den);
        }
        case Expr::Kind::neg:
            return -eval_double(e->kids[0], env, ok);
        case Expr::Kind::add: {
            double acc = 0.0;
            for (const auto& k : e->kids) acc += eval_double(k, env, ok);
            return acc;
        }
        case Expr::Kind::mul: {
            double acc = 1.0;
            for (const auto& k : e->kids) acc *= eval_double(k, env, ok);
            return acc;
        }
        case Expr::Kind::pow: {
            double b = eval_double(e->kids[0], env, ok);
            if (b == 0.0 && e->exponent < 0) {
                ok = false;
                return 0.0;
            }
            return std::pow(b, e->exponent);
        }
    }
    ok = false;
    return 0.0;
}

// Probabilistic identity test: equal on 16 seeded rational assignments to the
// shared variables. Sound for polynomials at this degree bound, documented as
// possibly unsound for adversarial inputs.
bool semantically_equal(const ExprPtr& a, const ExprPtr& b) {
    std::vector<std::string> vars;
    collect_vars(a, vars);
    collect_vars(b, vars);
    std::sort(vars.begin(), vars.end());
    Rng rng(0x5eedc0deULL);
    int done = 0;
    int draws = 0;
    while (done < 16 && draws < 96) {
        ++draws;
        std::map<std::string, Rat> env;
        for (const auto& v : vars) {
            long long num = 1 + static_cast<long long>(rng.next_below(9));
            if (rng.next_below(2)) num = -num;
            long long den = 1 + static_cast<long long>(rng.next_below(7));
            env[v] = *make_rat(num, den);
        }
        auto va = eval_exact(a, env);
        auto vb = eval_exact(b, env);
        if (va && vb) {
            if (va->num != vb->num || va->den != vb->den) return false;
            ++done;
            continue;
        }
        // overflow fallback: compare in floating point
        bool ok = true;
        double da = eval_double(a, env, ok);
        double db = eval_double(b, env, ok);
        if (!ok) continue;  // undefined under this assignment, resample
        const double scale = std::max({1.0, std::fabs(da), std::fabs(db)});
        if (std::fabs(da - db) > 1e-9 * scale) return false;
        ++done;
    }
    return done > 0;
}

}  // namespace

std::optional<ExprPtr> parse_expr(std::string_view text) {
    Parser p{text};
    ExprPtr e = p.parse_sum();
    if (p.failed || !e) return std::nullopt;
    p.skip_ws();
    if (p.pos != text.size()) return std::nullopt;
    return e;
}

std::string canonical(const ExprPtr& expr) { return print_expr(canon_node(expr)); }

std::optional<std::string> canonical_form(std::string_view text) {
    auto e = parse_expr(text);
    if (!e) return std::nullopt;
    return canonical(*e);
}

// ---------------------------------------------------------------------------
// Boxed answer extraction
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kBoxed = "\\boxed{";

std::optional<std::string> last_balanced_boxed(std::string_view text) {
    std::optional<std::string> found;
    std::size_t pos = 0;
    while (true) {
        const std::size_t at = text.find(kBoxed, pos);
        if (at == std::string_view::npos) break;
        std::size_t i = at + kBoxed.size();
        int depth = 1;
        std::string content;
        bool balanced = false;
        for (; i < text.size(); ++i) {
            const char c = text[i];
            if (c == '{') ++depth;
            if (c == '}') {
                --depth;
                if (depth == 0) {
                    balanced = true;
                    break;
                }
            }
            content.push_back(c);
        }
        if (balanced) found = content;
        pos = at + kBoxed.size();
    }
    return found;
}

}  // namespace

std::optional<std::string> extract_boxed(std::string_view text) { return last_balanced_boxed(text); }

std::optional<std::string> extract_answer(std::string_view response_text) {
    const std::size_t sep = response_text.rfind("SEP");
    if (sep == std::string_view::npos) return std::nullopt;
    return last_balanced_boxed(response_text.substr(sep + 3));
}

const char* to_string(VerifyReason r) {
    switch (r) {
        case VerifyReason::string_match: return "string_match";
        case VerifyReason::semantic_match: return "semantic_match";
        case VerifyReason::mismatch: return "mismatch";
        case VerifyReason::extraction_failed: return "extraction_failed";
        case VerifyReason::parse_failed: return "parse_failed";
    }
    return "?";
}

VerifyResult verify_answer(std::string_view candidate, std::string_view gold) {
    // 1. extract: already-extracted input is permitted
    std::string cand_text(candidate);
    if (candidate.find(kBoxed) != std::string_view::npos) {
        auto extracted = candidate.find("SEP") != std::string_view::npos ? extract_answer(candidate)
                                                                         : extract_boxed(candidate);
        if (!extracted) return {false, VerifyReason::extraction_failed};
        cand_text = *extracted;
    }

    auto gold_parsed = parse_expr(gold);
    if (!gold_parsed) throw std::invalid_argument("gold answer does not parse: " + std::string(gold));

    // 2. parse + canonical
    auto cand_parsed = parse_expr(cand_text);
    if (!cand_parsed) return {false, VerifyReason::parse_failed};

    // 3. canonical string comparison
    if (canonical(*cand_parsed) == canonical(*gold_parsed)) return {true, VerifyReason::string_match};

    // 4. wrap gold in boxed form, re-extract, re-parse, semantic equality
    const std::string wrapped = std::string(kBoxed) + std::string(gold) + "}";
    auto rex = extract_boxed(wrapped);
    if (!rex) throw std::invalid_argument("gold answer breaks boxed wrapping: " + std::string(gold));
    auto gold2 = parse_expr(*rex);
    if (!gold2) throw std::invalid_argument("re-extracted gold does not parse: " + *rex);
    if (semantically_equal(*cand_parsed, *gold2)) return {true, VerifyReason::semantic_match};
    return {false, VerifyReason::mismatch};
}

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

int reward(const Problem& problem, const Vocab& vocab, std::span<const TokenId> tokens, bool truncated) {
    if (truncated) return 0;
    if (problem.kind == ProblemKind::math_like) {
        const std::string text = decode_response_text(vocab, tokens);
        auto answer = extract_answer(text);
        if (!answer) return 0;
        try {
            return verify_answer(*answer, problem.gold_expr).correct ? 1 : 0;
        } catch (const std::invalid_argument&) {
            return 0;
        }
    }
    auto digits = answer_span_digits(vocab, tokens);
    if (!digits || digits->empty()) return 0;
    std::string program = problem.code.program_template;
    const std::size_t hole = program.find('?');
    if (hole == std::string::npos) return 0;
    program.replace(hole, 1, *digits);
    if (!sandbox_check_syntax(program)) return 0;
    return sandbox_run(program, problem.code.tests).passed ? 1 : 0;
}

}  // namespace deskrl
