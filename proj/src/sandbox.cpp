#include "deskrl/sandbox.hpp"

#include <cctype>
#include <memory>
#include <optional>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deskrl {

const char* to_string(SandboxDetail d) {
    switch (d) {
        case SandboxDetail::all_tests_passed: return "all_tests_passed";
        case SandboxDetail::syntax_error: return "syntax_error";
        case SandboxDetail::budget_exceeded: return "budget_exceeded";
        case SandboxDetail::wrong_output: return "wrong_output";
        case SandboxDetail::runtime_error: return "runtime_error";
    }
    return "?";
}

namespace {

enum class Op { add, sub, mul, pow };

struct Node {
    enum class Kind { literal, input, call } kind = Kind::literal;
    long long value = 0;
    Op op = Op::add;
    std::vector<std::unique_ptr<Node>> args;
};

struct MiniParser {
    std::string_view s;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    std::unique_ptr<Node> parse() {
        skip_ws();
        if (pos >= s.size()) return nullptr;
        const char c = s[pos];
        if (c == '(') {
            ++pos;
            skip_ws();
            std::string op;
            while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '(' &&
                   s[pos] != ')') {
                op.push_back(s[pos]);
                ++pos;
            }
            auto node = std::make_unique<Node>();
            node->kind = Node::Kind::call;
            if (op == "+") node->op = Op::add;
            else if (op == "-") node->op = Op::sub;
            else if (op == "*") node->op = Op::mul;
            else if (op == "pow") node->op = Op::pow;
            else return nullptr;
            while (true) {
                skip_ws();
                if (pos < s.size() && s[pos] == ')') {
                    ++pos;
                    break;
                }
                auto arg = parse();
                if (!arg) return nullptr;
                node->args.push_back(std::move(arg));
            }
            if (node->args.empty()) return nullptr;
            if (node->op == Op::pow && node->args.size() != 2) return nullptr;
            return node;
        }
        if (c == 'x') {
            ++pos;
            auto node = std::make_unique<Node>();
            node->kind = Node::Kind::input;
            return node;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-') {
            bool neg = c == '-';
            if (neg) ++pos;
            if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) return nullptr;
            long long v = 0;
            while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                if (v > (INT64_MAX - 9) / 10) return nullptr;
                v = v * 10 + (s[pos] - '0');
                ++pos;
            }
            auto node = std::make_unique<Node>();
            node->kind = Node::Kind::literal;
            node->value = neg ? -v : v;
            return node;
        }
        return nullptr;
    }
};

std::unique_ptr<Node> parse_program(std::string_view program) {
    MiniParser p{program};
    auto root = p.parse();
    if (!root) return nullptr;
    p.skip_ws();
    if (p.pos != program.size()) return nullptr;
    return root;
}

enum class EvalStatus { ok, budget_exceeded, runtime_error };

struct Interp {
    long long budget;
    long long steps = 0;
    long long input = 0;
    EvalStatus status = EvalStatus::ok;

    bool step() {
        if (++steps > budget) {
            status = EvalStatus::budget_exceeded;
            return false;
        }
        return true;
    }

    std::optional<long long> checked_add(long long a, long long b) {
        long long r;
        if (__builtin_add_overflow(a, b, &r)) return std::nullopt;
        return r;
    }

    std::optional<long long> checked_mul(long long a, long long b) {
        long long r;
        if (__builtin_mul_overflow(a, b, &r)) return std::nullopt;
        return r;
    }

    long long eval(const Node& n) {
        if (!step()) return 0;
        switch (n.kind) {
            case Node::Kind::literal:
                return n.value;
            case Node::Kind::input:
                return input;
            case Node::Kind::call:
                break;
        }
        std::vector<long long> vals;
        vals.reserve(n.args.size());
        for (const auto& a : n.args) {
            vals.push_back(eval(*a));
            if (status != EvalStatus::ok) return 0;
        }
        switch (n.op) {
            case Op::add: {
                long long acc = 0;
                for (long long v : vals) {
                    auto r = checked_add(acc, v);
                    if (!r) {
                        status = EvalStatus::runtime_error;
                        return 0;
                    }
                    acc = *r;
                }
                return acc;
            }
            case Op::sub: {
                long long acc = vals.size() == 1 ? 0 : vals[0];
                for (std::size_t i = vals.size() == 1 ? 0 : 1; i < vals.size(); ++i) {
                    long long r;
                    if (__builtin_sub_overflow(acc, vals[i], &r)) {
                        status = EvalStatus::runtime_error;
                        return 0;
                    }
                    acc = r;
                }
                return acc;
            }
            case Op::mul: {
                long long acc = 1;
                for (long long v : vals) {
                    auto r = checked_mul(acc, v);
                    if (!r) {
                        status = EvalStatus::runtime_error;
                        return 0;
                    }
                    acc = *r;
                }
                return acc;
            }
            case Op::pow: {
                const long long base = vals[0];
                const long long exp = vals[1];
                if (exp < 0) {
                    status = EvalStatus::runtime_error;
                    return 0;
                }
                long long acc = 1;
                for (long long i = 0; i < exp; ++i) {
                    if (!step()) return 0;  // each multiplication costs a step
                    auto r = checked_mul(acc, base);
                    if (!r) {
                        status = EvalStatus::runtime_error;
                        return 0;
                    }
                    acc = *r;
                }
                return acc;
            }
        }
        status = EvalStatus::runtime_error;
        return 0;
    }
};

struct TestOutcome {
    bool failed = false;
    SandboxDetail detail = SandboxDetail::all_tests_passed;
};

TestOutcome run_one(const Node& root, const CodeTestCase& test, long long budget) {
    Interp interp{budget};
    interp.input = test.input;
    const long long out = interp.eval(root);
    if (interp.status == EvalStatus::budget_exceeded) return {true, SandboxDetail::budget_exceeded};
    if (interp.status == EvalStatus::runtime_error) return {true, SandboxDetail::runtime_error};
    if (out != test.expected) return {true, SandboxDetail::wrong_output};
    return {};
}

}  // namespace

bool sandbox_check_syntax(std::string_view program) { return parse_program(program) != nullptr; }

SandboxOutcome sandbox_run(std::string_view program, const std::vector<CodeTestCase>& tests,
                           long long budget, int workers) {
    if (budget <= 0) throw std::invalid_argument("budget must be positive");
    for (const auto& t : tests) {
        for (const auto& u : tests) {
            if (t.input == u.input && t.expected != u.expected)
                throw std::invalid_argument("test schema forbids multiple valid outputs per input");
        }
    }
    auto root = parse_program(program);
    if (!root) return {false, SandboxDetail::syntax_error};

    const int n = static_cast<int>(tests.size());
    std::vector<TestOutcome> outcomes(static_cast<std::size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers > 0 ? workers : omp_get_max_threads())
#endif
    for (int i = 0; i < n; ++i) {
        outcomes[static_cast<std::size_t>(i)] = run_one(*root, tests[static_cast<std::size_t>(i)], budget);
    }
    // the lowest-index failing test decides the detail
    for (const auto& o : outcomes) {
        if (o.failed) return {false, o.detail};
    }
    return {true, SandboxDetail::all_tests_passed};
}

}  // namespace deskrl
