#include "deskrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace deskrl {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

PolicyParams make_uniform_policy(Vocab vocab, FeatureSpec feat) {
    if (!vocab.valid()) throw std::invalid_argument("invalid vocab");
    return PolicyParams(vocab, feat);
}

PolicyParams make_gaussian_policy(Vocab vocab, FeatureSpec feat, double scale, std::uint64_t seed) {
    PolicyParams p = make_uniform_policy(vocab, feat);
    Rng rng(seed);
    for (double& v : p.theta.data) v = scale * rng.next_gaussian();
    return p;
}

void active_rows(const PolicyParams& params, const StateContext& state, std::vector<int>& out) {
    out.clear();
    const int V = params.vocab.size;
    const int window = params.feat.window;
    const std::size_t plen = state.prompt.size();
    const std::size_t glen = state.prefix.size();
    const std::size_t ctx = plen + glen;
    for (int w = 0; w < window; ++w) {
        if (static_cast<std::size_t>(w) >= ctx) break;
        const std::size_t pos = ctx - 1 - static_cast<std::size_t>(w);
        const TokenId tok = pos < plen ? state.prompt[pos] : state.prefix[pos - plen];
        out.push_back(w * V + tok);
    }
    out.push_back(window * V);  // bias row
}

void logits(const PolicyParams& params, const StateContext& state, std::vector<double>& out) {
    const int V = params.vocab.size;
    out.assign(static_cast<std::size_t>(V), 0.0);
    std::vector<int> rows;
    active_rows(params, state, rows);
    for (int r : rows) {
        const double* src = params.theta.row(r);
        for (int v = 0; v < V; ++v) out[v] += src[v];
    }
}

namespace {

void softmax_tau(std::span<const double> z, double tau, std::vector<double>& out) {
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
    const std::size_t n = z.size();
    out.resize(n);
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp((z[i] - zmax) / tau);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

}  // namespace

void token_dist(const PolicyParams& params, const StateContext& state, double tau, std::vector<double>& out) {
    std::vector<double> z;
    logits(params, state, z);
    softmax_tau(z, tau, out);
}

double log_prob(const PolicyParams& params, const StateContext& state, TokenId token, double tau) {
    if (token < 0 || token >= params.vocab.size) throw std::invalid_argument("token out of range");
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
    std::vector<double> z;
    logits(params, state, z);
    double zmax = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp((v - zmax) / tau);
    return (z[token] - zmax) / tau - std::log(lse);
}

double entropy_of_dist(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double entropy(const PolicyParams& params, const StateContext& state, double tau) {
    std::vector<double> p;
    token_dist(params, state, tau, p);
    return entropy_of_dist(p);
}

void accumulate_grad_log_prob(const PolicyParams& params, std::span<const int> rows,
                              std::span<const double> probs, TokenId token, double tau,
                              double scale, Matrix& acc) {
    const int V = params.vocab.size;
    const double s = scale / tau;
    for (int r : rows) {
        double* dst = acc.row(r);
        for (int v = 0; v < V; ++v) dst[v] -= s * probs[v];
        dst[token] += s;
    }
}

void accumulate_grad_entropy(const PolicyParams& params, std::span<const int> rows,
                             std::span<const double> probs, double tau, double scale, Matrix& acc) {
    // dH/dz_v = -(1/tau) p_v (ln p_v + H)
    const int V = params.vocab.size;
    const double h = entropy_of_dist(probs);
    const double s = scale / tau;
    for (int r : rows) {
        double* dst = acc.row(r);
        for (int v = 0; v < V; ++v) {
            const double p = probs[v];
            if (p > 0.0) dst[v] -= s * p * (std::log(p) + h);
        }
    }
}

void grad_log_prob(const PolicyParams& params, const StateContext& state, TokenId token, double tau, Matrix& out) {
    if (token < 0 || token >= params.vocab.size) throw std::invalid_argument("token out of range");
    std::vector<double> p;
    token_dist(params, state, tau, p);
    std::vector<int> rows;
    active_rows(params, state, rows);
    out = Matrix(params.theta.rows, params.theta.cols);
    accumulate_grad_log_prob(params, rows, p, token, tau, 1.0, out);
}

void grad_entropy(const PolicyParams& params, const StateContext& state, double tau, Matrix& out) {
    std::vector<double> p;
    token_dist(params, state, tau, p);
    std::vector<int> rows;
    active_rows(params, state, rows);
    out = Matrix(params.theta.rows, params.theta.cols);
    accumulate_grad_entropy(params, rows, p, tau, 1.0, out);
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

void save_params(const PolicyParams& params, std::ostream& os) {
    os << "deskrl.params.v1\n";
    os << "vocab " << params.vocab.size << " eos " << params.vocab.eos << " sep " << params.vocab.sep
       << " window " << params.feat.window << "\n";
    os << "rows " << params.theta.rows << " cols " << params.theta.cols << "\n";
    char buf[40];
    for (int r = 0; r < params.theta.rows; ++r) {
        for (int c = 0; c < params.theta.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", params.theta.at(r, c));
            os << buf << (c + 1 == params.theta.cols ? '\n' : ' ');
        }
    }
}

PolicyParams load_params(std::istream& is) {
    std::string magic;
    std::getline(is, magic);
    if (magic != "deskrl.params.v1") throw std::runtime_error("unrecognized checkpoint format: " + magic);
    std::string key;
    Vocab vocab;
    FeatureSpec feat;
    int rows = 0, cols = 0;
    is >> key >> vocab.size >> key >> vocab.eos >> key >> vocab.sep >> key >> feat.window;
    is >> key >> rows >> key >> cols;
    if (!is || !vocab.valid()) throw std::runtime_error("corrupt checkpoint header");
    PolicyParams p(vocab, feat);
    if (p.theta.rows != rows || p.theta.cols != cols) throw std::runtime_error("checkpoint shape mismatch");
    for (double& v : p.theta.data) is >> v;
    if (!is) throw std::runtime_error("truncated checkpoint values");
    return p;
}

void save_params_file(const PolicyParams& params, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    save_params(params, f);
}

PolicyParams load_params_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return load_params(f);
}

std::string snapshot_id(const PolicyParams& params) {
    std::uint64_t h = fnv1a(params.theta.data.data(), params.theta.data.size() * sizeof(double));
    h = splitmix64(h ^ static_cast<std::uint64_t>(params.vocab.size));
    return hex64(h);
}

}  // namespace deskrl
