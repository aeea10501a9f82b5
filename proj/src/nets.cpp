#include "coplanner/nets.hpp"

#include <cmath>

#include "coplanner/domain.hpp"
#include "coplanner/errors.hpp"

namespace coplanner {

namespace {

std::string shape(const Eigen::MatrixXd& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void fill_uniform(Eigen::MatrixXd& m, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void fill_uniform(Eigen::VectorXd& v, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
}

std::span<double> span_of(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> span_of(const Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> span_of(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

// ---- parameter sets -----------------------------------------------------------

PolicyParams PolicyParams::zeros(std::size_t d, std::size_t h) {
    PolicyParams p;
    p.w_q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h));
    p.w_k = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h));
    return p;
}

PolicyParams PolicyParams::init(std::size_t d, std::size_t h, std::mt19937_64& rng) {
    auto p = zeros(d, h);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    fill_uniform(p.w_q, bound, rng);
    fill_uniform(p.w_k, bound, rng);
    return p;
}

std::vector<std::span<double>> PolicyParams::tensors() { return {span_of(w_q), span_of(w_k)}; }
std::vector<std::span<const double>> PolicyParams::tensors() const { return {span_of(w_q), span_of(w_k)}; }
std::vector<std::string> PolicyParams::tensor_names() const { return {"policy.w_q", "policy.w_k"}; }

ValueParams ValueParams::zeros(std::size_t d, std::size_t h) {
    const auto di = static_cast<Eigen::Index>(d);
    const auto hi = static_cast<Eigen::Index>(h);
    ValueParams p;
    p.query_token = Eigen::VectorXd::Zero(di);
    p.w_q = Eigen::MatrixXd::Zero(di, hi);
    p.w_k = Eigen::MatrixXd::Zero(di, hi);
    p.w_v = Eigen::MatrixXd::Zero(di, hi);
    p.w_out = Eigen::VectorXd::Zero(hi);
    return p;
}

ValueParams ValueParams::init(std::size_t d, std::size_t h, std::mt19937_64& rng) {
    auto p = zeros(d, h);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    fill_uniform(p.query_token, bound, rng);
    fill_uniform(p.w_q, bound, rng);
    fill_uniform(p.w_k, bound, rng);
    fill_uniform(p.w_v, bound, rng);
    fill_uniform(p.w_out, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    return p;
}

std::vector<std::span<double>> ValueParams::tensors() {
    return {span_of(query_token), span_of(w_q), span_of(w_k), span_of(w_v), span_of(w_out), {&b_out, 1}};
}

std::vector<std::span<const double>> ValueParams::tensors() const {
    return {span_of(query_token), span_of(w_q), span_of(w_k), span_of(w_v), span_of(w_out), {&b_out, 1}};
}

std::vector<std::string> ValueParams::tensor_names() const {
    return {"value.query_token", "value.w_q", "value.w_k", "value.w_v", "value.w_out", "value.b_out"};
}

// ---- policy -----------------------------------------------------------------

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double shift = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - shift).exp();
    return e / e.sum();
}

double entropy(const Eigen::VectorXd& probs) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
    return h;
}

PolicyCache policy_forward(const PolicyParams& params, const Eigen::VectorXd& obs, const Eigen::MatrixXd& actions) {
    if (params.w_k.rows() != params.w_q.rows() || params.w_k.cols() != params.w_q.cols())
        throw ShapeError("policy.w_k is " + shape(params.w_k) + " but policy.w_q is " + shape(params.w_q));
    if (obs.size() != params.w_q.rows())
        throw ShapeError("observation has dimension " + std::to_string(obs.size()) + ", policy expects " +
                         std::to_string(params.w_q.rows()));
    if (actions.cols() < 1) throw ShapeError("action embeddings: need at least one candidate");
    if (actions.rows() != params.w_k.rows())
        throw ShapeError("action embeddings are " + shape(actions) + ", policy expects " + std::to_string(params.w_k.rows()) +
                         " rows");
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.w_q.cols()));
    PolicyCache c;
    c.obs = obs;
    c.actions = actions;
    c.query = params.w_q.transpose() * obs;
    c.keys = params.w_k.transpose() * actions;
    c.logits = (c.keys.transpose() * c.query) * scale;
    c.probs = softmax(c.logits);
    c.generation = params.generation;
    return c;
}

PolicyGradients policy_backward(const PolicyParams& params, const PolicyCache& cache, const Eigen::VectorXd& dlogits) {
    if (cache.generation != params.generation || cache.obs.size() != params.w_q.rows() ||
        cache.query.size() != params.w_q.cols())
        throw UsageError("policy_backward: cache does not come from a forward pass with these parameters");
    if (dlogits.size() != cache.logits.size())
        throw ShapeError("dlogits has " + std::to_string(dlogits.size()) + " entries, cache has " +
                         std::to_string(cache.logits.size()) + " actions");
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.w_q.cols()));
    const Eigen::VectorXd dquery = cache.keys * dlogits * scale;                   // h
    const Eigen::MatrixXd dkeys = cache.query * dlogits.transpose() * scale;       // h x N
    PolicyGradients g;
    g.w_q = cache.obs * dquery.transpose();
    g.w_k = cache.actions * dkeys.transpose();
    g.generation = params.generation;
    return g;
}

Eigen::VectorXd log_prob_logit_grad(const PolicyCache& cache, std::size_t action, double upstream) {
    if (action >= static_cast<std::size_t>(cache.probs.size()))
        throw UsageError("action index " + std::to_string(action) + " out of range");
    Eigen::VectorXd g = -upstream * cache.probs;
    g[static_cast<Eigen::Index>(action)] += upstream;
    return g;
}

Eigen::VectorXd entropy_logit_grad(const PolicyCache& cache, double upstream) {
    // dH/dz_j = -p_j (log p_j + H)
    const double h = entropy(cache.probs);
    Eigen::VectorXd g(cache.probs.size());
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        const double p = cache.probs[j];
        g[j] = p > 0.0 ? -upstream * p * (std::log(p) + h) : 0.0;
    }
    return g;
}

// ---- value --------------------------------------------------------------------

ValueCache value_forward(const ValueParams& params, const Eigen::VectorXd& obs) {
    const auto d = params.w_q.rows();
    const auto h = params.w_q.cols();
    for (const auto* m : {&params.w_k, &params.w_v})
        if (m->rows() != d || m->cols() != h)
            throw ShapeError(std::string(m == &params.w_k ? "value.w_k" : "value.w_v") + " is " + shape(*m) +
                             ", expected " + std::to_string(d) + "x" + std::to_string(h));
    if (params.query_token.size() != d) throw ShapeError("value.query_token has dimension " + std::to_string(params.query_token.size()));
    if (params.w_out.size() != h) throw ShapeError("value.w_out has dimension " + std::to_string(params.w_out.size()));
    if (obs.size() != d)
        throw ShapeError("observation has dimension " + std::to_string(obs.size()) + ", value network expects " +
                         std::to_string(d));
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));
    ValueCache c;
    c.tokens.resize(d, 2);
    c.tokens.col(0) = params.query_token;
    c.tokens.col(1) = obs;
    c.query = params.w_q.transpose() * params.query_token;
    c.keys = params.w_k.transpose() * c.tokens;
    c.values = params.w_v.transpose() * c.tokens;
    c.attn = softmax((c.keys.transpose() * c.query) * scale);
    c.mixed = c.values * c.attn;
    c.output = params.w_out.dot(c.mixed) + params.b_out;
    c.generation = params.generation;
    return c;
}

ValueGradients value_backward(const ValueParams& params, const ValueCache& cache, double upstream) {
    if (cache.generation != params.generation || cache.tokens.rows() != params.w_q.rows() ||
        cache.query.size() != params.w_q.cols())
        throw UsageError("value_backward: cache does not come from a forward pass with these parameters");
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.w_q.cols()));
    ValueGradients g;
    g.b_out = upstream;
    g.w_out = upstream * cache.mixed;
    const Eigen::VectorXd dmixed = upstream * params.w_out;                         // h
    const Eigen::MatrixXd dvalues = dmixed * cache.attn.transpose();                // h x 2
    const Eigen::VectorXd dattn = cache.values.transpose() * dmixed;                // 2
    const Eigen::VectorXd dscores = cache.attn.cwiseProduct(dattn.array().matrix() - Eigen::VectorXd::Constant(2, cache.attn.dot(dattn)));
    const Eigen::MatrixXd dkeys = cache.query * dscores.transpose() * scale;        // h x 2
    const Eigen::VectorXd dquery = cache.keys * dscores * scale;                    // h
    g.w_q = params.query_token * dquery.transpose();
    g.w_k = cache.tokens * dkeys.transpose();
    g.w_v = cache.tokens * dvalues.transpose();
    const Eigen::MatrixXd dtokens = params.w_k * dkeys + params.w_v * dvalues;      // d x 2
    g.query_token = params.w_q * dquery + dtokens.col(0);
    g.generation = params.generation;
    return g;
}

// ---- Adam -----------------------------------------------------------------------

double global_norm(const std::vector<std::span<const double>>& tensors) {
    double sq = 0.0;
    for (auto t : tensors)
        for (double x : t) sq += x * x;
    return std::sqrt(sq);
}

Adam::Adam(std::vector<std::size_t> tensor_sizes, AdamConfig config) : config_(config) {
    for (auto n : tensor_sizes) {
        m_.emplace_back(n, 0.0);
        v_.emplace_back(n, 0.0);
    }
}

StepStats Adam::apply(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads,
                      const std::vector<std::string>& names, double lr, double clip_norm) {
    if (params.size() != grads.size() || params.size() != m_.size())
        throw ShapeError("optimizer tracks " + std::to_string(m_.size()) + " tensors, got " + std::to_string(params.size()) +
                         " parameters and " + std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || params[i].size() != m_[i].size())
            throw ShapeError(names[i] + ": gradient has " + std::to_string(grads[i].size()) + " entries, parameter has " +
                             std::to_string(params[i].size()));
        for (std::size_t k = 0; k < grads[i].size(); ++k)
            if (!std::isfinite(grads[i][k]))
                throw TrainingError("non-finite gradient in " + names[i] + "[" + std::to_string(k) + "] = " +
                                    std::to_string(grads[i][k]) + "; step aborted");
    }
    StepStats stats;
    stats.grad_norm = global_norm(grads);
    if (clip_norm > 0.0 && stats.grad_norm > clip_norm) stats.scale = clip_norm / stats.grad_norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            const double g = grads[i][k] * stats.scale;
            m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
            v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
            params[i][k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
        }
    }
    return stats;
}

nlohmann::json Adam::to_json() const {
    return {{"beta1", config_.beta1}, {"beta2", config_.beta2}, {"eps", config_.eps}, {"t", t_}, {"m", m_}, {"v", v_}};
}

Adam Adam::from_json(const nlohmann::json& j) {
    Adam a;
    a.config_ = {j.at("beta1").get<double>(), j.at("beta2").get<double>(), j.at("eps").get<double>()};
    a.t_ = j.at("t").get<std::uint64_t>();
    a.m_ = j.at("m").get<std::vector<std::vector<double>>>();
    a.v_ = j.at("v").get<std::vector<std::vector<double>>>();
    if (a.m_.size() != a.v_.size()) throw ShapeError("optimizer state: moment buffers disagree");
    for (std::size_t i = 0; i < a.m_.size(); ++i)
        if (a.m_[i].size() != a.v_[i].size()) throw ShapeError("optimizer state: moment buffer " + std::to_string(i) + " disagrees");
    return a;
}

// ---- serialization --------------------------------------------------------------

nlohmann::json policy_to_json(const PolicyParams& p) {
    return {{"w_q", matrix_to_json(p.w_q)}, {"w_k", matrix_to_json(p.w_k)}};
}

PolicyParams policy_from_json(const nlohmann::json& j) {
    PolicyParams p;
    p.w_q = matrix_from_json(j.at("w_q"));
    p.w_k = matrix_from_json(j.at("w_k"));
    return p;
}

nlohmann::json value_to_json(const ValueParams& p) {
    return {{"query_token", vector_to_json(p.query_token)},
            {"w_q", matrix_to_json(p.w_q)},
            {"w_k", matrix_to_json(p.w_k)},
            {"w_v", matrix_to_json(p.w_v)},
            {"w_out", vector_to_json(p.w_out)},
            {"b_out", p.b_out}};
}

ValueParams value_from_json(const nlohmann::json& j) {
    ValueParams p;
    p.query_token = vector_from_json(j.at("query_token"));
    p.w_q = matrix_from_json(j.at("w_q"));
    p.w_k = matrix_from_json(j.at("w_k"));
    p.w_v = matrix_from_json(j.at("w_v"));
    p.w_out = vector_from_json(j.at("w_out"));
    p.b_out = j.at("b_out").get<double>();
    return p;
}

}  // namespace coplanner
