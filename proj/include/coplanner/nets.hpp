#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace coplanner {

/// Scoring network of the planner. An action's logit is the scaled dot
/// product between the projected observation (query) and the projected
/// action embedding (key); the softmax over candidates is the policy.
struct PolicyParams {
    Eigen::MatrixXd w_q;  // d x h
    Eigen::MatrixXd w_k;  // d x h
    std::uint64_t generation = 0;  // bumped by every optimizer step

    std::size_t input_dim() const { return static_cast<std::size_t>(w_q.rows()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(w_q.cols()); }

    static PolicyParams zeros(std::size_t d, std::size_t h);
    static PolicyParams init(std::size_t d, std::size_t h, std::mt19937_64& rng);

    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    std::vector<std::string> tensor_names() const;
};

/// State-value network: one attention layer in which a learned query token
/// attends over itself and the observation, followed by a linear read-out.
struct ValueParams {
    Eigen::VectorXd query_token;  // d, the learned query vector
    Eigen::MatrixXd w_q;          // d x h
    Eigen::MatrixXd w_k;          // d x h
    Eigen::MatrixXd w_v;          // d x h
    Eigen::VectorXd w_out;        // h
    double b_out = 0.0;
    std::uint64_t generation = 0;

    std::size_t input_dim() const { return static_cast<std::size_t>(w_q.rows()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(w_q.cols()); }

    static ValueParams zeros(std::size_t d, std::size_t h);
    static ValueParams init(std::size_t d, std::size_t h, std::mt19937_64& rng);

    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    std::vector<std::string> tensor_names() const;
};

// Gradients share the layout of the parameters they belong to.
using PolicyGradients = PolicyParams;
using ValueGradients = ValueParams;

struct PolicyCache {
    Eigen::VectorXd obs;
    Eigen::MatrixXd actions;  // d x N
    Eigen::VectorXd query;    // h
    Eigen::MatrixXd keys;     // h x N
    Eigen::VectorXd logits;   // N
    Eigen::VectorXd probs;    // N
    std::uint64_t generation = 0;
};

struct ValueCache {
    Eigen::MatrixXd tokens;  // d x 2: [query_token, obs]
    Eigen::VectorXd query;   // h
    Eigen::MatrixXd keys;    // h x 2
    Eigen::MatrixXd values;  // h x 2
    Eigen::VectorXd attn;    // 2
    Eigen::VectorXd mixed;   // h
    double output = 0.0;
    std::uint64_t generation = 0;
};

/// Numerically stable softmax (max-shifted).
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
double entropy(const Eigen::VectorXd& probs);

PolicyCache policy_forward(const PolicyParams& params, const Eigen::VectorXd& obs,
                           const Eigen::MatrixXd& actions);

/// Backpropagates `dlogits` (gradient of a scalar w.r.t. the logits).
PolicyGradients policy_backward(const PolicyParams& params, const PolicyCache& cache,
                                const Eigen::VectorXd& dlogits);

/// dlogits for `upstream * log p[action]`: upstream * (onehot - p).
Eigen::VectorXd log_prob_logit_grad(const PolicyCache& cache, std::size_t action, double upstream);
/// dlogits for `upstream * H(p)`.
Eigen::VectorXd entropy_logit_grad(const PolicyCache& cache, double upstream);

ValueCache value_forward(const ValueParams& params, const Eigen::VectorXd& obs);
ValueGradients value_backward(const ValueParams& params, const ValueCache& cache, double upstream);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct StepStats {
    double grad_norm = 0.0;  // before clipping
    double scale = 1.0;      // clipping factor applied
};

/// Adam with global-norm gradient clipping. Moment buffers mirror the
/// tensors of the parameter set it was created for.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<std::size_t> tensor_sizes, AdamConfig config = {});

    template <class Params>
    static Adam for_params(const Params& params, AdamConfig config = {}) {
        std::vector<std::size_t> sizes;
        for (auto t : params.tensors()) sizes.push_back(t.size());
        return Adam(std::move(sizes), config);
    }

    /// Clips `grads` to `clip_norm` in global L2 norm, then applies one Adam
    /// update. Throws TrainingError (params untouched) on non-finite grads.
    template <class Params>
    StepStats step(Params& params, const Params& grads, double lr, double clip_norm = 10.0) {
        StepStats stats = apply(params.tensors(), grads.tensors(), grads.tensor_names(), lr, clip_norm);
        ++params.generation;
        return stats;
    }

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return config_; }

    nlohmann::json to_json() const;
    static Adam from_json(const nlohmann::json& j);

private:
    StepStats apply(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads,
                    const std::vector<std::string>& names, double lr, double clip_norm);

    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

double global_norm(const std::vector<std::span<const double>>& tensors);

nlohmann::json policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const nlohmann::json& j);
nlohmann::json value_to_json(const ValueParams& params);
ValueParams value_from_json(const nlohmann::json& j);

}  // namespace coplanner
