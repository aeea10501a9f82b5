#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coplanner/checkpoint.hpp"
#include "coplanner/domain.hpp"
#include "coplanner/nets.hpp"
#include "coplanner/orchestrator.hpp"

namespace coplanner {

struct PpoConfig {
    double clip_epsilon = 0.1;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double value_loss_coef = 0.5;
    double entropy_coef = 1e-5;
    std::size_t ppo_epochs = 10;
    std::size_t batch = 32;                // minibatch size in transitions
    std::size_t episodes_per_update = 32;  // buffer size in episodes
    double lr = 5e-4;
    bool lr_decay = true;
    std::int64_t warmup_freeze_steps = 1000;
    std::int64_t total_env_steps = 5000;
    double grad_clip = 10.0;
    bool normalize_advantages = true;
    double divergence_threshold = 10.0;
    std::size_t max_rounds = 2;

    /// Throws ConfigError when a value is out of range.
    void validate() const;
};

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// `values` holds one bootstrap entry past the last reward (0 if terminal).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                      double lambda);

struct PolicyLossResult {
    double loss = 0.0;                   // mean of -min(rA, clip(r)A), plus entropy term
    std::vector<double> grad_log_prob;   // d loss / d new_log_prob
    double entropy_grad_scale = 0.0;     // d loss / d H_i, same for all i
    double clip_fraction = 0.0;
};

/// Clipped surrogate loss. `entropies` may be empty when entropy_coef is 0.
PolicyLossResult ppo_policy_loss(std::span<const double> old_log_probs, std::span<const double> new_log_probs,
                                 std::span<const double> advantages, double epsilon,
                                 std::span<const double> entropies = {}, double entropy_coef = 0.0);

struct ValueLossResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d prediction
};

ValueLossResult value_loss(std::span<const double> predictions, std::span<const double> returns,
                           double coef = 0.5);

/// Linearly decays from lr0 at step 0 to 0 at total_steps.
double linear_lr(double lr0, std::int64_t step, std::int64_t total_steps);

/// Transitions of complete episodes plus their advantages and returns.
class RolloutBuffer {
public:
    struct Entry {
        Transition transition;
        double advantage = 0.0;
        double ret = 0.0;
    };

    void add_episode(const EpisodeRecord& episode);
    /// Computes GAE per episode. Must be called before entries() is used.
    void finalize(double gamma, double lambda, bool normalize);
    bool finalized() const { return finalized_; }
    void clear();

    std::size_t episodes() const { return episode_count_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const;

private:
    std::vector<Entry> entries_;
    std::vector<std::size_t> episode_starts_;
    std::size_t episode_count_ = 0;
    bool finalized_ = false;
};

/// Produces training episodes with the current networks (sampling actions).
class EpisodeSource {
public:
    virtual ~EpisodeSource() = default;
    virtual EpisodeRecord next_episode(const PolicyParams& policy, const ValueParams& value,
                                       std::mt19937_64& rng) = 0;
};

/// Draws problems uniformly from a fixed set and runs them through an
/// orchestrator with the learned policy.
class OrchestratorSource final : public EpisodeSource {
public:
    OrchestratorSource(const Orchestrator& orchestrator, std::vector<Problem> problems,
                       EpisodeOptions options, PlanningMode mode = PlanningMode::PickMetaStrategy);

    EpisodeRecord next_episode(const PolicyParams& policy, const ValueParams& value,
                               std::mt19937_64& rng) override;

private:
    const Orchestrator& orchestrator_;
    std::vector<Problem> problems_;
    EpisodeOptions options_;
    PlanningMode mode_;
};

struct UpdateMetrics {
    std::int64_t step = 0;
    double mean_reward = 0.0;
    double accuracy = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double lr = 0.0;
    bool policy_updated = false;
    bool aborted = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const UpdateMetrics& m);

/// PPO over an episode source. State lives in a Checkpoint so a run can be
/// saved and resumed at any update boundary.
class PpoTrainer {
public:
    PpoTrainer(Checkpoint state, PpoConfig config, std::uint64_t seed);

    /// Collects one buffer and applies one update. Returns nullopt once
    /// total_env_steps is reached.
    std::optional<UpdateMetrics> step(EpisodeSource& source);

    /// Runs to completion; `on_update` sees each update's metrics.
    std::vector<UpdateMetrics> train(EpisodeSource& source,
                                     const std::function<void(const UpdateMetrics&, const PpoTrainer&)>& on_update = {});

    /// True once the remaining step budget cannot fit one more full episode.
    bool done() const;
    /// Snapshot including the generator state.
    Checkpoint checkpoint() const;
    const PolicyParams& policy() const { return state_.policy; }
    const ValueParams& value() const { return state_.value; }
    std::int64_t env_steps() const { return state_.env_steps; }
    const PpoConfig& config() const { return config_; }

private:
    UpdateMetrics update(RolloutBuffer& buffer, std::int64_t steps_after);

    Checkpoint state_;
    PpoConfig config_;
    std::mt19937_64 rng_;
};

}  // namespace coplanner
