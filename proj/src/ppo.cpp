#include "coplanner/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "coplanner/errors.hpp"

namespace coplanner {

void PpoConfig::validate() const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("clip_epsilon must be in (0, 1)");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0, 1]");
    if (gae_lambda < 0.0 || gae_lambda > 1.0) throw ConfigError("gae_lambda must be in [0, 1]");
    if (ppo_epochs == 0) throw ConfigError("ppo_epochs must be positive");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (episodes_per_update == 0) throw ConfigError("episodes_per_update must be positive");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (total_env_steps < 0 || warmup_freeze_steps < 0) throw ConfigError("step counts must be non-negative");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                      double lambda) {
    const std::size_t T = rewards.size();
    if (values.size() != T + 1)
        throw ShapeError("compute_gae: values has " + std::to_string(values.size()) + " entries, expected " +
                         std::to_string(T + 1));
    GaeResult out;
    out.advantages.assign(T, 0.0);
    out.returns.assign(T, 0.0);
    double next = 0.0;
    for (std::size_t i = T; i-- > 0;) {
        const double delta = rewards[i] + gamma * values[i + 1] - values[i];
        next = delta + gamma * lambda * next;
        out.advantages[i] = next;
        out.returns[i] = next + values[i];
    }
    return out;
}

PolicyLossResult ppo_policy_loss(std::span<const double> old_log_probs, std::span<const double> new_log_probs,
                                 std::span<const double> advantages, double epsilon,
                                 std::span<const double> entropies, double entropy_coef) {
    const std::size_t n = old_log_probs.size();
    if (new_log_probs.size() != n || advantages.size() != n)
        throw ShapeError("ppo_policy_loss: mismatched batch lengths");
    if (!entropies.empty() && entropies.size() != n) throw ShapeError("ppo_policy_loss: entropies length mismatch");
    PolicyLossResult out;
    out.grad_log_prob.assign(n, 0.0);
    if (n == 0) return out;
    const double inv = 1.0 / static_cast<double>(n);
    std::size_t clipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = std::exp(new_log_probs[i] - old_log_probs[i]);
        if (!std::isfinite(r)) throw TrainingError("non-finite probability ratio");
        const double a = advantages[i];
        const double unclipped = r * a;
        const double clipped_obj = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon) * a;
        if (std::abs(r - 1.0) > epsilon) ++clipped;
        if (unclipped <= clipped_obj) {
            out.loss -= unclipped * inv;
            out.grad_log_prob[i] = -a * r * inv;  // d(r A)/d log p = r A
        } else {
            out.loss -= clipped_obj * inv;  // constant in the new log-prob
        }
    }
    if (!entropies.empty() && entropy_coef != 0.0) {
        for (double h : entropies) out.loss -= entropy_coef * h * inv;
        out.entropy_grad_scale = -entropy_coef * inv;
    }
    out.clip_fraction = static_cast<double>(clipped) * inv;
    return out;
}

ValueLossResult value_loss(std::span<const double> predictions, std::span<const double> returns, double coef) {
    if (predictions.size() != returns.size()) throw ShapeError("value_loss: mismatched lengths");
    ValueLossResult out;
    out.grad.assign(predictions.size(), 0.0);
    if (predictions.empty()) return out;
    const double inv = 1.0 / static_cast<double>(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double diff = predictions[i] - returns[i];
        out.loss += coef * diff * diff * inv;
        out.grad[i] = 2.0 * coef * diff * inv;
    }
    return out;
}

double linear_lr(double lr0, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return 0.0;
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * std::clamp(frac, 0.0, 1.0);
}

// ---- buffer -----------------------------------------------------------------------

void RolloutBuffer::add_episode(const EpisodeRecord& episode) {
    if (finalized_) throw UsageError("rollout buffer already finalized; clear it first");
    if (episode.failed || episode.transitions.empty()) return;
    if (!episode.transitions.back().done) throw UsageError("episode " + episode.problem_id + " has no terminal transition");
    episode_starts_.push_back(entries_.size());
    for (const auto& t : episode.transitions) entries_.push_back({t, 0.0, 0.0});
    ++episode_count_;
}

void RolloutBuffer::finalize(double gamma, double lambda, bool normalize) {
    for (std::size_t e = 0; e < episode_starts_.size(); ++e) {
        const std::size_t begin = episode_starts_[e];
        const std::size_t end = e + 1 < episode_starts_.size() ? episode_starts_[e + 1] : entries_.size();
        std::vector<double> rewards, values;
        for (std::size_t i = begin; i < end; ++i) {
            rewards.push_back(entries_[i].transition.reward);
            values.push_back(entries_[i].transition.value_estimate);
        }
        values.push_back(0.0);
        const auto gae = compute_gae(rewards, values, gamma, lambda);
        for (std::size_t i = begin; i < end; ++i) {
            entries_[i].advantage = gae.advantages[i - begin];
            entries_[i].ret = gae.returns[i - begin];
        }
    }
    if (normalize && entries_.size() > 1) {
        double mean = 0.0;
        for (const auto& e : entries_) mean += e.advantage;
        mean /= static_cast<double>(entries_.size());
        double var = 0.0;
        for (const auto& e : entries_) var += (e.advantage - mean) * (e.advantage - mean);
        const double sd = std::sqrt(var / static_cast<double>(entries_.size()));
        for (auto& e : entries_) e.advantage = (e.advantage - mean) / (sd + 1e-8);
    }
    finalized_ = true;
}

void RolloutBuffer::clear() {
    entries_.clear();
    episode_starts_.clear();
    episode_count_ = 0;
    finalized_ = false;
}

const std::vector<RolloutBuffer::Entry>& RolloutBuffer::entries() const {
    if (!finalized_) throw UsageError("rollout buffer read before finalize()");
    return entries_;
}

// ---- episode source ------------------------------------------------------------------

OrchestratorSource::OrchestratorSource(const Orchestrator& orchestrator, std::vector<Problem> problems,
                                       EpisodeOptions options, PlanningMode mode)
    : orchestrator_(orchestrator), problems_(std::move(problems)), options_(options), mode_(mode) {
    if (problems_.empty()) throw ConfigError("PPO needs at least one training problem");
    options_.selection = ActionSelection::Sample;
    options_.record_embeddings = true;
}

EpisodeRecord OrchestratorSource::next_episode(const PolicyParams& policy, const ValueParams& value,
                                               std::mt19937_64& rng) {
    const auto& problem = problems_[static_cast<std::size_t>(rng() % problems_.size())];
    const auto planner = PlannerPolicy::learned(std::make_shared<const PolicyParams>(policy), mode_);
    auto options = options_;
    options.value = &value;
    return orchestrator_.run_episode(problem, planner, options, rng);
}

// ---- metrics ---------------------------------------------------------------------------

std::string metrics_csv_header() {
    return "step,mean_reward,accuracy,policy_loss,value_loss,entropy,clip_fraction,lr";
}

std::string metrics_csv_row(const UpdateMetrics& m) {
    std::ostringstream os;
    os << std::setprecision(10) << m.step << ',' << m.mean_reward << ',' << m.accuracy << ',' << m.policy_loss << ','
       << m.value_loss << ',' << m.entropy << ',' << m.clip_fraction << ',' << m.lr;
    return os.str();
}

// ---- trainer ------------------------------------------------------------------------------

PpoTrainer::PpoTrainer(Checkpoint state, PpoConfig config, std::uint64_t seed)
    : state_(std::move(state)), config_(config), rng_(seed) {
    config_.validate();
    if (!state_.rng_state.empty()) {
        std::istringstream is(state_.rng_state);
        is >> rng_;
        if (!is) throw ConfigError("checkpoint holds a malformed generator state");
    }
}

bool PpoTrainer::done() const {
    return state_.env_steps + static_cast<std::int64_t>(config_.max_rounds) + 1 > config_.total_env_steps;
}

Checkpoint PpoTrainer::checkpoint() const {
    Checkpoint c = state_;
    std::ostringstream os;
    os << rng_;
    c.rng_state = os.str();
    return c;
}

std::optional<UpdateMetrics> PpoTrainer::step(EpisodeSource& source) {
    if (done()) return std::nullopt;
    const auto episode_budget = static_cast<std::int64_t>(config_.max_rounds) + 1;
    RolloutBuffer buffer;
    double reward_sum = 0.0;
    std::size_t correct = 0;
    std::size_t attempts = 0;
    while (buffer.episodes() < config_.episodes_per_update &&
           state_.env_steps + episode_budget <= config_.total_env_steps) {
        if (++attempts > 10 * config_.episodes_per_update)
            throw TrainingError("too many failed episodes while filling the rollout buffer");
        const auto ep = source.next_episode(state_.policy, state_.value, rng_);
        state_.env_steps += static_cast<std::int64_t>(ep.transitions.size());
        if (ep.failed) continue;
        buffer.add_episode(ep);
        for (const auto& t : ep.transitions) reward_sum += t.reward;
        if (ep.correct) ++correct;
    }
    if (buffer.episodes() == 0) return std::nullopt;

    auto metrics = update(buffer, state_.env_steps);
    metrics.mean_reward = reward_sum / static_cast<double>(buffer.episodes());
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(buffer.episodes());
    ++state_.updates;
    return metrics;
}

std::vector<UpdateMetrics> PpoTrainer::train(
    EpisodeSource& source, const std::function<void(const UpdateMetrics&, const PpoTrainer&)>& on_update) {
    std::vector<UpdateMetrics> all;
    while (auto m = step(source)) {
        if (on_update) on_update(*m, *this);
        all.push_back(*m);
    }
    return all;
}

namespace {

struct PolicyEval {
    std::vector<double> log_probs;
    std::vector<double> entropies;
    std::vector<PolicyCache> caches;
};

PolicyEval evaluate_policy(const PolicyParams& params, const std::vector<RolloutBuffer::Entry>& entries,
                           std::span<const std::size_t> idx) {
    PolicyEval out;
    for (auto i : idx) {
        const auto& t = entries[i].transition;
        auto cache = policy_forward(params, t.obs_embedding, t.action_embeddings);
        out.log_probs.push_back(std::log(cache.probs[static_cast<Eigen::Index>(t.action_index)]));
        out.entropies.push_back(entropy(cache.probs));
        out.caches.push_back(std::move(cache));
    }
    return out;
}

double mean_ratio_deviation(const PolicyParams& params, const std::vector<RolloutBuffer::Entry>& entries) {
    double sum = 0.0;
    for (const auto& e : entries) {
        const auto& t = e.transition;
        const auto cache = policy_forward(params, t.obs_embedding, t.action_embeddings);
        sum += std::abs(cache.probs[static_cast<Eigen::Index>(t.action_index)] / std::exp(t.log_prob) - 1.0);
    }
    return entries.empty() ? 0.0 : sum / static_cast<double>(entries.size());
}

}  // namespace

UpdateMetrics PpoTrainer::update(RolloutBuffer& buffer, std::int64_t steps_after) {
    buffer.finalize(config_.gamma, config_.gae_lambda, config_.normalize_advantages);
    const auto& entries = buffer.entries();

    UpdateMetrics m;
    m.step = steps_after;
    m.lr = config_.lr_decay ? linear_lr(config_.lr, steps_after, config_.total_env_steps) : config_.lr;
    m.policy_updated = steps_after > config_.warmup_freeze_steps;

    const Checkpoint before = state_;
    const auto d = state_.policy.input_dim();
    const auto h = state_.policy.hidden_dim();
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);

    double policy_loss_sum = 0.0, value_loss_sum = 0.0, entropy_sum = 0.0, clip_sum = 0.0;
    std::size_t batches = 0;
    try {
        for (std::size_t epoch = 0; epoch < config_.ppo_epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng_);
            for (std::size_t start = 0; start < order.size(); start += config_.batch) {
                const std::span<const std::size_t> idx(order.data() + start,
                                                       std::min(config_.batch, order.size() - start));
                ++batches;

                std::vector<double> preds, rets;
                std::vector<ValueCache> vcaches;
                for (auto i : idx) {
                    vcaches.push_back(value_forward(state_.value, entries[i].transition.obs_embedding));
                    preds.push_back(vcaches.back().output);
                    rets.push_back(entries[i].ret);
                }
                const auto vl = value_loss(preds, rets, config_.value_loss_coef);
                auto vgrads = ValueParams::zeros(d, h);
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    const auto g = value_backward(state_.value, vcaches[k], vl.grad[k]);
                    vgrads.query_token += g.query_token;
                    vgrads.w_q += g.w_q;
                    vgrads.w_k += g.w_k;
                    vgrads.w_v += g.w_v;
                    vgrads.w_out += g.w_out;
                    vgrads.b_out += g.b_out;
                }
                state_.value_optimizer.step(state_.value, vgrads, m.lr, config_.grad_clip);
                value_loss_sum += vl.loss;

                const auto pe = evaluate_policy(state_.policy, entries, idx);
                std::vector<double> old_lp, adv;
                for (auto i : idx) {
                    old_lp.push_back(entries[i].transition.log_prob);
                    adv.push_back(entries[i].advantage);
                }
                const auto pl = ppo_policy_loss(old_lp, pe.log_probs, adv, config_.clip_epsilon, pe.entropies,
                                                config_.entropy_coef);
                policy_loss_sum += pl.loss;
                clip_sum += pl.clip_fraction;
                entropy_sum += std::accumulate(pe.entropies.begin(), pe.entropies.end(), 0.0) /
                               static_cast<double>(idx.size());
                if (!m.policy_updated) continue;

                auto pgrads = PolicyParams::zeros(d, h);
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    const auto& cache = pe.caches[k];
                    const Eigen::VectorXd dlogits =
                        log_prob_logit_grad(cache, entries[idx[k]].transition.action_index, pl.grad_log_prob[k]) +
                        entropy_logit_grad(cache, pl.entropy_grad_scale);
                    const auto g = policy_backward(state_.policy, cache, dlogits);
                    pgrads.w_q += g.w_q;
                    pgrads.w_k += g.w_k;
                }
                state_.policy_optimizer.step(state_.policy, pgrads, m.lr, config_.grad_clip);
            }
            if (m.policy_updated && mean_ratio_deviation(state_.policy, entries) > config_.divergence_threshold) {
                const auto env_steps = state_.env_steps;
                state_ = before;
                state_.env_steps = env_steps;
                m.aborted = true;
                break;
            }
        }
    } catch (const TrainingError&) {
        const auto env_steps = state_.env_steps;
        state_ = before;
        state_.env_steps = env_steps;
        throw;
    }
    if (batches > 0) {
        const auto n = static_cast<double>(batches);
        m.policy_loss = policy_loss_sum / n;
        m.value_loss = value_loss_sum / n;
        m.entropy = entropy_sum / n;
        m.clip_fraction = clip_sum / n;
    }
    return m;
}

}  // namespace coplanner
