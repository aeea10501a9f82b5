#include "coplanner/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "coplanner/errors.hpp"
#include "coplanner/strategy_pool.hpp"

namespace coplanner {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

std::size_t sample_index(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<std::size_t>(i);
    }
    return static_cast<std::size_t>(probs.size() - 1);
}

std::size_t argmax_index(const Eigen::VectorXd& values) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return static_cast<std::size_t>(best);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

std::string_view mode_name(PlanningMode mode) {
    return mode == PlanningMode::PickHint ? "pick-hint" : "pick-strategy";
}

PlanningMode mode_from_name(std::string_view name) {
    if (name == "pick-strategy") return PlanningMode::PickMetaStrategy;
    if (name == "pick-hint") return PlanningMode::PickHint;
    throw ConfigError("unknown mode '" + std::string(name) + "' (valid: pick-strategy, pick-hint)");
}

std::string_view reward_scheme_name(RewardScheme scheme) {
    return scheme == RewardScheme::ZeroOne ? "zero-one" : "pm1";
}

RewardScheme reward_scheme_from_name(std::string_view name) {
    if (name == "pm1") return RewardScheme::PlusMinusOne;
    if (name == "zero-one") return RewardScheme::ZeroOne;
    throw ConfigError("unknown reward scheme '" + std::string(name) + "' (valid: pm1, zero-one)");
}

double terminal_reward(bool correct, RewardScheme scheme) {
    if (correct) return 1.0;
    return scheme == RewardScheme::PlusMinusOne ? -1.0 : 0.0;
}

PlannerPolicy PlannerPolicy::learned(std::shared_ptr<const PolicyParams> params, PlanningMode mode) {
    PlannerPolicy p;
    p.kind = PolicyKind::Learned;
    p.mode = mode;
    p.params = std::move(params);
    return p;
}

PlannerPolicy PlannerPolicy::random(PlanningMode mode) {
    PlannerPolicy p;
    p.kind = PolicyKind::Random;
    p.mode = mode;
    return p;
}

PlannerPolicy PlannerPolicy::cot() {
    PlannerPolicy p;
    p.kind = PolicyKind::CoTPrompted;
    return p;
}

PlannerPolicy PlannerPolicy::tot(ToTConfig config) {
    PlannerPolicy p;
    p.kind = PolicyKind::ToTSearch;
    p.tot_config = config;
    return p;
}

void PlannerPolicy::validate() const {
    if (kind == PolicyKind::Learned && !params) throw ConfigError("learned policy needs parameters");
    if ((kind == PolicyKind::CoTPrompted || kind == PolicyKind::ToTSearch) && mode != PlanningMode::PickMetaStrategy)
        throw ConfigError("CoT and ToT policies select strategies; use pick-strategy mode");
    if (raw_instruction_hints && mode != PlanningMode::PickMetaStrategy)
        throw ConfigError("raw instruction hints apply to pick-strategy mode only");
    if (unconditioned_hints && mode != PlanningMode::PickHint)
        throw ConfigError("unconditioned hints apply to pick-hint mode only");
    if (kind == PolicyKind::ToTSearch && (tot_config.hint_samples == 0 || tot_config.hint_samples > kNumStrategies - 1))
        throw ConfigError("ToT hint_samples must be in [1, 9]");
}

std::size_t select_best_hint(const std::vector<std::array<int, 5>>& scores) {
    if (scores.empty()) throw UsageError("select_best_hint: no candidates");
    // Equal denominators, so comparing sums compares means without rounding.
    std::size_t best = 0;
    int best_sum = std::accumulate(scores[0].begin(), scores[0].end(), 0);
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const int sum = std::accumulate(scores[i].begin(), scores[i].end(), 0);
        if (sum > best_sum) {
            best = i;
            best_sum = sum;
        }
    }
    return best;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 0x5851f42d4c957f2dull));
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

// ---- Orchestrator -----------------------------------------------------------------

Orchestrator::Orchestrator(const Gateway& gateway) : gateway_(gateway) {
    const auto& pool = StrategyPool::canonical();
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto e = gateway_.embed(instruction_text(pool.at(i)));
        if (i == 0) strategy_embeddings_.resize(e.size(), static_cast<Eigen::Index>(pool.size()));
        if (e.size() != strategy_embeddings_.rows()) throw ShapeError("strategy embeddings disagree in dimension");
        strategy_embeddings_.col(static_cast<Eigen::Index>(i)) = e;
    }
}

std::string Orchestrator::generate(const std::string& role, const GenerationRequest& request,
                                   std::vector<Exchange>* log) const {
    auto completion = gateway_.generate(request);
    if (log) log->push_back({role, request.prompt, completion});
    return completion;
}

template <class Render>
std::string Orchestrator::generate_fitting(const std::string& role, const DialogueState& state, Render&& render,
                                           double temperature, std::optional<std::uint64_t> seed, int max_tokens,
                                           bool& truncated, std::vector<Exchange>* log) const {
    const auto query = render_query(state.problem());
    const auto& rounds = state.rounds();
    for (std::size_t drop = 0;; ++drop) {
        const std::vector<RoundRecord> kept(rounds.begin() + static_cast<std::ptrdiff_t>(drop), rounds.end());
        GenerationRequest request{render(query, render_thoughts(kept)), temperature, max_tokens, seed};
        try {
            return generate(role, request, log);
        } catch (const BackendError& e) {
            if (!e.is_context_overflow() || drop >= rounds.size()) throw;
            truncated = true;
        }
    }
}

MetaStrategy Orchestrator::select_strategy_cot(const DialogueState& state, std::mt19937_64& rng, bool& fell_back,
                                               std::vector<Exchange>* log) const {
    const auto prompt =
        prompts::render_strategy_selection_prompt(render_query(state.problem()), render_thoughts(state.rounds()));
    const auto completion = generate("planner/select", {prompt, 0.0, 256, std::nullopt}, log);
    fell_back = false;
    if (auto s = prompts::parse_strategy_choice(completion)) return *s;
    fell_back = true;
    return StrategyPool::canonical().at(uniform_index(rng, kNumStrategies));
}

Orchestrator::TotChoice Orchestrator::select_hint_tot(const DialogueState& state, const ToTConfig& config,
                                                      std::mt19937_64& rng, int max_tokens,
                                                      std::vector<Exchange>* log) const {
    std::vector<MetaStrategy> pool;
    for (auto s : StrategyPool::canonical().entries())
        if (s != MetaStrategy::Finish) pool.push_back(s);
    for (std::size_t i = 0; i < config.hint_samples; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);

    const auto query = render_query(state.problem());
    const auto thoughts = render_thoughts(state.rounds());
    std::vector<TotChoice> options;
    TotChoice result{};
    for (std::size_t i = 0; i < config.hint_samples; ++i) {
        TotChoice c{pool[i], {}, {}, {}, 0};
        c.hint = generate("planner/hint",
                          {prompts::render_hint_prompt(query, thoughts, instruction_text(c.strategy)),
                           config.hint_temperature, max_tokens, rng()},
                          log);
        c.thought = generate("reasoner/step", {prompts::render_reasoning_prompt(query, thoughts, c.hint), 0.0, max_tokens, std::nullopt}, log);
        std::array<int, 5> scores{};
        for (std::size_t a = 0; a < prompts::kAllAspects.size(); ++a) {
            const auto aspect = prompts::kAllAspects[a];
            const auto completion = generate(
                "planner/score",
                {prompts::render_score_prompt(aspect, query, thoughts, c.hint, c.thought), 0.0, 64, std::nullopt}, log);
            const auto score = prompts::parse_score(completion);
            if (!score) ++result.unparsed;
            scores[a] = score.value_or(2);
        }
        result.scores.push_back(scores);
        options.push_back(std::move(c));
    }
    const auto best = select_best_hint(result.scores);
    result.strategy = options[best].strategy;
    result.hint = std::move(options[best].hint);
    result.thought = std::move(options[best].thought);
    return result;
}

EpisodeRecord Orchestrator::run_episode(const Problem& problem, const PlannerPolicy& policy,
                                        const EpisodeOptions& options, std::mt19937_64& rng) const {
    policy.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto& pool = StrategyPool::canonical();
    EpisodeRecord ep;
    ep.problem_id = problem.id;
    ep.gold = problem.gold;
    auto* log = options.keep_log ? &ep.log : nullptr;
    DialogueState state(std::make_shared<const Problem>(problem));
    const bool need_embeddings = options.record_embeddings || policy.kind == PolicyKind::Learned || options.value;
    const Eigen::VectorXd finish_embedding = strategy_embeddings_.col(static_cast<Eigen::Index>(pool.index_of(MetaStrategy::Finish)));

    try {
        for (;;) {
            const std::size_t round = state.round_index();
            const bool forced = round >= options.max_rounds;
            Transition tr;
            std::optional<MetaStrategy> chosen;
            std::string hint;
            std::optional<std::string> thought;

            if (need_embeddings) tr.obs_embedding = gateway_.embed(state_render(state));

            if (forced) {
                chosen = MetaStrategy::Finish;
                if (need_embeddings) tr.action_embeddings = finish_embedding;
            } else if (policy.mode == PlanningMode::PickMetaStrategy) {
                if (need_embeddings) tr.action_embeddings = strategy_embeddings_;
                switch (policy.kind) {
                    case PolicyKind::Learned: {
                        const auto cache = policy_forward(*policy.params, tr.obs_embedding, tr.action_embeddings);
                        tr.action_index = options.selection == ActionSelection::Sample ? sample_index(cache.probs, rng)
                                                                                       : argmax_index(cache.probs);
                        tr.log_prob = std::log(cache.probs[static_cast<Eigen::Index>(tr.action_index)]);
                        break;
                    }
                    case PolicyKind::Random: {
                        const bool skip_finish = policy.exclude_finish_at_round0 && round == 0;
                        const std::size_t n = skip_finish ? kNumStrategies - 1 : kNumStrategies;
                        std::size_t k = uniform_index(rng, n);
                        if (skip_finish && k >= pool.index_of(MetaStrategy::Finish)) ++k;
                        tr.action_index = k;
                        tr.log_prob = -std::log(static_cast<double>(n));
                        break;
                    }
                    case PolicyKind::CoTPrompted: {
                        bool fell_back = false;
                        tr.action_index = pool.index_of(select_strategy_cot(state, rng, fell_back, log));
                        if (fell_back) ++ep.cot_fallbacks;
                        break;
                    }
                    case PolicyKind::ToTSearch: {
                        auto choice = select_hint_tot(state, policy.tot_config, rng, options.max_tokens, log);
                        ep.unparsed_scores += choice.unparsed;
                        tr.action_index = pool.index_of(choice.strategy);
                        hint = std::move(choice.hint);
                        thought = std::move(choice.thought);
                        break;
                    }
                }
                chosen = pool.at(tr.action_index);
                if (*chosen != MetaStrategy::Finish && hint.empty()) {
                    if (policy.raw_instruction_hints) {
                        hint = instruction_text(*chosen);
                    } else {
                        hint = generate_fitting(
                            "planner/hint", state,
                            [&](const std::string& q, const std::string& th) {
                                return prompts::render_hint_prompt(q, th, instruction_text(*chosen));
                            },
                            options.hint_temperature, std::nullopt, options.max_tokens, ep.truncated, log);
                    }
                }
            } else {
                // Pick Hint: the candidates are concrete hints.
                std::vector<std::optional<MetaStrategy>> strategies;
                std::vector<std::string> hints;
                for (std::size_t i = 0; i < kNumStrategies; ++i) {
                    std::optional<MetaStrategy> s;
                    if (!policy.unconditioned_hints) s = pool.at(i);
                    const double temperature = s ? options.hint_temperature : options.unconditioned_temperature;
                    const std::optional<std::uint64_t> seed = s ? std::nullopt : std::optional<std::uint64_t>(rng());
                    hints.push_back(generate_fitting(
                        "planner/hint", state,
                        [&](const std::string& q, const std::string& th) {
                            return prompts::render_hint_prompt(q, th, s ? instruction_text(*s) : std::string_view());
                        },
                        temperature, seed, options.max_tokens, ep.truncated, log));
                    strategies.push_back(s);
                }
                if (need_embeddings) {
                    tr.action_embeddings.resize(tr.obs_embedding.size(), static_cast<Eigen::Index>(hints.size()));
                    for (std::size_t i = 0; i < hints.size(); ++i)
                        tr.action_embeddings.col(static_cast<Eigen::Index>(i)) = gateway_.embed(hints[i]);
                }
                if (policy.kind == PolicyKind::Learned) {
                    const auto cache = policy_forward(*policy.params, tr.obs_embedding, tr.action_embeddings);
                    tr.action_index = options.selection == ActionSelection::Sample ? sample_index(cache.probs, rng)
                                                                                   : argmax_index(cache.probs);
                    tr.log_prob = std::log(cache.probs[static_cast<Eigen::Index>(tr.action_index)]);
                } else {
                    const bool skip_finish = policy.exclude_finish_at_round0 && round == 0 && !policy.unconditioned_hints;
                    const std::size_t n = skip_finish ? hints.size() - 1 : hints.size();
                    std::size_t k = uniform_index(rng, n);
                    if (skip_finish && k >= pool.index_of(MetaStrategy::Finish)) ++k;
                    tr.action_index = k;
                    tr.log_prob = -std::log(static_cast<double>(n));
                }
                chosen = strategies[tr.action_index];
                hint = hints[tr.action_index];
            }

            if (options.value && need_embeddings) tr.value_estimate = value_forward(*options.value, tr.obs_embedding).output;

            if (chosen == MetaStrategy::Finish) {
                const auto completion = generate_fitting(
                    "reasoner/final", state,
                    [](const std::string& q, const std::string& th) {
                        return prompts::render_reasoning_prompt(q, th, instruction_text(MetaStrategy::Finish));
                    },
                    0.0, std::nullopt, options.max_tokens, ep.truncated, log);
                ep.extracted_answer = prompts::extract_answer(completion, problem.labels());
                ep.malformed = !ep.extracted_answer;
                ep.correct = answer_match(ep.extracted_answer, problem.gold);
                tr.reward = terminal_reward(ep.correct, options.reward);
                tr.done = true;
                ep.transitions.push_back(std::move(tr));
                ep.rounds = state.rounds();
                ep.rounds.push_back({MetaStrategy::Finish, std::string(instruction_text(MetaStrategy::Finish)), completion});
                break;
            }

            if (!thought) {
                thought = generate_fitting(
                    "reasoner/step", state,
                    [&](const std::string& q, const std::string& th) { return prompts::render_reasoning_prompt(q, th, hint); },
                    0.0, std::nullopt, options.max_tokens, ep.truncated, log);
            }
            ep.transitions.push_back(std::move(tr));
            state = state.with_round({chosen, std::move(hint), std::move(*thought)});
        }
    } catch (const BackendError&) {
        ep.failed = true;
    } catch (const TransportError&) {
        ep.failed = true;
    } catch (const ParseError&) {
        ep.failed = true;
    }
    if (ep.failed) {
        ep.correct = false;
        ep.extracted_answer.reset();
        ep.rounds = state.rounds();
        ep.transitions.resize(std::min(ep.transitions.size(), ep.rounds.size()));
    }
    ep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return ep;
}

EpisodeRecord Orchestrator::run_prompt_baseline(const Problem& problem, prompts::PromptBaseline mode,
                                                const std::vector<Problem>& demos, RewardScheme,
                                                int max_tokens) const {
    const auto started = std::chrono::steady_clock::now();
    EpisodeRecord ep;
    ep.problem_id = problem.id;
    ep.gold = problem.gold;
    const auto prompt = prompts::render_baseline_prompt(mode, problem, demos);
    try {
        const auto completion = generate(std::string("baseline/") + std::string(prompts::baseline_name(mode)),
                                         {prompt, 0.0, max_tokens, std::nullopt}, &ep.log);
        ep.extracted_answer = prompts::extract_answer(completion, problem.labels());
        ep.malformed = !ep.extracted_answer;
        ep.correct = answer_match(ep.extracted_answer, problem.gold);
    } catch (const BackendError&) {
        ep.failed = true;
    } catch (const TransportError&) {
        ep.failed = true;
    } catch (const ParseError&) {
        ep.failed = true;
    }
    ep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return ep;
}

namespace {

void aggregate(EvalReport& report, bool exclude_failed) {
    double rounds = 0.0;
    double wall = 0.0;
    for (const auto& e : report.episodes) {
        rounds += static_cast<double>(e.rounds.size());
        wall += e.wall_ms;
        if (exclude_failed && e.failed) continue;
        ++report.counted;
        if (e.correct) ++report.correct;
    }
    const auto n = static_cast<double>(report.episodes.size());
    report.accuracy = report.counted ? static_cast<double>(report.correct) / static_cast<double>(report.counted) : 0.0;
    report.mean_rounds = n > 0 ? rounds / n : 0.0;
    report.mean_wall_ms = n > 0 ? wall / n : 0.0;
}

std::string policy_label(const PlannerPolicy& policy) {
    std::string name;
    switch (policy.kind) {
        case PolicyKind::Learned: name = "learned"; break;
        case PolicyKind::Random: name = "random"; break;
        case PolicyKind::CoTPrompted: name = "cot"; break;
        case PolicyKind::ToTSearch: name = "tot"; break;
    }
    name += "/" + std::string(mode_name(policy.mode));
    if (policy.raw_instruction_hints) name += "/no-hint";
    if (policy.unconditioned_hints) name += "/no-strategy";
    return name;
}

}  // namespace

EvalReport Orchestrator::evaluate(const std::vector<Problem>& problems, const PlannerPolicy& policy,
                                  const EvalOptions& options) const {
    if (problems.empty()) throw ConfigError("evaluation needs at least one problem");
    policy.validate();
    EvalReport report;
    report.policy = policy_label(policy);
    report.max_rounds = options.episode.max_rounds;
    report.episodes.resize(problems.size());
    parallel_for(problems.size(), options.workers, [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(options.seed, i));
        report.episodes[i] = run_episode(problems[i], policy, options.episode, rng);
    });
    aggregate(report, options.exclude_failed);
    return report;
}

EvalReport Orchestrator::evaluate_baseline(const std::vector<Problem>& problems, prompts::PromptBaseline mode,
                                           const std::vector<Problem>& demos, const EvalOptions& options) const {
    if (problems.empty()) throw ConfigError("evaluation needs at least one problem");
    if (mode == prompts::PromptBaseline::FewShot && demos.empty())
        throw ConfigError("few-shot prompting needs at least one demonstration");
    EvalReport report;
    report.policy = std::string(prompts::baseline_name(mode));
    report.max_rounds = 0;
    report.episodes.resize(problems.size());
    parallel_for(problems.size(), options.workers, [&](std::size_t i) {
        report.episodes[i] = run_prompt_baseline(problems[i], mode, demos, options.episode.reward, options.episode.max_tokens);
    });
    aggregate(report, options.exclude_failed);
    return report;
}

nlohmann::json EvalReport::to_json(bool with_episodes) const {
    nlohmann::json j = {{"policy", policy},
                        {"max_rounds", max_rounds},
                        {"total", episodes.size()},
                        {"counted", counted},
                        {"correct", correct},
                        {"accuracy", accuracy},
                        {"mean_rounds", mean_rounds},
                        {"mean_wall_ms", mean_wall_ms}};
    if (with_episodes) {
        nlohmann::json eps = nlohmann::json::array();
        for (const auto& e : episodes) eps.push_back(episode_to_json(e, false, true));
        j["episodes"] = std::move(eps);
    }
    return j;
}

std::string EvalReport::table() const {
    std::ostringstream os;
    os << std::left << std::setw(36) << "policy" << std::setw(8) << "rounds" << std::setw(10) << "accuracy"
       << std::setw(12) << "correct" << std::setw(12) << "mean_dec" << "ms/problem\n";
    os << std::setw(36) << policy << std::setw(8) << max_rounds << std::setw(10) << std::fixed << std::setprecision(4)
       << accuracy << std::setw(12) << (std::to_string(correct) + "/" + std::to_string(counted)) << std::setw(12)
       << std::setprecision(2) << mean_rounds << std::setprecision(3) << mean_wall_ms << "\n";
    return os.str();
}

}  // namespace coplanner
