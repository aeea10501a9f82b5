#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coplanner/domain.hpp"
#include "coplanner/llm_gateway.hpp"
#include "coplanner/nets.hpp"
#include "coplanner/prompts.hpp"

namespace coplanner {

enum class PlanningMode { PickMetaStrategy, PickHint };
enum class PolicyKind { Learned, Random, CoTPrompted, ToTSearch };
enum class ActionSelection { Sample, Greedy };
enum class RewardScheme { PlusMinusOne, ZeroOne };

std::string_view mode_name(PlanningMode mode);
PlanningMode mode_from_name(std::string_view name);
std::string_view reward_scheme_name(RewardScheme scheme);
RewardScheme reward_scheme_from_name(std::string_view name);

double terminal_reward(bool correct, RewardScheme scheme);

struct ToTConfig {
    std::size_t hint_samples = 3;
    double hint_temperature = 1.0;
};

/// Who picks the next strategy or hint, and over which action space.
struct PlannerPolicy {
    PolicyKind kind = PolicyKind::Random;
    PlanningMode mode = PlanningMode::PickMetaStrategy;
    std::shared_ptr<const PolicyParams> params;  // Learned only
    ToTConfig tot_config;
    bool raw_instruction_hints = false;  // "Pick Meta-strategy w/o Hint"
    bool unconditioned_hints = false;    // "Pick Hint w/o Meta-strategy"
    bool exclude_finish_at_round0 = false;

    static PlannerPolicy learned(std::shared_ptr<const PolicyParams> params,
                                 PlanningMode mode = PlanningMode::PickMetaStrategy);
    static PlannerPolicy random(PlanningMode mode = PlanningMode::PickMetaStrategy);
    static PlannerPolicy cot();
    static PlannerPolicy tot(ToTConfig config = {});

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

struct EpisodeOptions {
    std::size_t max_rounds = 2;
    ActionSelection selection = ActionSelection::Greedy;
    RewardScheme reward = RewardScheme::PlusMinusOne;
    double hint_temperature = 0.0;
    double unconditioned_temperature = 1.0;
    int max_tokens = 512;
    bool record_embeddings = false;
    bool keep_log = true;
    const ValueParams* value = nullptr;  // fills Transition::value_estimate
};

/// Index of the hint with the highest mean aspect score; ties go to the
/// lowest index.
std::size_t select_best_hint(const std::vector<std::array<int, 5>>& scores);

struct EvalOptions {
    EpisodeOptions episode;
    std::uint64_t seed = 0;
    bool exclude_failed = false;
    std::size_t workers = 1;
};

struct EvalReport {
    std::string policy;
    std::size_t max_rounds = 0;
    std::vector<EpisodeRecord> episodes;
    std::size_t correct = 0;
    std::size_t counted = 0;
    double accuracy = 0.0;
    double mean_rounds = 0.0;
    double mean_wall_ms = 0.0;

    nlohmann::json to_json(bool with_episodes) const;
    std::string table() const;
};

/// Runs the two-agent protocol against a gateway.
class Orchestrator {
public:
    explicit Orchestrator(const Gateway& gateway);

    const Gateway& gateway() const { return gateway_; }
    /// Embeddings of the strategy instruction texts, one column per pool entry.
    const Eigen::MatrixXd& strategy_embeddings() const { return strategy_embeddings_; }

    EpisodeRecord run_episode(const Problem& problem, const PlannerPolicy& policy,
                              const EpisodeOptions& options, std::mt19937_64& rng) const;

    /// Asks the planner LM to name a strategy; falls back to a uniform pick
    /// (and sets `fell_back`) when none is named.
    MetaStrategy select_strategy_cot(const DialogueState& state, std::mt19937_64& rng, bool& fell_back,
                                     std::vector<Exchange>* log = nullptr) const;

    struct TotChoice {
        MetaStrategy strategy;
        std::string hint;
        std::string thought;
        std::vector<std::array<int, 5>> scores;
        int unparsed = 0;
    };
    TotChoice select_hint_tot(const DialogueState& state, const ToTConfig& config, std::mt19937_64& rng,
                              int max_tokens, std::vector<Exchange>* log = nullptr) const;

    EpisodeRecord run_prompt_baseline(const Problem& problem, prompts::PromptBaseline mode,
                                      const std::vector<Problem>& demos, RewardScheme reward,
                                      int max_tokens = 512) const;

    /// One episode per problem. Episode i draws from a generator seeded by
    /// (seed, i), so results do not depend on the worker count.
    EvalReport evaluate(const std::vector<Problem>& problems, const PlannerPolicy& policy,
                        const EvalOptions& options) const;
    EvalReport evaluate_baseline(const std::vector<Problem>& problems, prompts::PromptBaseline mode,
                                 const std::vector<Problem>& demos, const EvalOptions& options) const;

private:
    std::string generate(const std::string& role, const GenerationRequest& request,
                         std::vector<Exchange>* log) const;
    /// Renders with the full history; on a context-overflow rejection drops
    /// the oldest thought and retries.
    template <class Render>
    std::string generate_fitting(const std::string& role, const DialogueState& state, Render&& render,
                                 double temperature, std::optional<std::uint64_t> seed, int max_tokens,
                                 bool& truncated, std::vector<Exchange>* log) const;

    const Gateway& gateway_;
    Eigen::MatrixXd strategy_embeddings_;
};

/// Splits `count` items across up to `workers` threads, calling fn(i).
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Derives an independent generator seed for item `index` of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace coplanner
