#include <doctest.h>

#include <algorithm>

#include "coplanner/errors.hpp"
#include "coplanner/orchestrator.hpp"
#include "coplanner/scripted_world.hpp"
#include "coplanner/strategy_pool.hpp"
#include "oracles.hpp"

using namespace coplanner;

namespace {

constexpr std::size_t kDim = 16;
constexpr std::size_t kRoundSlots = 6;

// Scripted text, hand-picked embeddings: dims 0..9 one-hot the strategy an
// instruction or hint names; a dialogue state one-hots its round count in
// dims 10..15. Lets a test write a policy down exactly.
class ControlledWorld final : public Gateway {
public:
    explicit ControlledWorld(const Gateway& text) : text_(text) {}

    std::string generate(const GenerationRequest& request) const override { return text_.generate(request); }

    Embedding embed(std::string_view text) const override {
        Embedding e = Embedding::Zero(kDim);
        std::optional<MetaStrategy> s = strategy_from_instruction(text);
        if (!s && text.rfind("Hint:", 0) == 0)
            s = text.find("stop here") != std::string_view::npos ? MetaStrategy::Finish : prompts::parse_strategy_choice(text);
        if (s) {
            e[static_cast<Eigen::Index>(StrategyPool::canonical().index_of(*s))] = 1.0;
            return e;
        }
        std::size_t steps = 0;
        for (auto pos = text.find("\nStep "); pos != std::string_view::npos; pos = text.find("\nStep ", pos + 1)) ++steps;
        e[static_cast<Eigen::Index>(10 + std::min(steps, kRoundSlots - 1))] = 1.0;
        return e;
    }

    std::size_t embedding_dim() const override { return kDim; }
    std::string identity() const override { return "controlled"; }

private:
    const Gateway& text_;
};

// Picks plan[r] at round r, Finish once the plan runs out.
std::shared_ptr<const PolicyParams> plan_policy(const std::vector<MetaStrategy>& plan) {
    auto p = std::make_shared<PolicyParams>(PolicyParams::zeros(kDim, kRoundSlots));
    const auto& pool = StrategyPool::canonical();
    for (std::size_t r = 0; r < kRoundSlots; ++r) {
        p->w_q(static_cast<Eigen::Index>(10 + r), static_cast<Eigen::Index>(r)) = 1.0;
        const auto s = r < plan.size() ? plan[r] : MetaStrategy::Finish;
        p->w_k(static_cast<Eigen::Index>(pool.index_of(s)), static_cast<Eigen::Index>(r)) = 20.0;
    }
    return p;
}

Problem make_problem(const std::string& id, const std::string& question, char gold = 'A') {
    Problem p;
    p.id = id;
    p.question = question;
    p.options = {{'A', "alpha"}, {'B', "beta"}, {'C', "gamma"}, {'D', "delta"}};
    p.gold = gold;
    return p;
}

ScenarioConfig two_step_scenario() {
    ScenarioConfig c;
    c.embedding_dim = 8;
    c.problems.push_back({"q", "Which letter?", "ABCD", 'A', {MetaStrategy::Elimination, MetaStrategy::Deduction}, false, false});
    c.problems.push_back({"bad", "Broken question?", "ABCD", 'A', {MetaStrategy::Elimination}, false, true});
    return c;
}

struct Fixture {
    ScriptedWorld text{two_step_scenario()};
    ControlledWorld world{text};
    Orchestrator orch{world};
    Problem problem = make_problem("q", "Which letter?");
};

EpisodeOptions options_with(std::size_t max_rounds) {
    EpisodeOptions o;
    o.max_rounds = max_rounds;
    o.record_embeddings = true;
    return o;
}

}  // namespace

TEST_CASE("episode: Finish at round 0 is a single decision") {
    Fixture f;
    std::mt19937_64 rng(1);
    const auto ep = f.orch.run_episode(f.problem, PlannerPolicy::learned(plan_policy({})), options_with(2), rng);
    REQUIRE(ep.transitions.size() == 1);
    CHECK(ep.transitions[0].done);
    CHECK(ep.transitions[0].action_embeddings.cols() == 10);
    CHECK(ep.transitions[0].action_index == StrategyPool::canonical().index_of(MetaStrategy::Finish));
    CHECK(ep.transitions[0].reward == -1.0);
    REQUIRE(ep.rounds.size() == 1);
    CHECK(ep.rounds[0].is_finish());
    CHECK_FALSE(ep.correct);
}

TEST_CASE("episode: a policy that never finishes is stopped after max_rounds") {
    Fixture f;
    std::mt19937_64 rng(1);
    const auto policy = PlannerPolicy::learned(plan_policy({MetaStrategy::Analogy, MetaStrategy::Analogy, MetaStrategy::Analogy}));
    const auto ep = f.orch.run_episode(f.problem, policy, options_with(2), rng);
    REQUIRE(ep.transitions.size() == 3);
    CHECK_FALSE(ep.transitions[0].done);
    CHECK_FALSE(ep.transitions[1].done);
    const auto& last = ep.transitions[2];
    CHECK(last.done);
    CHECK(last.action_embeddings.cols() == 1);
    CHECK(last.log_prob == 0.0);
    CHECK(ep.rounds.size() == 3);
    CHECK(ep.rounds[0].strategy == MetaStrategy::Analogy);
    CHECK(ep.transitions[0].reward == 0.0);
}

TEST_CASE("episode: following the required sequence answers correctly") {
    Fixture f;
    std::mt19937_64 rng(1);
    auto options = options_with(2);
    options.reward = RewardScheme::ZeroOne;
    const auto ep = f.orch.run_episode(
        f.problem, PlannerPolicy::learned(plan_policy({MetaStrategy::Elimination, MetaStrategy::Deduction})), options, rng);
    CHECK(ep.correct);
    CHECK(ep.extracted_answer == 'A');
    CHECK(ep.transitions.back().reward == 1.0);
    CHECK(ep.rounds[0].thought.find("progress") != std::string::npos);
    CHECK(ep.rounds[1].thought.find("progress") != std::string::npos);
    // Greedy probabilities are near one, so the log-probs are near zero.
    CHECK(ep.transitions[0].log_prob > -1e-2);

    const auto wrong = f.orch.run_episode(
        f.problem, PlannerPolicy::learned(plan_policy({MetaStrategy::Deduction, MetaStrategy::Elimination})), options,
        rng);
    CHECK_FALSE(wrong.correct);
    CHECK(wrong.transitions.back().reward == 0.0);
}

TEST_CASE("episode: value estimates come from the value network") {
    Fixture f;
    std::mt19937_64 init(3);
    const auto value = ValueParams::init(kDim, 4, init);
    auto options = options_with(1);
    options.value = &value;
    std::mt19937_64 rng(1);
    const auto ep = f.orch.run_episode(f.problem, PlannerPolicy::random(), options, rng);
    for (const auto& t : ep.transitions)
        CHECK(t.value_estimate == doctest::Approx(value_forward(value, t.obs_embedding).output));
}

TEST_CASE("episode: backend failures end the episode as failed") {
    Fixture f;
    std::mt19937_64 rng(1);
    const auto ep = f.orch.run_episode(make_problem("bad", "Broken question?"), PlannerPolicy::random(), options_with(2), rng);
    CHECK(ep.failed);
    CHECK_FALSE(ep.correct);
    CHECK(ep.transitions.empty());
}

TEST_CASE("episode: context overflow drops the oldest thoughts") {
    Fixture f;
    const auto policy = PlannerPolicy::learned(plan_policy({MetaStrategy::Elimination, MetaStrategy::Deduction}));
    std::mt19937_64 rng(1);
    const auto full = f.orch.run_episode(f.problem, policy, options_with(2), rng);
    std::size_t longest = 0;
    for (const auto& x : full.log) longest = std::max(longest, x.prompt.size());

    auto tight = two_step_scenario();
    tight.max_prompt_chars = longest - 1;
    const ScriptedWorld text(tight);
    const ControlledWorld world(text);
    const Orchestrator orch(world);
    const auto ep = orch.run_episode(f.problem, policy, options_with(2), rng);
    CHECK(ep.truncated);
    CHECK_FALSE(ep.failed);
    CHECK(ep.transitions.size() == 3);
    for (const auto& x : ep.log) CHECK(x.prompt.size() <= longest - 1);

    tight.max_prompt_chars = 40;
    const ScriptedWorld tiny(tight);
    const ControlledWorld tiny_world(tiny);
    const Orchestrator tiny_orch(tiny_world);
    const auto failed = tiny_orch.run_episode(f.problem, policy, options_with(2), rng);
    CHECK(failed.failed);
}

TEST_CASE("cot planner: parses the named strategy, falls back when none") {
    Fixture f;
    std::mt19937_64 rng(1);
    const auto ep = f.orch.run_episode(f.problem, PlannerPolicy::cot(), options_with(1), rng);
    CHECK(ep.rounds[0].strategy == MetaStrategy::Enumeration);
    CHECK(ep.cot_fallbacks == 0);

    class Evasive final : public Gateway {
    public:
        explicit Evasive(const Gateway& inner) : inner_(inner) {}
        std::string generate(const GenerationRequest& r) const override {
            if (r.prompt.find(prompts::kStrategySelectionInstruction) != std::string::npos) return "Hard to say.";
            return inner_.generate(r);
        }
        Embedding embed(std::string_view t) const override { return inner_.embed(t); }
        std::size_t embedding_dim() const override { return inner_.embedding_dim(); }
        std::string identity() const override { return "evasive"; }

    private:
        const Gateway& inner_;
    };
    const Evasive evasive(f.text);
    const Orchestrator orch(evasive);
    const auto fallback = orch.run_episode(f.problem, PlannerPolicy::cot(), options_with(2), rng);
    CHECK(fallback.cot_fallbacks >= 1);
    CHECK(fallback.transitions.back().done);
}

TEST_CASE("tot: highest mean wins, ties go to the lowest index") {
    CHECK(select_best_hint({{3, 3, 3, 3, 3}, {3, 3, 3, 3, 3}}) == 0);
    CHECK(select_best_hint({{1, 1, 1, 1, 1}, {2, 2, 2, 2, 2}, {2, 2, 2, 2, 2}}) == 1);
    CHECK(select_best_hint({{3, 3, 3, 1, 1}, {2, 2, 2, 2, 2}}) == 0);
    CHECK(select_best_hint({{1, 2, 3, 2, 1}, {3, 2, 1, 2, 1}, {2, 2, 2, 2, 3}}) == 2);
    CHECK_THROWS_AS(select_best_hint({}), UsageError);
}

TEST_CASE("tot planner: scoring every strategy finds the required path") {
    Fixture f;
    ToTConfig cfg;
    cfg.hint_samples = 9;
    std::mt19937_64 rng(4);
    const auto ep = f.orch.run_episode(f.problem, PlannerPolicy::tot(cfg), options_with(2), rng);
    CHECK(ep.correct);
    REQUIRE(ep.rounds.size() == 3);
    CHECK(ep.rounds[0].strategy == MetaStrategy::Elimination);
    CHECK(ep.rounds[1].strategy == MetaStrategy::Deduction);
    CHECK(ep.unparsed_scores == 0);

    ToTConfig bad;
    bad.hint_samples = 10;
    CHECK_THROWS_AS(f.orch.run_episode(f.problem, PlannerPolicy::tot(bad), options_with(2), rng), ConfigError);
}

TEST_CASE("pick-hint mode and the two ablations") {
    Fixture f;
    std::mt19937_64 rng(5);
    const auto hint_ep = f.orch.run_episode(f.problem, PlannerPolicy::random(PlanningMode::PickHint), options_with(1), rng);
    CHECK(hint_ep.transitions[0].action_embeddings.cols() == 10);
    CHECK(hint_ep.rounds[0].strategy.has_value());

    auto no_strategy = PlannerPolicy::random(PlanningMode::PickHint);
    no_strategy.unconditioned_hints = true;
    auto opts = options_with(1);
    const auto u = f.orch.run_episode(f.problem, no_strategy, opts, rng);
    REQUIRE(u.rounds.size() == 2);
    CHECK_FALSE(u.rounds[0].strategy.has_value());
    CHECK(u.rounds[0].hint.find("(variant") != std::string::npos);

    auto no_hint = PlannerPolicy::learned(plan_policy({MetaStrategy::Reflection}));
    no_hint.raw_instruction_hints = true;
    const auto r = f.orch.run_episode(f.problem, no_hint, opts, rng);
    CHECK(r.rounds[0].hint == instruction_text(MetaStrategy::Reflection));

    // Learned pick-hint: the hint naming the planned strategy carries its embedding.
    const auto learned_hint =
        f.orch.run_episode(f.problem, PlannerPolicy::learned(plan_policy({MetaStrategy::Elimination, MetaStrategy::Deduction}),
                                                             PlanningMode::PickHint),
                           options_with(2), rng);
    CHECK(learned_hint.correct);

    auto mismatched = PlannerPolicy::cot();
    mismatched.mode = PlanningMode::PickHint;
    CHECK_THROWS_AS(f.orch.run_episode(f.problem, mismatched, opts, rng), ConfigError);
    auto bad_ablation = PlannerPolicy::random();
    bad_ablation.unconditioned_hints = true;
    CHECK_THROWS_AS(f.orch.run_episode(f.problem, bad_ablation, opts, rng), ConfigError);
    CHECK_THROWS_AS(f.orch.run_episode(f.problem, PlannerPolicy::learned(nullptr), opts, rng), ConfigError);
}

TEST_CASE("evaluation: random planner accuracy sits at one in ten") {
    WorldSpec spec;
    spec.train_problems = 0;
    spec.test_problems = 1000;
    spec.embedding_dim = 8;
    const auto world = generate_world(spec);
    const ScriptedWorld gateway(world.scenario);
    const Orchestrator orch(gateway);
    EvalOptions opts;
    opts.episode.max_rounds = 2;
    opts.episode.selection = ActionSelection::Sample;
    opts.episode.keep_log = false;
    opts.seed = 17;
    const auto report = orch.evaluate(world.problems, PlannerPolicy::random(), opts);
    CHECK(report.counted == 1000);
    CHECK(oracle::within_binomial_interval(report.correct, 1000, 0.1));
    CHECK(report.mean_rounds >= 1.0);
    CHECK(report.mean_rounds <= 3.0);
}

TEST_CASE("evaluation: deterministic across runs and worker counts") {
    WorldSpec spec;
    spec.train_problems = 0;
    spec.test_problems = 40;
    spec.embedding_dim = 8;
    const auto world = generate_world(spec);
    const ScriptedWorld gateway(world.scenario);
    const Orchestrator orch(gateway);
    EvalOptions opts;
    opts.episode.selection = ActionSelection::Sample;
    opts.seed = 3;
    const auto a = orch.evaluate(world.problems, PlannerPolicy::random(), opts);
    opts.workers = 4;
    const auto b = orch.evaluate(world.problems, PlannerPolicy::random(), opts);
    for (std::size_t i = 0; i < a.episodes.size(); ++i) {
        CHECK(a.episodes[i].rounds.size() == b.episodes[i].rounds.size());
        CHECK(a.episodes[i].correct == b.episodes[i].correct);
    }
    CHECK(a.correct == b.correct);
    opts.seed = 4;
    const auto c = orch.evaluate(world.problems, PlannerPolicy::random(), opts);
    bool differs = false;
    for (std::size_t i = 0; i < a.episodes.size(); ++i)
        differs = differs || a.episodes[i].rounds.size() != c.episodes[i].rounds.size();
    CHECK(differs);

    CHECK_THROWS_AS(orch.evaluate({}, PlannerPolicy::random(), opts), ConfigError);
}

TEST_CASE("evaluation: prompt baselines and failed-episode accounting") {
    auto scenario = two_step_scenario();
    scenario.problems[0].direct_correct = true;
    const ScriptedWorld gateway(scenario);
    const Orchestrator orch(gateway);
    const std::vector<Problem> problems = {make_problem("q", "Which letter?"), make_problem("bad", "Broken question?")};
    EvalOptions opts;
    const auto direct = orch.evaluate_baseline(problems, prompts::PromptBaseline::Direct, {}, opts);
    CHECK(direct.correct == 1);
    CHECK(direct.counted == 2);
    CHECK(direct.accuracy == 0.5);
    CHECK(direct.episodes[1].failed);
    opts.exclude_failed = true;
    const auto excluded = orch.evaluate_baseline(problems, prompts::PromptBaseline::CoT, {}, opts);
    CHECK(excluded.counted == 1);
    CHECK(excluded.accuracy == 1.0);
    CHECK_THROWS_AS(orch.evaluate_baseline(problems, prompts::PromptBaseline::FewShot, {}, opts), ConfigError);
    const auto few = orch.evaluate_baseline(problems, prompts::PromptBaseline::FewShot, {make_problem("d", "Demo?", 'C')}, opts);
    CHECK(few.correct == 1);

    const auto j = direct.to_json(true);
    CHECK(j["accuracy"] == 0.5);
    CHECK(j["episodes"].size() == 2);
    CHECK(direct.table().find("0.5000") != std::string::npos);
}

TEST_CASE("episodes survive a JSON round trip") {
    Fixture f;
    std::mt19937_64 rng(8);
    const auto ep = f.orch.run_episode(f.problem, PlannerPolicy::random(), options_with(2), rng);
    const auto back = episode_from_json(episode_to_json(ep, true, true));
    CHECK(back.problem_id == ep.problem_id);
    CHECK(back.rounds.size() == ep.rounds.size());
    REQUIRE(back.transitions.size() == ep.transitions.size());
    CHECK(back.transitions[0].obs_embedding == ep.transitions[0].obs_embedding);
    CHECK(back.transitions.back().reward == ep.transitions.back().reward);
    CHECK(back.log.size() == ep.log.size());
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                        if (i == 7) throw ConfigError("boom");
                    }),
                    ConfigError);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
