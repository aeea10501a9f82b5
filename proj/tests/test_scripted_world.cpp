#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "coplanner/errors.hpp"
#include "coplanner/prompts.hpp"
#include "coplanner/scripted_world.hpp"
#include "coplanner/strategy_pool.hpp"
#include "oracles.hpp"

using namespace coplanner;

namespace {

Problem make_problem() {
    Problem p;
    p.id = "q1";
    p.question = "Which gem is red?";
    p.options = {{'A', "ruby"}, {'B', "sapphire"}, {'C', "emerald"}, {'D', "pearl"}};
    p.gold = 'A';
    return p;
}

ScenarioConfig make_scenario() {
    ScenarioConfig c;
    c.embedding_dim = 16;
    c.problems.push_back({"q1", "Which gem is red?", "ABCD", 'A',
                          {MetaStrategy::Elimination, MetaStrategy::Deduction}, false, false});
    return c;
}

std::string ask(const ScriptedWorld& w, const std::string& prompt, double temperature = 0.0,
                std::optional<std::uint64_t> seed = std::nullopt) {
    GenerationRequest r;
    r.prompt = prompt;
    r.temperature = temperature;
    r.seed = seed;
    return w.generate(r);
}

// Runs hint + reasoning for each strategy in turn, then the finish signal.
std::optional<char> play(const ScriptedWorld& w, const Problem& p, const std::vector<MetaStrategy>& seq) {
    std::vector<RoundRecord> rounds;
    const auto query = render_query(p);
    for (auto s : seq) {
        const auto thoughts = render_thoughts(rounds);
        const auto hint = ask(w, prompts::render_hint_prompt(query, thoughts, instruction_text(s)));
        const auto thought = ask(w, prompts::render_reasoning_prompt(query, thoughts, hint));
        rounds.push_back({s, hint, thought});
    }
    const auto final_text =
        ask(w, prompts::render_reasoning_prompt(query, render_thoughts(rounds), instruction_text(MetaStrategy::Finish)));
    return prompts::extract_answer(final_text, p.labels());
}

}  // namespace

TEST_CASE("scripted world: correct only when the required sequence opens the history") {
    const ScriptedWorld w(make_scenario());
    const auto p = make_problem();
    CHECK(play(w, p, {MetaStrategy::Elimination, MetaStrategy::Deduction}) == 'A');
    CHECK(play(w, p, {MetaStrategy::Elimination, MetaStrategy::Deduction, MetaStrategy::Reflection}) == 'A');
    CHECK(play(w, p, {MetaStrategy::Deduction, MetaStrategy::Elimination}) == 'B');
    CHECK(play(w, p, {MetaStrategy::Elimination}) == 'B');
    CHECK(play(w, p, {}) == 'B');
}

TEST_CASE("scripted world: hints name the strategy and vary only when sampled") {
    const ScriptedWorld w(make_scenario());
    const auto query = render_query(make_problem());
    const auto prompt = prompts::render_hint_prompt(query, "", instruction_text(MetaStrategy::Reflection));
    CHECK(ask(w, prompt) == "Hint: use Reflection on the current step.");
    CHECK(ask(w, prompt) == ask(w, prompt));
    const auto a = ask(w, prompt, 1.0, 1);
    const auto b = ask(w, prompt, 1.0, 2);
    CHECK(a.find("Reflection") != std::string::npos);
    CHECK(a != b);
    CHECK(a == ask(w, prompt, 1.0, 1));
    CHECK(ask(w, prompts::render_hint_prompt(query, "", instruction_text(MetaStrategy::Finish))).find("stop") !=
          std::string::npos);
}

TEST_CASE("scripted world: thoughts report progress, settled or stalled") {
    const ScriptedWorld w(make_scenario());
    const auto query = render_query(make_problem());
    auto thought_for = [&](const std::string& thoughts, MetaStrategy s) {
        return ask(w, prompts::render_reasoning_prompt(query, thoughts, "Hint: use " + std::string(strategy_name(s)) +
                                                                            " on the current step."));
    };
    const auto good = thought_for("", MetaStrategy::Elimination);
    CHECK(good.rfind("Applied Elimination at step 1: progress", 0) == 0);
    CHECK(thought_for("", MetaStrategy::Deduction).find("stalled") != std::string::npos);
    const auto two = "Step 1: Applied Elimination at step 1: x\nStep 2: Applied Deduction at step 2: y";
    CHECK(thought_for(two, MetaStrategy::Analogy).find("settled") != std::string::npos);
}

TEST_CASE("scripted world: scores follow the required step and response wording") {
    const ScriptedWorld w(make_scenario());
    const auto query = render_query(make_problem());
    const std::string hint = "Hint: use Elimination on the current step.";
    for (auto aspect : prompts::kAllAspects) {
        CAPTURE(prompts::aspect_name(aspect));
        if (prompts::aspect_scores_reasoning(aspect)) {
            CHECK(prompts::parse_score(ask(w, prompts::render_score_prompt(aspect, query, "", hint, "progress"))) == 3);
            CHECK(prompts::parse_score(ask(w, prompts::render_score_prompt(aspect, query, "", hint, "stalled; x"))) ==
                  1);
        } else {
            CHECK(prompts::parse_score(ask(w, prompts::render_score_prompt(aspect, query, "", hint, ""))) == 3);
            const std::string bad = "Hint: use Analogy on the current step.";
            CHECK(prompts::parse_score(ask(w, prompts::render_score_prompt(aspect, query, "", bad, ""))) == 1);
        }
    }
}

TEST_CASE("scripted world: baselines, failures and context limit") {
    auto c = make_scenario();
    c.problems[0].direct_correct = true;
    c.max_prompt_chars = 4000;
    c.problems.push_back({"q2", "Which gem is blue?", "ABCD", 'B', {MetaStrategy::Analogy}, false, true});
    const ScriptedWorld w(c);
    const auto p = make_problem();
    auto demo = p;
    demo.question = "Which gem is green?";
    demo.gold = 'C';
    for (auto mode : {prompts::PromptBaseline::Direct, prompts::PromptBaseline::FewShot, prompts::PromptBaseline::CoT})
        CHECK(prompts::extract_answer(ask(w, prompts::render_baseline_prompt(mode, p, {demo})), "ABCD") == 'A');

    auto blue = p;
    blue.question = "Which gem is blue?";
    try {
        ask(w, prompts::render_baseline_prompt(prompts::PromptBaseline::Direct, blue, {}));
        FAIL("expected a backend error");
    } catch (const BackendError& e) {
        CHECK(e.status() == 500);
    }
    try {
        ask(w, std::string(5000, 'x'));
        FAIL("expected a backend error");
    } catch (const BackendError& e) {
        CHECK(e.is_context_overflow());
    }
    CHECK_THROWS_AS(ask(w, ""), UsageError);
    CHECK_THROWS_AS(w.embed(""), UsageError);
}

TEST_CASE("scripted world: embeddings are deterministic, scaled and similarity-preserving") {
    const ScriptedWorld w(make_scenario());
    const auto a = w.embed("the amber clue follows the amber rule");
    CHECK(a.size() == 16);
    CHECK(a.isApprox(w.embed("The amber clue, follows the AMBER rule.")));
    CHECK(std::abs(a.norm() - 4.0) < 1e-12);
    const auto near = w.embed("the amber clue follows the amber fact");
    const auto far = w.embed("quartz onyx raven lagoon");
    CHECK(a.dot(near) > a.dot(far));
    CHECK(std::abs(w.embed("!!!").norm() - 4.0) < 1e-12);
}

TEST_CASE("scripted world: scenario validation and file round trip") {
    auto dup = make_scenario();
    dup.problems.push_back(dup.problems[0]);
    dup.problems[1].id = "q2";
    CHECK_THROWS_AS(ScriptedWorld{dup}, ConfigError);

    auto bad_gold = make_scenario();
    bad_gold.problems[0].gold = 'Z';
    CHECK_THROWS_AS(ScriptedWorld{bad_gold}, ConfigError);

    auto zero = make_scenario();
    zero.embedding_dim = 0;
    CHECK_THROWS_AS(ScriptedWorld{zero}, ConfigError);

    CHECK_THROWS_AS(ScriptedWorld::parse_scenario(nlohmann::json::parse(
                        R"({"problems":[{"id":"a","question":"q","gold":"A","required":["Guessing"]}]})")),
                    ConfigError);

    const auto dir = oracle::scratch_dir("scenario");
    const auto path = dir / "scenario.json";
    std::ofstream(path) << ScriptedWorld::scenario_to_json(make_scenario()).dump();
    const auto loaded = ScriptedWorld::from_file(path);
    CHECK(loaded.identity() == ScriptedWorld(make_scenario()).identity());
    CHECK(loaded.config().problems[0].required.size() == 2);
    CHECK_THROWS_AS(ScriptedWorld::from_file(dir / "missing.json"), ConfigError);
    std::ofstream(dir / "broken.json") << "{not json";
    CHECK_THROWS_AS(ScriptedWorld::from_file(dir / "broken.json"), ConfigError);
}

TEST_CASE("generated worlds: splits, classes and reproducibility") {
    WorldSpec spec;
    spec.train_problems = 18;
    spec.validation_problems = 4;
    spec.test_problems = 9;
    spec.sequence_length = 2;
    const auto a = generate_world(spec);
    const auto b = generate_world(spec);
    REQUIRE(a.problems.size() == 31);
    CHECK(filter_split(a.problems, Split::Train).size() == 18);
    CHECK(filter_split(a.problems, Split::Validation).size() == 4);
    CHECK(filter_split(a.problems, Split::Test).size() == 9);
    for (std::size_t i = 0; i < a.problems.size(); ++i) {
        CHECK(a.problems[i].question == b.problems[i].question);
        CHECK(a.problems[i].gold == b.problems[i].gold);
        CHECK_NOTHROW(a.problems[i].validate());
        // Same class, same hidden rule.
        CHECK(a.scenario.problems[i].required == a.scenario.problems[i % 9].required);
        CHECK(a.scenario.problems[i].required.size() == 2);
    }
    // Round-0 strategies cover every non-Finish strategy once.
    std::set<MetaStrategy> first;
    for (std::size_t c = 0; c < 9; ++c) first.insert(a.scenario.problems[c].required[0]);
    CHECK(first.size() == 9);
    CHECK(first.count(MetaStrategy::Finish) == 0);

    const ScriptedWorld w(a.scenario);
    CHECK(play(w, a.problems[3], a.scenario.problems[3].required) == a.problems[3].gold);

    spec.seed = 2;
    CHECK(generate_world(spec).problems[0].question != a.problems[0].question);
    spec.num_options = 1;
    CHECK_THROWS_AS(generate_world(spec), ConfigError);
}
