#include <doctest.h>

#include "coplanner/errors.hpp"
#include "coplanner/prompts.hpp"
#include "coplanner/strategy_pool.hpp"

using namespace coplanner;
using namespace coplanner::prompts;

TEST_CASE("hint and reasoning prompts have the fixed layout") {
    CHECK(render_hint_prompt("Q", "T", "S") ==
          "Problem: Q\nThoughts: T\nRefer to the given meta-strategy: S\n\n" + std::string(kHintInstruction));
    CHECK(render_reasoning_prompt("Q", "T", "H") == "Problem: Q\nThoughts: T\nHint: H\n\n" + std::string(kReasoningInstruction));
}

TEST_CASE("answer extraction over messy completions") {
    struct Row {
        const char* completion;
        std::optional<char> expected;
    };
    const Row rows[] = {
        {R"({"answer": "A"})", 'A'},
        {R"({"answer": "b"})", 'B'},
        {R"(The answer is {"answer": "C"}.)", 'C'},
        {R"({"answer": " D "})", 'D'},
        {R"x({"answer": "(A)"})x", 'A'},
        {R"({"answer": "B."})", 'B'},
        {R"(first {"answer": "A"} then revised {"answer": "C"})", 'C'},
        {R"({"answer": "E"})", std::nullopt},  // not an option
        {R"({"answer": "AB"})", std::nullopt},
        {R"({"answer": 1})", std::nullopt},  // not a string
        {R"(no json here)", std::nullopt},
        {R"({"answer": "A")", std::nullopt},  // unbalanced
        {R"({"reason": "because {x}", "answer": "D"})", 'D'},
        {R"({"reason": "it is \"B\"", "answer": "A"})", 'A'},
        {R"(```json
{"answer": "B"}
```)", 'B'},
        {R"({"Answer": "C"})", 'C'},
        {R"({"answer": "B"} but later {"answer": "Z"})", std::nullopt},  // last object decides
        {R"({"choice": "A"})", std::nullopt},
        {R"({'answer': 'A'})", std::nullopt},  // not JSON
        {R"(Option {"answer": "A"} and noise {bad json})", 'A'},
    };
    for (const auto& row : rows) {
        CAPTURE(row.completion);
        CHECK(extract_answer(row.completion, "ABCD") == row.expected);
    }
}

TEST_CASE("strategy choice: earliest whole-word mention wins") {
    CHECK(parse_strategy_choice("I choose Enumeration because...") == MetaStrategy::Enumeration);
    CHECK_FALSE(parse_strategy_choice("Let me think about it more.").has_value());

    // Hand-built ambiguous completions and the strategy a reader would say is named first.
    const std::pair<const char*, MetaStrategy> ambiguous[] = {
        {"Reflection, not Elimination.", MetaStrategy::Reflection},
        {"Elimination first; Reflection could come later.", MetaStrategy::Elimination},
        {"Use deductive reasoning, maybe induction afterwards.", MetaStrategy::Deduction},
        {"Analogical thinking beats Contradiction here.", MetaStrategy::Analogy},
        {"Best: Finish. Decomposition is unnecessary.", MetaStrategy::Finish},
        {"Decompositions aside, Enumeration is best.", MetaStrategy::Enumeration},
        {"Abduction; Deduction; Induction.", MetaStrategy::Abduction},
        {"CONTRADICTION then reflection", MetaStrategy::Contradiction},
        {"The step (Induction) before Analogy.", MetaStrategy::Induction},
        {"Selfreflection is not a word, Decomposition is.", MetaStrategy::Decomposition},
    };
    for (const auto& [text, expected] : ambiguous) {
        CAPTURE(text);
        CHECK(parse_strategy_choice(text) == expected);
    }
}

TEST_CASE("selection prompt lists every strategy with its instruction") {
    const auto prompt = render_strategy_selection_prompt("Q", "T");
    for (auto s : StrategyPool::canonical().entries()) {
        CHECK(prompt.find(std::string(strategy_name(s)) + ": " + std::string(instruction_text(s))) != std::string::npos);
    }
    CHECK(prompt.ends_with(kStrategySelectionInstruction));
}

TEST_CASE("score parsing") {
    CHECK(parse_score("The score is 2.") == 2);
    CHECK(parse_score("Reasoning... The score is 3") == 3);
    CHECK(parse_score("The score is 1, since") == 1);
    CHECK_FALSE(parse_score("The score is 4.").has_value());
    CHECK_FALSE(parse_score("The score is 0").has_value());
    CHECK_FALSE(parse_score("The score is 10").has_value());
    CHECK_FALSE(parse_score("The score is 2.5").has_value());
    CHECK_FALSE(parse_score("Score: 2").has_value());
    CHECK_FALSE(parse_score("the score is 2").has_value());
}

TEST_CASE("score prompts include the response only for reasoning aspects") {
    for (auto a : kAllAspects) {
        const auto p = render_score_prompt(a, "Q", "T", "H", "R");
        CHECK(p.ends_with(aspect_instruction(a)));
        CHECK((p.find("\nResponse: R") != std::string::npos) == aspect_scores_reasoning(a));
    }
}

TEST_CASE("prompt baselines") {
    Problem p;
    p.id = "x";
    p.question = "q?";
    p.options = {{'A', "a"}, {'B', "b"}};
    p.gold = 'B';
    CHECK(render_baseline_prompt(PromptBaseline::Direct, p, {}).ends_with(kAnswerFormatInstruction));
    CHECK(render_baseline_prompt(PromptBaseline::CoT, p, {}).find(kCoTPreamble) != std::string::npos);
    CHECK_THROWS_AS(render_baseline_prompt(PromptBaseline::FewShot, p, {}), ConfigError);
    const auto few = render_baseline_prompt(PromptBaseline::FewShot, p, {p, p, p});
    std::size_t n = 0;
    for (auto pos = few.find("Answer: {"); pos != std::string::npos; pos = few.find("Answer: {", pos + 1)) ++n;
    CHECK(n == 3);
    CHECK(baseline_from_name("cot-prompt") == PromptBaseline::CoT);
    CHECK_FALSE(baseline_from_name("cot").has_value());
}
