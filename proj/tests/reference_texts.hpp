#pragma once

// Fixed prompt texts transcribed by hand for the fidelity checks. Kept apart
// from the library so a typo on either side shows up as a mismatch.

#include <array>
#include <string_view>

namespace reference {

inline constexpr std::string_view kHintGeneration =
    R"x(Prepare one potential succeeding hint for the input based on the above strategy. The hint should be brief and begin with 'Hint: '. Do not include the thought process or the result within the hint. For example, the hint for Enumeration can be "Hint: enumerate the options to find the correct answer. Let's start with Option (A)".)x";

inline constexpr std::string_view kOneStepReasoning =
    R"(Let's follow a systematic approach by considering the hint. The previous thoughts are outlined above for reference.)";

struct Instruction {
    std::string_view name;
    std::string_view text;
};

// Pool order.
inline constexpr std::array<Instruction, 10> kInstructions = {{
    {"Decomposition", R"(Decompose the problem or the preceding step into easier-to-solve parts.)"},
    {"Enumeration", R"(Enumerate all potential candidates in the context of the given conditions and find the most promising one.)"},
    {"Elimination", R"(Eliminate options that are incorrect or have a very low possibility of being correct.)"},
    {"Reflection", R"(Review previous results and verify whether these results are correct. If not, find the error and correct it.)"},
    {"Finish", R"(Please return the selected option in JSON format.)"},
    {"Deduction", R"(Draw a conclusion based on general truths, principles, given premises, or rules of inference.)"},
    {"Induction", R"(Start from a set of individual instances and generalize to arrive at a general conclusion.)"},
    {"Abduction", R"(Make an educated guess based on the known information and verify this guess.)"},
    {"Analogy", R"(Start from information about one system and infer information about another system based on the similarity between the two systems.)"},
    {"Contradiction", R"(Demonstrate that a statement is false by assuming it's true and then showing this leads to an impossible or absurd outcome.)"},
}};

// Rationality, Relevancy, Clarity, Correctness, Consistency.
inline constexpr std::array<std::string_view, 5> kAspects = {
    R"(Evaluate whether the current hint is a reasonable instruction to solve the problem. 1 is unreasonable, 3 is reasonable, and 2 is unsure. Return "The score is x", where x is an integer from 1 to 3.)",
    R"(Evaluate whether the current hint is relevant to the input problem. 1 is irrelevant, 3 is relevant, and 2 is unsure. Return "The score is x", where x is an integer from 1 to 3.)",
    R"(Evaluate whether the current hint is easy to understand and follow. 1 is difficult to understand and follow, 3 is easy to understand and follow, and 2 is unsure. Return "The score is x", where x is an integer from 1 to 3.)",
    R"(Evaluate whether the answer of the current reasoning hint is correct. 1 is incorrect, 3 is correct, and 2 is unsure. Return "The score is x", where x is an integer from 1 to 3.)",
    R"(Evaluate whether the current response is consistent with the input query and the given instruction hint. 1 is inconsistent, 3 is consistent, and 2 is unsure. Return "The score is x", where x is an integer from 1 to 3.)",
};

}  // namespace reference
