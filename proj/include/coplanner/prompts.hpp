#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coplanner/domain.hpp"

namespace coplanner::prompts {

// Fixed text of the hint-generation template after the three slot lines.
extern const std::string_view kHintInstruction;
// Fixed text of the one-step reasoning template after the three slot lines.
extern const std::string_view kReasoningInstruction;

std::string render_hint_prompt(std::string_view query, std::string_view thoughts,
                               std::string_view strategy_instruction);
std::string render_reasoning_prompt(std::string_view query, std::string_view thoughts,
                                    std::string_view hint);

/// Last JSON object in `completion` with a string "answer" field whose
/// normalized value is one of `valid_labels`.
std::optional<char> extract_answer(std::string_view completion, std::string_view valid_labels);

// ---- planner-side baselines -------------------------------------------------

extern const std::string_view kStrategySelectionInstruction;

std::string render_strategy_selection_prompt(std::string_view query, std::string_view thoughts);

/// Earliest strategy mentioned in `completion`, matching whole words and the
/// adjective forms ("deductive", "analogical", ...).
std::optional<MetaStrategy> parse_strategy_choice(std::string_view completion);

enum class Aspect { Rationality, Relevancy, Clarity, Correctness, Consistency };
inline constexpr std::array<Aspect, 5> kAllAspects = {Aspect::Rationality, Aspect::Relevancy,
                                                      Aspect::Clarity, Aspect::Correctness,
                                                      Aspect::Consistency};

std::string_view aspect_name(Aspect aspect);
std::string_view aspect_instruction(Aspect aspect);
bool aspect_scores_reasoning(Aspect aspect);

std::string render_score_prompt(Aspect aspect, std::string_view query, std::string_view thoughts,
                                std::string_view hint, std::string_view response);

/// Accepts exactly `The score is x` with x in {1,2,3}.
std::optional<int> parse_score(std::string_view completion);

// ---- single-call prompt baselines --------------------------------------------

enum class PromptBaseline { Direct, FewShot, CoT };

std::string_view baseline_name(PromptBaseline mode);
std::optional<PromptBaseline> baseline_from_name(std::string_view name);

extern const std::string_view kAnswerFormatInstruction;
extern const std::string_view kCoTPreamble;

std::string render_baseline_prompt(PromptBaseline mode, const Problem& problem,
                                   const std::vector<Problem>& demos);

}  // namespace coplanner::prompts
