#include "coplanner/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include <json.hpp>

#include "coplanner/errors.hpp"
#include "coplanner/strategy_pool.hpp"

namespace coplanner::prompts {

const std::string_view kHintInstruction =
    "Prepare one potential succeeding hint for the input based on the above strategy. The hint should be brief and "
    "begin with 'Hint: '. Do not include the thought process or the result within the hint. For example, the hint for "
    "Enumeration can be \"Hint: enumerate the options to find the correct answer. Let's start with Option (A)\".";

const std::string_view kReasoningInstruction =
    "Let's follow a systematic approach by considering the hint. The previous thoughts are outlined above for "
    "reference.";

const std::string_view kStrategySelectionInstruction =
    "Select the best meta-strategy for the next reasoning step from the list above. Answer with the name of the "
    "meta-strategy first, then explain briefly.";

const std::string_view kAnswerFormatInstruction =
    "Answer the question. Return the selected option in JSON format, for example {\"answer\": \"A\"}.";

const std::string_view kCoTPreamble = "Let's think step by step.";

std::string render_hint_prompt(std::string_view query, std::string_view thoughts, std::string_view strategy_instruction) {
    std::string out;
    out.reserve(query.size() + thoughts.size() + strategy_instruction.size() + kHintInstruction.size() + 64);
    out.append("Problem: ").append(query);
    out.append("\nThoughts: ").append(thoughts);
    out.append("\nRefer to the given meta-strategy: ").append(strategy_instruction);
    out.append("\n\n").append(kHintInstruction);
    return out;
}

std::string render_reasoning_prompt(std::string_view query, std::string_view thoughts, std::string_view hint) {
    std::string out;
    out.reserve(query.size() + thoughts.size() + hint.size() + kReasoningInstruction.size() + 64);
    out.append("Problem: ").append(query);
    out.append("\nThoughts: ").append(thoughts);
    out.append("\nHint: ").append(hint);
    out.append("\n\n").append(kReasoningInstruction);
    return out;
}

namespace {

// End of the balanced {...} starting at `open`, honouring JSON strings.
std::optional<std::size_t> matching_brace(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return i;
    }
    return std::nullopt;
}

std::optional<char> normalize_label(std::string value, std::string_view valid_labels) {
    auto strip = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
    while (!value.empty() && strip(static_cast<unsigned char>(value.front()))) value.erase(value.begin());
    while (!value.empty() && strip(static_cast<unsigned char>(value.back()))) value.pop_back();
    if (value.size() != 1) return std::nullopt;
    const char label = static_cast<char>(std::toupper(static_cast<unsigned char>(value[0])));
    if (valid_labels.find(label) == std::string_view::npos) return std::nullopt;
    return label;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

std::optional<char> extract_answer(std::string_view completion, std::string_view valid_labels) {
    // The answer-bearing object that closes last wins, even if its value is
    // not a valid label.
    std::optional<std::string> last_value;
    std::size_t last_close = 0;
    for (std::size_t open = completion.find('{'); open != std::string_view::npos; open = completion.find('{', open + 1)) {
        const auto close = matching_brace(completion, open);
        if (!close || (last_value && *close < last_close)) continue;
        const auto parsed = nlohmann::json::parse(completion.substr(open, *close - open + 1), nullptr, false);
        if (!parsed.is_object()) continue;
        for (const auto& [key, value] : parsed.items()) {
            if (lower(key) != "answer" || !value.is_string()) continue;
            last_value = value.get<std::string>();
            last_close = *close;
        }
    }
    if (!last_value) return std::nullopt;
    return normalize_label(*last_value, valid_labels);
}

std::string render_strategy_selection_prompt(std::string_view query, std::string_view thoughts) {
    std::string out = "Problem: " + std::string(query) + "\nThoughts: " + std::string(thoughts) + "\n\nMeta-strategies:";
    for (auto s : StrategyPool::canonical().entries())
        out += "\n- " + std::string(strategy_name(s)) + ": " + std::string(instruction_text(s));
    out += "\n\n";
    out += kStrategySelectionInstruction;
    return out;
}

std::optional<MetaStrategy> parse_strategy_choice(std::string_view completion) {
    struct Alias {
        std::string_view word;
        MetaStrategy strategy;
    };
    static const std::vector<Alias> aliases = [] {
        std::vector<Alias> out;
        for (auto s : StrategyPool::canonical().entries()) out.push_back({strategy_name(s), s});
        out.push_back({"Deductive", MetaStrategy::Deduction});
        out.push_back({"Inductive", MetaStrategy::Induction});
        out.push_back({"Abductive", MetaStrategy::Abduction});
        out.push_back({"Analogical", MetaStrategy::Analogy});
        return out;
    }();
    const std::string text = lower(completion);
    std::optional<MetaStrategy> best;
    std::size_t best_pos = std::string::npos;
    for (const auto& alias : aliases) {
        const std::string word = lower(alias.word);
        for (auto pos = text.find(word); pos != std::string::npos && pos < best_pos; pos = text.find(word, pos + 1)) {
            const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
            const auto end = pos + word.size();
            const bool right_ok = end == text.size() || !is_word_char(text[end]);
            if (left_ok && right_ok) {
                best_pos = pos;
                best = alias.strategy;
                break;
            }
        }
    }
    return best;
}

std::string_view aspect_name(Aspect aspect) {
    switch (aspect) {
        case Aspect::Rationality: return "Rationality";
        case Aspect::Relevancy: return "Relevancy";
        case Aspect::Clarity: return "Clarity";
        case Aspect::Correctness: return "Correctness";
        case Aspect::Consistency: return "Consistency";
    }
    return "";
}

std::string_view aspect_instruction(Aspect aspect) {
    switch (aspect) {
        case Aspect::Rationality:
            return "Evaluate whether the current hint is a reasonable instruction to solve the problem. 1 is "
                   "unreasonable, 3 is reasonable, and 2 is unsure. Return \"The score is x\", where x is an integer "
                   "from 1 to 3.";
        case Aspect::Relevancy:
            return "Evaluate whether the current hint is relevant to the input problem. 1 is irrelevant, 3 is relevant, "
                   "and 2 is unsure. Return \"The score is x\", where x is an integer from 1 to 3.";
        case Aspect::Clarity:
            return "Evaluate whether the current hint is easy to understand and follow. 1 is difficult to understand "
                   "and follow, 3 is easy to understand and follow, and 2 is unsure. Return \"The score is x\", where x "
                   "is an integer from 1 to 3.";
        case Aspect::Correctness:
            return "Evaluate whether the answer of the current reasoning hint is correct. 1 is incorrect, 3 is correct, "
                   "and 2 is unsure. Return \"The score is x\", where x is an integer from 1 to 3.";
        case Aspect::Consistency:
            return "Evaluate whether the current response is consistent with the input query and the given instruction "
                   "hint. 1 is inconsistent, 3 is consistent, and 2 is unsure. Return \"The score is x\", where x is an "
                   "integer from 1 to 3.";
    }
    return "";
}

bool aspect_scores_reasoning(Aspect aspect) {
    return aspect == Aspect::Correctness || aspect == Aspect::Consistency;
}

std::string render_score_prompt(Aspect aspect, std::string_view query, std::string_view thoughts, std::string_view hint,
                                std::string_view response) {
    std::string out = "Problem: " + std::string(query) + "\nThoughts: " + std::string(thoughts) + "\nHint: " + std::string(hint);
    if (aspect_scores_reasoning(aspect)) out += "\nResponse: " + std::string(response);
    out += "\n\n";
    out += aspect_instruction(aspect);
    return out;
}

std::optional<int> parse_score(std::string_view completion) {
    static const std::regex pattern("The score is ([0-9]+)(?![0-9]|\\.[0-9])");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(completion.begin(), completion.end(), m, pattern)) return std::nullopt;
    const auto digits = m[1].str();
    if (digits.size() != 1 || digits[0] < '1' || digits[0] > '3') return std::nullopt;
    return digits[0] - '0';
}

std::string_view baseline_name(PromptBaseline mode) {
    switch (mode) {
        case PromptBaseline::Direct: return "direct";
        case PromptBaseline::FewShot: return "fewshot";
        case PromptBaseline::CoT: return "cot-prompt";
    }
    return "";
}

std::optional<PromptBaseline> baseline_from_name(std::string_view name) {
    for (auto m : {PromptBaseline::Direct, PromptBaseline::FewShot, PromptBaseline::CoT})
        if (baseline_name(m) == name) return m;
    return std::nullopt;
}

std::string render_baseline_prompt(PromptBaseline mode, const Problem& problem, const std::vector<Problem>& demos) {
    std::string out;
    switch (mode) {
        case PromptBaseline::Direct:
            out = "Problem: " + render_query(problem) + "\n\n" + std::string(kAnswerFormatInstruction);
            break;
        case PromptBaseline::FewShot:
            if (demos.empty()) throw ConfigError("few-shot prompting needs at least one demonstration");
            for (const auto& d : demos)
                out += "Problem: " + render_query(d) + "\nAnswer: {\"answer\": \"" + std::string(1, d.gold) + "\"}\n\n";
            out += "Problem: " + render_query(problem) + "\n\n" + std::string(kAnswerFormatInstruction);
            break;
        case PromptBaseline::CoT:
            out = "Problem: " + render_query(problem) + "\n\n" + std::string(kCoTPreamble) +
                  " Explain your reasoning, then return the selected option in JSON format, for example "
                  "{\"answer\": \"A\"}.";
            break;
    }
    return out;
}

}  // namespace coplanner::prompts
