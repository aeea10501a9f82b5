#include "coplanner/scripted_world.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "coplanner/errors.hpp"
#include "coplanner/prompts.hpp"
#include "coplanner/strategy_pool.hpp"

namespace coplanner {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Uniform in [-1, 1) from a 64-bit hash.
double unit_from_hash(std::uint64_t h) {
    return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

void add_hash_vector(Eigen::VectorXd& acc, std::uint64_t seed) {
    for (Eigen::Index i = 0; i < acc.size(); ++i)
        acc[i] += unit_from_hash(splitmix64(seed + static_cast<std::uint64_t>(i) * 0x632be59bd9b4e019ull));
}

std::vector<MetaStrategy> non_finish() {
    std::vector<MetaStrategy> out;
    for (auto s : StrategyPool::canonical().entries())
        if (s != MetaStrategy::Finish) out.push_back(s);
    return out;
}

std::string_view between(std::string_view text, std::size_t from, std::size_t to) {
    if (from == std::string_view::npos || to == std::string_view::npos || to < from) return {};
    return text.substr(from, to - from);
}

// Strategies named by "Applied X" in the thoughts slot, in order.
std::vector<std::optional<MetaStrategy>> applied_strategies(std::string_view thoughts) {
    std::vector<std::optional<MetaStrategy>> out;
    constexpr std::string_view marker = "Applied ";
    for (auto pos = thoughts.find(marker); pos != std::string_view::npos; pos = thoughts.find(marker, pos + 1)) {
        auto start = pos + marker.size();
        auto end = start;
        while (end < thoughts.size() && std::isalpha(static_cast<unsigned char>(thoughts[end]))) ++end;
        out.push_back(strategy_from_name(thoughts.substr(start, end - start)));
    }
    return out;
}

bool prefix_ok(const std::vector<std::optional<MetaStrategy>>& applied, const std::vector<MetaStrategy>& required,
               std::size_t upto) {
    for (std::size_t i = 0; i < upto; ++i)
        if (i >= applied.size() || applied[i] != required[i]) return false;
    return true;
}

std::optional<MetaStrategy> strategy_in_hint(std::string_view hint) {
    if (auto s = strategy_from_instruction(hint)) return s;
    return prompts::parse_strategy_choice(hint);
}

char wrong_label(const ScriptedProblem& p) {
    for (char c : p.labels)
        if (c != p.gold) return c;
    return p.gold;
}

std::string answer_json(char label) { return "{\"answer\": \"" + std::string(1, label) + "\"}"; }

struct PromptParts {
    std::string_view thoughts;
    std::string_view slot;  // hint or strategy slot
};

// Locates the thoughts slot ("\nThoughts: " up to `slot_marker`) and the
// text between the last `slot_marker` and `end`.
PromptParts split_prompt(std::string_view prompt, std::string_view slot_marker, std::size_t end) {
    const auto thoughts_at = prompt.find("\nThoughts: ");
    const auto slot_at = prompt.rfind(slot_marker, end);
    PromptParts parts;
    if (thoughts_at != std::string_view::npos && slot_at != std::string_view::npos && slot_at >= thoughts_at) {
        parts.thoughts = between(prompt, thoughts_at + 11, slot_at);
        parts.slot = between(prompt, slot_at + slot_marker.size(), end);
    }
    return parts;
}

std::size_t count_steps(std::string_view thoughts) {
    std::size_t n = 0;
    if (thoughts.rfind("Step ", 0) == 0) ++n;
    for (auto pos = thoughts.find("\nStep "); pos != std::string_view::npos; pos = thoughts.find("\nStep ", pos + 1)) ++n;
    return n;
}

}  // namespace

ScriptedWorld::ScriptedWorld(ScenarioConfig config) : config_(std::move(config)) {
    if (config_.embedding_dim == 0) throw ConfigError("scenario embedding_dim must be positive");
    for (std::size_t i = 0; i < config_.problems.size(); ++i) {
        auto& p = config_.problems[i];
        if (p.labels.find(p.gold) == std::string::npos)
            throw ConfigError("scenario problem '" + p.id + "': gold '" + std::string(1, p.gold) + "' not in labels");
        if (!by_question_.emplace(escape_line(p.question), i).second)
            throw ConfigError("scenario problem '" + p.id + "' duplicates another question");
    }
    fingerprint_ = fnv1a(scenario_to_json(config_).dump());
}

ScriptedWorld ScriptedWorld::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read scenario '" + path.string() + "'");
    try {
        return ScriptedWorld(parse_scenario(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("invalid scenario '" + path.string() + "': " + ex.what());
    }
}

ScenarioConfig ScriptedWorld::parse_scenario(const nlohmann::json& j) {
    auto parse_strategy = [](const std::string& name) {
        auto s = strategy_from_name(name);
        if (!s) throw ConfigError("unknown strategy '" + name + "' in scenario");
        return *s;
    };
    ScenarioConfig c;
    c.embedding_dim = j.value("embedding_dim", std::size_t{64});
    c.direct_correct = j.value("direct_correct", false);
    c.cot_choice = parse_strategy(j.value("cot_choice", std::string("Enumeration")));
    c.max_prompt_chars = j.value("max_prompt_chars", std::size_t{0});
    for (const auto& pj : j.value("problems", nlohmann::json::array())) {
        ScriptedProblem p;
        p.id = pj.at("id").get<std::string>();
        p.question = pj.at("question").get<std::string>();
        p.labels = pj.value("labels", std::string("ABCD"));
        const auto gold = pj.at("gold").get<std::string>();
        if (gold.size() != 1) throw ConfigError("scenario problem '" + p.id + "': gold must be one letter");
        p.gold = gold[0];
        for (const auto& name : pj.value("required", std::vector<std::string>{})) p.required.push_back(parse_strategy(name));
        p.direct_correct = pj.value("direct_correct", false);
        p.fail = pj.value("fail", false);
        c.problems.push_back(std::move(p));
    }
    return c;
}

nlohmann::json ScriptedWorld::scenario_to_json(const ScenarioConfig& c) {
    nlohmann::json problems = nlohmann::json::array();
    for (const auto& p : c.problems) {
        std::vector<std::string> required;
        for (auto s : p.required) required.emplace_back(strategy_name(s));
        problems.push_back({{"id", p.id},
                            {"question", p.question},
                            {"labels", p.labels},
                            {"gold", std::string(1, p.gold)},
                            {"required", required},
                            {"direct_correct", p.direct_correct},
                            {"fail", p.fail}});
    }
    return {{"embedding_dim", c.embedding_dim},
            {"direct_correct", c.direct_correct},
            {"cot_choice", std::string(strategy_name(c.cot_choice))},
            {"max_prompt_chars", c.max_prompt_chars},
            {"problems", std::move(problems)}};
}

std::string ScriptedWorld::identity() const {
    std::ostringstream os;
    os << "scripted-world/" << std::hex << fingerprint_;
    return os.str();
}

const ScriptedProblem* ScriptedWorld::find_problem(std::string_view prompt) const {
    // The target problem is the last one quoted (few-shot prompts lead with demos).
    constexpr std::string_view marker = "Problem: Question: ";
    const auto pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return nullptr;
    const auto start = pos + marker.size();
    const auto end = prompt.find('\n', start);
    const auto question = prompt.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    const auto it = by_question_.find(std::string(question));
    return it == by_question_.end() ? nullptr : &config_.problems[it->second];
}

std::string ScriptedWorld::generate(const GenerationRequest& request) const {
    const std::string_view prompt = request.prompt;
    if (prompt.empty()) throw UsageError("generate: empty prompt");
    if (config_.max_prompt_chars > 0 && prompt.size() > config_.max_prompt_chars)
        throw BackendError(400, "prompt exceeds the maximum context length (" + std::to_string(prompt.size()) + " > " +
                                    std::to_string(config_.max_prompt_chars) + " chars)");
    const ScriptedProblem* problem = find_problem(prompt);
    if (problem && problem->fail) throw BackendError(500, "scripted failure for problem " + problem->id);

    if (prompt.find(prompts::kHintInstruction) != std::string_view::npos) return hint_completion(request, problem);
    if (prompt.find(prompts::kReasoningInstruction) != std::string_view::npos) return reasoning_completion(prompt, problem);
    if (prompt.find("Return \"The score is x\"") != std::string_view::npos) return score_completion(prompt, problem);
    if (prompt.find(prompts::kStrategySelectionInstruction) != std::string_view::npos)
        return "I choose " + std::string(strategy_name(config_.cot_choice)) + ". It lets us check the options one by one.";
    return baseline_completion(prompt, problem);
}

std::string ScriptedWorld::hint_completion(const GenerationRequest& request, const ScriptedProblem*) const {
    const std::string_view prompt = request.prompt;
    const auto end = prompt.rfind(std::string("\n\n").append(prompts::kHintInstruction));
    const auto parts = split_prompt(prompt, "\nRefer to the given meta-strategy: ", end);

    std::uint64_t h = fnv1a(prompt);
    if (request.temperature > 0.0) h = splitmix64(h ^ splitmix64(request.seed.value_or(0) + 1));

    auto strategy = strategy_from_instruction(parts.slot);
    if (!strategy) {
        const auto pool = non_finish();
        strategy = pool[splitmix64(h) % pool.size()];
    }
    std::string hint;
    if (*strategy == MetaStrategy::Finish) {
        hint = "Hint: stop here and return the selected option.";
    } else {
        hint = "Hint: use " + std::string(strategy_name(*strategy)) + " on the current step.";
    }
    if (request.temperature > 0.0) hint += " (variant " + std::to_string(h % 1000) + ")";
    return hint;
}

std::string ScriptedWorld::reasoning_completion(std::string_view prompt, const ScriptedProblem* problem) const {
    const auto end = prompt.rfind(std::string("\n\n").append(prompts::kReasoningInstruction));
    const auto parts = split_prompt(prompt, "\nHint: ", end);
    const auto applied = applied_strategies(parts.thoughts);

    if (parts.slot.find(instruction_text(MetaStrategy::Finish)) != std::string_view::npos) {
        if (!problem) return "I cannot tell which problem this is.";
        const bool correct = applied.size() >= problem->required.size() &&
                             prefix_ok(applied, problem->required, problem->required.size());
        const char label = correct ? problem->gold : wrong_label(*problem);
        return "Reviewing the previous thoughts, the final choice is (" + std::string(1, label) + ").\n" + answer_json(label);
    }

    const auto strategy = strategy_in_hint(parts.slot);
    const std::size_t step = count_steps(parts.thoughts);
    bool progress = false;
    bool settled = false;
    if (problem && strategy && step < problem->required.size())
        progress = prefix_ok(applied, problem->required, step) && problem->required[step] == *strategy;
    if (problem && step >= problem->required.size())
        settled = prefix_ok(applied, problem->required, problem->required.size());
    std::string thought = "Applied ";
    thought += strategy ? std::string(strategy_name(*strategy)) : std::string("nothing");
    thought += " at step " + std::to_string(step + 1) + ": ";
    // Full sentences, so a reasoning step weighs in the state embedding the
    // way a real paragraph of reasoning would.
    if (progress)
        thought += "progress toward the answer; the clue resolves cleanly, the relevant facts line up with each "
                   "other, the remaining options narrow down, and the reasoning can move on with confidence.";
    else if (settled)
        thought += "the answer is already settled; this step only confirms the earlier conclusion, restates the "
                   "decisive facts, and leaves the chosen option unchanged.";
    else
        thought += "stalled; the clue stays unresolved, the facts do not connect to the question, no option is "
                   "ruled out, and the reasoning gains nothing useful from this step.";
    return thought;
}

std::string ScriptedWorld::score_completion(std::string_view prompt, const ScriptedProblem* problem) const {
    const auto response_at = prompt.rfind("\nResponse: ");
    const auto instruction_at = prompt.rfind("\n\n");
    if (response_at != std::string_view::npos && response_at < instruction_at) {
        const auto response = between(prompt, response_at, instruction_at);
        return response.find("stalled") == std::string_view::npos ? "The score is 3." : "The score is 1.";
    }
    const auto parts = split_prompt(prompt, "\nHint: ", instruction_at);
    const auto strategy = strategy_in_hint(parts.slot);
    const auto applied = applied_strategies(parts.thoughts);
    const std::size_t step = count_steps(parts.thoughts);
    bool good = false;
    if (problem && strategy && step < problem->required.size())
        good = prefix_ok(applied, problem->required, step) && problem->required[step] == *strategy;
    return good ? "The score is 3." : "The score is 1.";
}

std::string ScriptedWorld::baseline_completion(std::string_view prompt, const ScriptedProblem* problem) const {
    if (!problem) return "I am not sure which option is right.";
    const bool correct = problem->direct_correct || config_.direct_correct;
    const char label = correct ? problem->gold : wrong_label(*problem);
    if (prompt.find(prompts::kCoTPreamble) != std::string_view::npos)
        return "Let me work through the conditions step by step. They point to option (" + std::string(1, label) +
               ").\n" + answer_json(label);
    return answer_json(label);
}

Embedding ScriptedWorld::embed(std::string_view text) const {
    if (text.empty()) throw UsageError("embed: empty text");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.embedding_dim));
    std::size_t tokens = 0;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        add_hash_vector(acc, fnv1a(token));
        ++tokens;
        token.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else flush();
    }
    flush();
    if (tokens == 0) add_hash_vector(acc, fnv1a(text, 0x84222325cbf29ce4ull));
    // Unit scale per coordinate, like mean-pooled hidden states, rather than
    // unit norm.
    const double norm = acc.norm();
    if (norm > 0.0) acc *= std::sqrt(static_cast<double>(acc.size())) / norm;
    return acc;
}

// ---- world generation ---------------------------------------------------------

GeneratedWorld generate_world(const WorldSpec& spec) {
    static const std::vector<std::string> keywords = {
        "amber", "basalt", "cobalt", "dune",    "ember",   "fjord",   "garnet", "harbor", "indigo",
        "juniper", "kestrel", "lagoon", "marble", "nectar", "onyx", "prairie", "quartz", "raven"};
    static const std::vector<std::string> filler = {
        "merchant", "river",  "ledger",  "tower",   "garden", "letter", "market", "bridge",  "signal", "orchard",
        "archive",  "harvest", "engine", "compass", "lantern", "meadow", "voyage", "cellar", "quarry", "festival",
        "council",  "canyon", "furnace", "glacier", "island", "journal", "kettle", "library", "mirror", "notebook",
        "parcel",   "pigment", "riddle", "saddle",  "summit", "thicket", "umbrella", "valley", "window", "workshop"};
    static const std::vector<std::string> option_texts = {
        "the first claim holds",   "the second claim holds", "both claims fail", "the claims cannot be decided",
        "only the third claim holds", "all claims hold",      "the premise is void", "none of the above"};
    if (spec.num_classes == 0) throw ConfigError("world needs at least one class");
    if (spec.num_options < 2 || spec.num_options > option_texts.size())
        throw ConfigError("world num_options must be in [2, " + std::to_string(option_texts.size()) + "]");
    if (spec.sequence_length == 0) throw ConfigError("world sequence_length must be positive");

    std::mt19937_64 rng(spec.seed);
    const auto pool = non_finish();
    std::vector<std::vector<MetaStrategy>> required(spec.num_classes);
    std::vector<std::string> class_word(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        class_word[c] = c < keywords.size() ? keywords[c] : "kind" + std::to_string(c);
        required[c].push_back(pool[c % pool.size()]);
        for (std::size_t k = 1; k < spec.sequence_length; ++k) required[c].push_back(pool[rng() % pool.size()]);
    }

    GeneratedWorld world;
    world.scenario.embedding_dim = spec.embedding_dim;
    const std::size_t total = spec.train_problems + spec.validation_problems + spec.test_problems;
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t c = i % spec.num_classes;
        Problem p;
        p.id = "p" + std::to_string(i);
        std::string words;
        for (std::size_t k = 0; k < spec.filler_words; ++k) words += (k ? " " : "") + filler[rng() % filler.size()];
        const auto& kw = class_word[c];
        p.question = "Case " + std::to_string(i) + ": a " + kw + " puzzle about " + words + ". The " + kw +
                     " clues and " + kw + " facts follow the " + kw + " rule. Which option holds?";
        for (std::size_t k = 0; k < spec.num_options; ++k)
            p.options.push_back({static_cast<char>('A' + k), option_texts[k] + " for the " + kw + " case"});
        p.gold = static_cast<char>('A' + rng() % spec.num_options);
        p.split = i < spec.train_problems                              ? Split::Train
                  : i < spec.train_problems + spec.validation_problems ? Split::Validation
                                                                       : Split::Test;
        world.scenario.problems.push_back({p.id, p.question, p.labels(), p.gold, required[c], false, false});
        world.problems.push_back(std::move(p));
    }
    return world;
}

}  // namespace coplanner
