#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "coplanner/domain.hpp"
#include "coplanner/llm_gateway.hpp"

namespace coplanner {

/// Per-problem rules of the scripted world.
struct ScriptedProblem {
    std::string id;
    std::string question;
    std::string labels;
    char gold = 'A';
    std::vector<MetaStrategy> required;  // must open the applied-strategy sequence
    bool direct_correct = false;
    bool fail = false;  // every call about this problem fails with HTTP 500
};

struct ScenarioConfig {
    std::size_t embedding_dim = 64;
    bool direct_correct = false;
    MetaStrategy cot_choice = MetaStrategy::Enumeration;
    std::size_t max_prompt_chars = 0;  // 0 = unlimited
    std::vector<ScriptedProblem> problems;
};

/// Deterministic stand-in for the reasoning and planning LLMs.
///
/// The reasoner marks a step as progress when the hint names the strategy the
/// problem requires at that step, and answers correctly on the finish signal
/// iff the applied strategies (read back from the thoughts in the prompt)
/// start with the required sequence. Everything is a pure function of the
/// request. Embeddings are the mean of per-word hash vectors scaled to norm
/// sqrt(d), so texts sharing words land near each other.
class ScriptedWorld final : public Gateway {
public:
    explicit ScriptedWorld(ScenarioConfig config);

    static ScriptedWorld from_file(const std::filesystem::path& path);
    static ScenarioConfig parse_scenario(const nlohmann::json& j);
    static nlohmann::json scenario_to_json(const ScenarioConfig& config);

    std::string generate(const GenerationRequest& request) const override;
    Embedding embed(std::string_view text) const override;
    std::size_t embedding_dim() const override { return config_.embedding_dim; }
    std::string identity() const override;

    const ScenarioConfig& config() const { return config_; }

private:
    const ScriptedProblem* find_problem(std::string_view prompt) const;
    std::string hint_completion(const GenerationRequest& request, const ScriptedProblem* problem) const;
    std::string reasoning_completion(std::string_view prompt, const ScriptedProblem* problem) const;
    std::string score_completion(std::string_view prompt, const ScriptedProblem* problem) const;
    std::string baseline_completion(std::string_view prompt, const ScriptedProblem* problem) const;

    ScenarioConfig config_;
    std::unordered_map<std::string, std::size_t> by_question_;
    std::uint64_t fingerprint_;
};

/// Parameters for generating a scripted world together with its dataset.
struct WorldSpec {
    std::size_t num_classes = 9;
    std::size_t train_problems = 270;
    std::size_t validation_problems = 0;
    std::size_t test_problems = 200;
    std::size_t sequence_length = 1;
    std::size_t num_options = 4;
    std::size_t filler_words = 2;
    std::size_t embedding_dim = 64;
    std::uint64_t seed = 1;
};

struct GeneratedWorld {
    ScenarioConfig scenario;
    std::vector<Problem> problems;
};

/// Problems fall into classes; each class has a keyword that appears in the
/// question and a hidden required strategy sequence drawn from the
/// non-Finish strategies. Held-out problems share the class rules.
GeneratedWorld generate_world(const WorldSpec& spec);

}  // namespace coplanner
