#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace coplanner {

enum class Split { Train, Validation, Test };

std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

struct Option {
    char label = 'A';
    std::string text;
};

/// A multiple-choice question. Labels run contiguously from 'A'.
struct Problem {
    std::string id;
    std::string question;
    std::vector<Option> options;
    char gold = 'A';
    Split split = Split::Train;

    /// Throws ConfigError if the option labels or gold label are inconsistent.
    void validate() const;
    std::string labels() const;
};

/// The planner's action vocabulary. Enumerator order is the canonical pool
/// order and doubles as the action index, so it must never be reordered.
enum class MetaStrategy : std::uint8_t {
    Decomposition,
    Enumeration,
    Elimination,
    Reflection,
    Finish,
    Deduction,
    Induction,
    Abduction,
    Analogy,
    Contradiction,
};

inline constexpr std::size_t kNumStrategies = 10;

std::string_view strategy_name(MetaStrategy strategy);
std::optional<MetaStrategy> strategy_from_name(std::string_view name);

/// One planner decision and the reasoner's response to it. `strategy` is
/// empty for hints sampled without a meta-strategy.
struct RoundRecord {
    std::optional<MetaStrategy> strategy;
    std::string hint;
    std::string thought;

    bool is_finish() const { return strategy == MetaStrategy::Finish; }
};

/// The query plus the reasoning history so far. Appending returns a new state;
/// the receiver is left untouched so every earlier snapshot stays valid.
class DialogueState {
public:
    explicit DialogueState(std::shared_ptr<const Problem> problem);

    const Problem& problem() const { return *problem_; }
    const std::shared_ptr<const Problem>& problem_ptr() const { return problem_; }
    const std::vector<RoundRecord>& rounds() const { return rounds_; }
    std::size_t round_index() const { return rounds_.size(); }

    DialogueState with_round(RoundRecord round) const;
    bool is_prefix_of(const DialogueState& other) const;

private:
    std::shared_ptr<const Problem> problem_;
    std::vector<RoundRecord> rounds_;
};

/// Question and options, one option per line.
std::string render_query(const Problem& problem);
/// One "Step k: ..." line per round; empty when there is no history.
std::string render_thoughts(const std::vector<RoundRecord>& rounds);
/// Full state text used for embedding. Newlines and backslashes inside
/// fields are escaped so distinct histories always render differently.
std::string state_render(const DialogueState& state);

std::string escape_line(std::string_view text);

bool answer_match(std::optional<char> extracted, char gold);

/// One planner decision as seen by the learner.
struct Transition {
    Eigen::VectorXd obs_embedding;
    Eigen::MatrixXd action_embeddings;  // d x N, one column per candidate
    std::size_t action_index = 0;
    double log_prob = 0.0;
    double value_estimate = 0.0;
    double reward = 0.0;
    bool done = false;
};

/// A prompt sent to the backend and what came back.
struct Exchange {
    std::string role;
    std::string prompt;
    std::string completion;
};

struct EpisodeRecord {
    std::string problem_id;
    char gold = 'A';
    std::vector<Transition> transitions;
    std::vector<RoundRecord> rounds;
    std::optional<char> extracted_answer;
    bool correct = false;
    bool malformed = false;  // final completion had no extractable answer
    bool failed = false;     // backend error aborted the episode
    bool truncated = false;  // thoughts were dropped to fit the context window
    int cot_fallbacks = 0;
    int unparsed_scores = 0;
    double wall_ms = 0.0;
    std::vector<Exchange> log;
};

// JSON conversions. Episode embeddings are optional on output because they
// dominate file size; readers accept both forms.
void to_json(nlohmann::json& j, const Problem& p);
void from_json(const nlohmann::json& j, Problem& p);
void to_json(nlohmann::json& j, const RoundRecord& r);
void from_json(const nlohmann::json& j, RoundRecord& r);
nlohmann::json episode_to_json(const EpisodeRecord& episode, bool with_embeddings, bool with_log);
EpisodeRecord episode_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

/// Reads the JSON Lines problem format. Throws ConfigError on a missing file
/// or an invalid record (the message carries the line number).
std::vector<Problem> load_problems(const std::filesystem::path& path);
void save_problems(const std::filesystem::path& path, const std::vector<Problem>& problems);
std::vector<Problem> filter_split(const std::vector<Problem>& problems, Split split);
/// Moves `count` randomly chosen training problems into the validation split.
void carve_validation(std::vector<Problem>& problems, std::size_t count, std::uint64_t seed);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace coplanner
