#include "coplanner/domain.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "coplanner/errors.hpp"

namespace coplanner {

namespace {

constexpr std::array<std::string_view, kNumStrategies> kStrategyNames = {
    "Decomposition", "Enumeration", "Elimination", "Reflection", "Finish",
    "Deduction",     "Induction",   "Abduction",   "Analogy",    "Contradiction",
};

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

char label_from_json(const nlohmann::json& j, const char* field) {
    const auto s = j.get<std::string>();
    if (s.size() != 1 || !std::isalpha(static_cast<unsigned char>(s[0])))
        throw ConfigError(std::string("field '") + field + "' must be a single letter, got '" + s + "'");
    return static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
}

}  // namespace

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_name(std::string_view name) {
    if (iequals(name, "train")) return Split::Train;
    if (iequals(name, "validation") || iequals(name, "val") || iequals(name, "dev")) return Split::Validation;
    if (iequals(name, "test")) return Split::Test;
    throw ConfigError("unknown split '" + std::string(name) + "'");
}

void Problem::validate() const {
    if (options.size() < 2) throw ConfigError("problem '" + id + "' needs at least 2 options");
    if (options.size() > 26) throw ConfigError("problem '" + id + "' has more than 26 options");
    for (std::size_t i = 0; i < options.size(); ++i) {
        const char expected = static_cast<char>('A' + i);
        if (options[i].label != expected)
            throw ConfigError("problem '" + id + "': option " + std::to_string(i) + " has label '" +
                              std::string(1, options[i].label) + "', expected '" + std::string(1, expected) + "'");
    }
    if (gold < 'A' || gold >= static_cast<char>('A' + options.size()))
        throw ConfigError("problem '" + id + "': gold label '" + std::string(1, gold) + "' is not an option");
}

std::string Problem::labels() const {
    std::string out;
    for (const auto& o : options) out.push_back(o.label);
    return out;
}

std::string_view strategy_name(MetaStrategy strategy) {
    return kStrategyNames.at(static_cast<std::size_t>(strategy));
}

std::optional<MetaStrategy> strategy_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kStrategyNames.size(); ++i)
        if (iequals(name, kStrategyNames[i])) return static_cast<MetaStrategy>(i);
    return std::nullopt;
}

DialogueState::DialogueState(std::shared_ptr<const Problem> problem) : problem_(std::move(problem)) {
    if (!problem_) throw UsageError("DialogueState requires a problem");
}

DialogueState DialogueState::with_round(RoundRecord round) const {
    DialogueState next = *this;
    next.rounds_.push_back(std::move(round));
    return next;
}

bool DialogueState::is_prefix_of(const DialogueState& other) const {
    if (problem_->id != other.problem_->id || rounds_.size() > other.rounds_.size()) return false;
    for (std::size_t i = 0; i < rounds_.size(); ++i) {
        const auto& a = rounds_[i];
        const auto& b = other.rounds_[i];
        if (a.strategy != b.strategy || a.hint != b.hint || a.thought != b.thought) return false;
    }
    return true;
}

std::string escape_line(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string render_query(const Problem& problem) {
    std::string out = "Question: " + escape_line(problem.question) + "\nOptions:";
    for (const auto& o : problem.options) {
        out += "\n(";
        out.push_back(o.label);
        out += ") " + escape_line(o.text);
    }
    return out;
}

std::string render_thoughts(const std::vector<RoundRecord>& rounds) {
    std::string out;
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        if (i) out.push_back('\n');
        out += "Step " + std::to_string(i + 1) + ": " + escape_line(rounds[i].thought);
    }
    return out;
}

std::string state_render(const DialogueState& state) {
    std::string out = render_query(state.problem());
    if (state.round_index() > 0) out += "\nThoughts:\n" + render_thoughts(state.rounds());
    return out;
}

bool answer_match(std::optional<char> extracted, char gold) {
    if (!extracted) return false;
    return std::toupper(static_cast<unsigned char>(*extracted)) == std::toupper(static_cast<unsigned char>(gold));
}

// ---- JSON -------------------------------------------------------------------

void to_json(nlohmann::json& j, const Problem& p) {
    nlohmann::json options = nlohmann::json::array();
    for (const auto& o : p.options) options.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
    j = {{"id", p.id},
         {"question", p.question},
         {"options", std::move(options)},
         {"gold", std::string(1, p.gold)},
         {"split", std::string(split_name(p.split))}};
}

void from_json(const nlohmann::json& j, Problem& p) {
    p.id = j.at("id").get<std::string>();
    p.question = j.at("question").get<std::string>();
    p.options.clear();
    for (const auto& o : j.at("options")) p.options.push_back({label_from_json(o.at("label"), "label"), o.at("text").get<std::string>()});
    p.gold = label_from_json(j.at("gold"), "gold");
    p.split = j.contains("split") ? split_from_name(j.at("split").get<std::string>()) : Split::Train;
    p.validate();
}

void to_json(nlohmann::json& j, const RoundRecord& r) {
    j = {{"strategy", r.strategy ? nlohmann::json(std::string(strategy_name(*r.strategy))) : nlohmann::json()},
         {"hint", r.hint},
         {"thought", r.thought}};
}

void from_json(const nlohmann::json& j, RoundRecord& r) {
    r.strategy.reset();
    if (j.contains("strategy") && !j.at("strategy").is_null()) {
        const auto name = j.at("strategy").get<std::string>();
        r.strategy = strategy_from_name(name);
        if (!r.strategy) throw ParseError("unknown strategy '" + name + "'");
    }
    r.hint = j.value("hint", "");
    r.thought = j.value("thought", "");
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
        throw ShapeError("matrix record declares " + std::to_string(rows) + "x" + std::to_string(cols) + " but holds " +
                         std::to_string(data.size()) + " values");
    return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

nlohmann::json episode_to_json(const EpisodeRecord& e, bool with_embeddings, bool with_log) {
    nlohmann::json transitions = nlohmann::json::array();
    for (const auto& t : e.transitions) {
        nlohmann::json tj = {{"action_index", t.action_index},
                             {"num_actions", t.action_embeddings.cols()},
                             {"log_prob", t.log_prob},
                             {"value_estimate", t.value_estimate},
                             {"reward", t.reward},
                             {"done", t.done}};
        if (with_embeddings && t.obs_embedding.size() > 0) {
            tj["obs_embedding"] = vector_to_json(t.obs_embedding);
            tj["action_embeddings"] = matrix_to_json(t.action_embeddings);
        }
        transitions.push_back(std::move(tj));
    }
    nlohmann::json j = {{"problem_id", e.problem_id},
                        {"gold", std::string(1, e.gold)},
                        {"rounds", e.rounds},
                        {"transitions", std::move(transitions)},
                        {"extracted_answer", e.extracted_answer ? nlohmann::json(std::string(1, *e.extracted_answer)) : nlohmann::json()},
                        {"correct", e.correct},
                        {"malformed", e.malformed},
                        {"failed", e.failed},
                        {"truncated", e.truncated},
                        {"cot_fallbacks", e.cot_fallbacks},
                        {"unparsed_scores", e.unparsed_scores}};
    if (with_log) {
        nlohmann::json log = nlohmann::json::array();
        for (const auto& x : e.log) log.push_back({{"role", x.role}, {"prompt", x.prompt}, {"completion", x.completion}});
        j["log"] = std::move(log);
    }
    return j;
}

EpisodeRecord episode_from_json(const nlohmann::json& j) {
    EpisodeRecord e;
    e.problem_id = j.at("problem_id").get<std::string>();
    e.gold = label_from_json(j.at("gold"), "gold");
    e.rounds = j.at("rounds").get<std::vector<RoundRecord>>();
    for (const auto& tj : j.at("transitions")) {
        Transition t;
        t.action_index = tj.at("action_index").get<std::size_t>();
        t.log_prob = tj.value("log_prob", 0.0);
        t.value_estimate = tj.value("value_estimate", 0.0);
        t.reward = tj.value("reward", 0.0);
        t.done = tj.value("done", false);
        if (tj.contains("obs_embedding")) {
            t.obs_embedding = vector_from_json(tj.at("obs_embedding"));
            t.action_embeddings = matrix_from_json(tj.at("action_embeddings"));
            if (t.action_embeddings.rows() != t.obs_embedding.size())
                throw ShapeError("transition action_embeddings rows (" + std::to_string(t.action_embeddings.rows()) +
                                 ") != obs_embedding size (" + std::to_string(t.obs_embedding.size()) + ")");
            if (t.action_index >= static_cast<std::size_t>(t.action_embeddings.cols()))
                throw ShapeError("transition action_index out of range");
        }
        e.transitions.push_back(std::move(t));
    }
    if (j.contains("extracted_answer") && !j.at("extracted_answer").is_null())
        e.extracted_answer = label_from_json(j.at("extracted_answer"), "extracted_answer");
    e.correct = j.value("correct", false);
    e.malformed = j.value("malformed", false);
    e.failed = j.value("failed", false);
    e.truncated = j.value("truncated", false);
    e.cot_fallbacks = j.value("cot_fallbacks", 0);
    e.unparsed_scores = j.value("unparsed_scores", 0);
    if (j.contains("log"))
        for (const auto& x : j.at("log"))
            e.log.push_back({x.value("role", ""), x.value("prompt", ""), x.value("completion", "")});
    return e;
}

// ---- files ------------------------------------------------------------------

std::vector<Problem> load_problems(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read dataset '" + path.string() + "'");
    std::vector<Problem> problems;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto p = nlohmann::json::parse(line).get<Problem>();
            if (!ids.insert(p.id).second) throw ConfigError("duplicate id '" + p.id + "'");
            problems.push_back(std::move(p));
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        } catch (const ConfigError& ex) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return problems;
}

void save_problems(const std::filesystem::path& path, const std::vector<Problem>& problems) {
    std::string out;
    for (const auto& p : problems) out += nlohmann::json(p).dump() + "\n";
    write_file_atomic(path, out);
}

std::vector<Problem> filter_split(const std::vector<Problem>& problems, Split split) {
    std::vector<Problem> out;
    std::copy_if(problems.begin(), problems.end(), std::back_inserter(out), [&](const Problem& p) { return p.split == split; });
    return out;
}

void carve_validation(std::vector<Problem>& problems, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < problems.size(); ++i)
        if (problems[i].split == Split::Train) train.push_back(i);
    if (count > train.size()) throw ConfigError("cannot carve " + std::to_string(count) + " validation problems from " +
                                                std::to_string(train.size()) + " training problems");
    std::mt19937_64 rng(seed);
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t i = 0; i < count; ++i) problems[train[i]].split = Split::Validation;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw ConfigError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace coplanner
