#include "coplanner/strategy_pool.hpp"

#include <algorithm>

#include "coplanner/errors.hpp"

namespace coplanner {

namespace {

constexpr std::array<std::string_view, kNumStrategies> kInstructions = {
    "Decompose the problem or the preceding step into easier-to-solve parts.",
    "Enumerate all potential candidates in the context of the given conditions and find the most promising one.",
    "Eliminate options that are incorrect or have a very low possibility of being correct.",
    "Review previous results and verify whether these results are correct. If not, find the error and correct it.",
    "Please return the selected option in JSON format.",
    "Draw a conclusion based on general truths, principles, given premises, or rules of inference.",
    "Start from a set of individual instances and generalize to arrive at a general conclusion.",
    "Make an educated guess based on the known information and verify this guess.",
    "Start from information about one system and infer information about another system based on the similarity "
    "between the two systems.",
    "Demonstrate that a statement is false by assuming it's true and then showing this leads to an impossible or "
    "absurd outcome.",
};

std::string join(const std::vector<std::string>& names) {
    std::string out = "[";
    for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ", " : "") + names[i];
    return out + "]";
}

}  // namespace

std::string_view instruction_text(MetaStrategy strategy) {
    return kInstructions.at(static_cast<std::size_t>(strategy));
}

std::optional<MetaStrategy> strategy_from_instruction(std::string_view text) {
    for (std::size_t i = 0; i < kInstructions.size(); ++i)
        if (text.find(kInstructions[i]) != std::string_view::npos) return static_cast<MetaStrategy>(i);
    return std::nullopt;
}

StrategyPool::StrategyPool() {
    for (std::size_t i = 0; i < kNumStrategies; ++i) entries_[i] = static_cast<MetaStrategy>(i);
}

const StrategyPool& StrategyPool::canonical() {
    static const StrategyPool pool;
    return pool;
}

MetaStrategy StrategyPool::at(std::size_t index) const {
    if (index >= entries_.size()) throw UsageError("strategy index " + std::to_string(index) + " out of range");
    return entries_[index];
}

std::size_t StrategyPool::index_of(MetaStrategy strategy) const {
    const auto it = std::find(entries_.begin(), entries_.end(), strategy);
    return static_cast<std::size_t>(it - entries_.begin());
}

std::vector<MetaStrategy> StrategyPool::candidates(const DialogueState&, bool force_finish) const {
    if (force_finish) return {MetaStrategy::Finish};
    return {entries_.begin(), entries_.end()};
}

std::vector<std::string> StrategyPool::names() const {
    std::vector<std::string> out;
    for (auto s : entries_) out.emplace_back(strategy_name(s));
    return out;
}

void StrategyPool::require_order(const std::vector<std::string>& names) const {
    const auto expected = this->names();
    if (names != expected)
        throw ConfigError("strategy order mismatch: checkpoint has " + join(names) + ", this build uses " + join(expected));
}

}  // namespace coplanner
