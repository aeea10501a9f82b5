#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coplanner/domain.hpp"

namespace coplanner {

/// Verbatim instruction handed to the hint generator for each strategy.
std::string_view instruction_text(MetaStrategy strategy);

/// Reverse lookup used by the scripted backend and the w/o-hint ablation.
std::optional<MetaStrategy> strategy_from_instruction(std::string_view text);

/// The fixed pool of meta-strategies. Index i always maps to the same
/// strategy; trained checkpoints depend on it.
class StrategyPool {
public:
    static const StrategyPool& canonical();

    std::span<const MetaStrategy> entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    MetaStrategy at(std::size_t index) const;
    std::size_t index_of(MetaStrategy strategy) const;

    /// [Finish] when forced, otherwise every strategy in pool order.
    std::vector<MetaStrategy> candidates(const DialogueState& state, bool force_finish) const;

    std::vector<std::string> names() const;
    /// Throws ConfigError naming both orders if `names` differs from the pool.
    void require_order(const std::vector<std::string>& names) const;

private:
    StrategyPool();
    std::array<MetaStrategy, kNumStrategies> entries_;
};

}  // namespace coplanner
