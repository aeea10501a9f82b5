#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coplanner/nets.hpp"

namespace coplanner {

/// Everything needed to resume training or run inference.
struct Checkpoint {
    std::vector<std::string> strategy_order;
    PolicyParams policy;
    ValueParams value;
    Adam policy_optimizer;
    Adam value_optimizer;
    std::string rng_state;     // std::mt19937_64 textual state, may be empty
    std::int64_t env_steps = 0;
    std::int64_t updates = 0;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t input_dim() const { return policy.input_dim(); }
    std::size_t hidden_dim() const { return policy.hidden_dim(); }
};

/// Fresh checkpoint with the canonical strategy order and fresh optimizers.
Checkpoint make_checkpoint(PolicyParams policy, ValueParams value);

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
/// Validates every tensor shape against the recorded d and h, and the
/// strategy order against the canonical pool.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coplanner
