#include "coplanner/checkpoint.hpp"

#include <fstream>

#include "coplanner/domain.hpp"
#include "coplanner/errors.hpp"
#include "coplanner/strategy_pool.hpp"

namespace coplanner {

namespace {

constexpr const char* kFormat = "coplanner-checkpoint";
constexpr int kFormatVersion = 1;

void require_shape(const std::string& name, Eigen::Index rows, Eigen::Index cols, std::size_t d, std::size_t h) {
    if (rows != static_cast<Eigen::Index>(d) || cols != static_cast<Eigen::Index>(h))
        throw ShapeError("checkpoint tensor " + name + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", expected " + std::to_string(d) + "x" + std::to_string(h));
}

template <class Params>
void require_optimizer(const Adam& opt, const Params& params, const std::string& name) {
    Adam fresh = Adam::for_params(params);
    const auto a = opt.to_json();
    const auto b = fresh.to_json();
    if (a.at("m").size() != b.at("m").size())
        throw ShapeError("checkpoint " + name + " optimizer tracks " + std::to_string(a.at("m").size()) + " tensors");
    for (std::size_t i = 0; i < a.at("m").size(); ++i)
        if (a.at("m")[i].size() != b.at("m")[i].size())
            throw ShapeError("checkpoint " + name + " optimizer tensor " + std::to_string(i) + " has the wrong size");
}

}  // namespace

Checkpoint make_checkpoint(PolicyParams policy, ValueParams value) {
    Checkpoint c;
    c.strategy_order = StrategyPool::canonical().names();
    c.policy_optimizer = Adam::for_params(policy);
    c.value_optimizer = Adam::for_params(value);
    c.policy = std::move(policy);
    c.value = std::move(value);
    return c;
}

nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    return {{"format", kFormat},
            {"version", kFormatVersion},
            {"d", c.input_dim()},
            {"h", c.hidden_dim()},
            {"strategy_order", c.strategy_order},
            {"policy", policy_to_json(c.policy)},
            {"value", value_to_json(c.value)},
            {"policy_optimizer", c.policy_optimizer.to_json()},
            {"value_optimizer", c.value_optimizer.to_json()},
            {"rng_state", c.rng_state},
            {"env_steps", c.env_steps},
            {"updates", c.updates},
            {"meta", c.meta}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string()) != kFormat) throw ConfigError("not a coplanner checkpoint");
        if (j.at("version").get<int>() != kFormatVersion)
            throw ConfigError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        Checkpoint c;
        c.strategy_order = j.at("strategy_order").get<std::vector<std::string>>();
        StrategyPool::canonical().require_order(c.strategy_order);

        const auto d = j.at("d").get<std::size_t>();
        const auto h = j.at("h").get<std::size_t>();
        c.policy = policy_from_json(j.at("policy"));
        c.value = value_from_json(j.at("value"));
        require_shape("policy.w_q", c.policy.w_q.rows(), c.policy.w_q.cols(), d, h);
        require_shape("policy.w_k", c.policy.w_k.rows(), c.policy.w_k.cols(), d, h);
        require_shape("value.w_q", c.value.w_q.rows(), c.value.w_q.cols(), d, h);
        require_shape("value.w_k", c.value.w_k.rows(), c.value.w_k.cols(), d, h);
        require_shape("value.w_v", c.value.w_v.rows(), c.value.w_v.cols(), d, h);
        require_shape("value.query_token", c.value.query_token.size(), 1, d, 1);
        require_shape("value.w_out", c.value.w_out.size(), 1, h, 1);

        c.policy_optimizer = Adam::from_json(j.at("policy_optimizer"));
        c.value_optimizer = Adam::from_json(j.at("value_optimizer"));
        require_optimizer(c.policy_optimizer, c.policy, "policy");
        require_optimizer(c.value_optimizer, c.value, "value");

        c.rng_state = j.value("rng_state", std::string());
        c.env_steps = j.value("env_steps", std::int64_t{0});
        c.updates = j.value("updates", std::int64_t{0});
        c.meta = j.value("meta", nlohmann::json::object());
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("malformed checkpoint: ") + ex.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_file_atomic(path, checkpoint_to_json(checkpoint).dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint '" + path.string() + "'");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("checkpoint '" + path.string() + "' is not valid JSON");
    return checkpoint_from_json(j);
}

}  // namespace coplanner
