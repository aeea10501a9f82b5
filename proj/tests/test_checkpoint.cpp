#include <doctest.h>

#include <fstream>
#include <sstream>

#include "coplanner/checkpoint.hpp"
#include "coplanner/errors.hpp"
#include "oracles.hpp"

using namespace coplanner;

namespace {

Checkpoint sample_checkpoint() {
    std::mt19937_64 rng(11);
    auto c = make_checkpoint(PolicyParams::init(6, 4, rng), ValueParams::init(6, 4, rng));
    c.policy_optimizer.step(c.policy, PolicyParams::init(6, 4, rng), 1e-3);
    std::ostringstream state;
    state << rng;
    c.rng_state = state.str();
    c.env_steps = 1234;
    c.updates = 7;
    c.meta = {{"source", "test"}};
    return c;
}

}  // namespace

TEST_CASE("checkpoint: save and load reproduce every field") {
    const auto dir = oracle::scratch_dir("checkpoint");
    const auto c = sample_checkpoint();
    save_checkpoint(dir / "c.json", c);
    const auto back = load_checkpoint(dir / "c.json");
    CHECK(back.strategy_order == c.strategy_order);
    CHECK(back.policy.w_q == c.policy.w_q);
    CHECK(back.policy.w_k == c.policy.w_k);
    CHECK(back.value.w_v == c.value.w_v);
    CHECK(back.policy_optimizer.to_json() == c.policy_optimizer.to_json());
    CHECK(back.value_optimizer.to_json() == c.value_optimizer.to_json());
    CHECK(back.rng_state == c.rng_state);
    CHECK(back.env_steps == 1234);
    CHECK(back.updates == 7);
    CHECK(back.meta == c.meta);
    CHECK(checkpoint_to_json(back).dump() == checkpoint_to_json(c).dump());
}

TEST_CASE("checkpoint: a different strategy order is rejected with both orders named") {
    auto j = checkpoint_to_json(sample_checkpoint());
    std::swap(j["strategy_order"][0], j["strategy_order"][1]);
    try {
        checkpoint_from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("Enumeration, Decomposition") != std::string::npos);
        CHECK(msg.find("Decomposition, Enumeration") != std::string::npos);
    }
}

TEST_CASE("checkpoint: tensor shapes are checked against d and h") {
    auto j = checkpoint_to_json(sample_checkpoint());
    j["d"] = 5;
    CHECK_THROWS_AS(checkpoint_from_json(j), ShapeError);

    auto k = checkpoint_to_json(sample_checkpoint());
    k["value"] = value_to_json(ValueParams::zeros(6, 3));
    CHECK_THROWS_AS(checkpoint_from_json(k), ShapeError);

    auto m = checkpoint_to_json(sample_checkpoint());
    m["policy_optimizer"] = Adam::for_params(PolicyParams::zeros(6, 5)).to_json();
    CHECK_THROWS_AS(checkpoint_from_json(m), ShapeError);
}

TEST_CASE("checkpoint: unreadable or foreign files are config errors") {
    const auto dir = oracle::scratch_dir("checkpoint_bad");
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.json"), ConfigError);
    std::ofstream(dir / "junk.json") << "not json";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.json"), ConfigError);
    CHECK_THROWS_AS(checkpoint_from_json({{"format", "other"}}), ConfigError);
    auto j = checkpoint_to_json(sample_checkpoint());
    j.erase("policy");
    CHECK_THROWS_AS(checkpoint_from_json(j), ConfigError);
    auto v = checkpoint_to_json(sample_checkpoint());
    v["version"] = 99;
    CHECK_THROWS_AS(checkpoint_from_json(v), ConfigError);
}
