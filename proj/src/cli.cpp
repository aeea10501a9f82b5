#include "coplanner/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "coplanner/bc.hpp"
#include "coplanner/checkpoint.hpp"
#include "coplanner/errors.hpp"
#include "coplanner/http_backend.hpp"
#include "coplanner/orchestrator.hpp"
#include "coplanner/ppo.hpp"
#include "coplanner/scripted_world.hpp"
#include "coplanner/strategy_pool.hpp"

#ifndef COPLANNER_VERSION
#define COPLANNER_VERSION "dev"
#endif

namespace coplanner::cli {

namespace fs = std::filesystem;

namespace {

struct RunConfig {
    std::uint64_t seed = 0;
    std::string backend = "mock";
    std::string scenario;
    std::string data;
    std::string out;
    std::vector<std::size_t> rounds{2};
    std::string policy = "learned";
    std::string mode = "pick-strategy";
    bool no_filter = false;
    bool from_scratch = false;
    std::string reward_scheme = "pm1";
    std::size_t workers = 1;
    std::string checkpoint;
    std::string trajectories;
    std::string difficulty;
    std::string split = "test";
    std::size_t hidden = 64;
    int max_tokens = 512;
    bool no_hint = false;
    bool no_strategy = false;
    bool exclude_failed = false;
    std::size_t demos = 3;
    std::size_t validation_size = 0;

    // world generation
    std::size_t classes = 9;
    std::size_t train_size = 270;
    std::size_t val_size = 0;
    std::size_t test_size = 200;
    std::size_t sequence_length = 1;
    std::size_t dim = 64;

    // http
    std::string base_url;
    std::string model = "default";
    std::string embedding_model = "default";
    std::size_t embedding_dim = 0;

    // collection
    std::size_t samples = 32;
    bool allow_round0_finish = false;

    BcConfig bc;
    PpoConfig ppo;
    bool no_adv_norm = false;
    std::size_t checkpoint_every = 0;
    double filter_lo = 0.05;
    double filter_hi = 0.90;
};

/// Holds an output directory for the lifetime of one command.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        if (!fs::create_directory(path_))
            throw UsageError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    }
    ~DirectoryLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    fs::path path_;
};

std::unique_ptr<Gateway> make_gateway(const RunConfig& c) {
    if (c.backend == "mock") {
        if (c.scenario.empty()) throw UsageError("the mock backend needs --scenario");
        return std::make_unique<ScriptedWorld>(ScriptedWorld::from_file(c.scenario));
    }
    if (c.backend == "http") {
        HttpBackendConfig hc;
        hc.base_url = c.base_url;
        hc.model = c.model;
        hc.embedding_model = c.embedding_model;
        hc.embedding_dim = c.embedding_dim;
        hc.apply_environment();
        if (hc.base_url.empty()) throw UsageError("the http backend needs --base-url or COPLANNER_BASE_URL");
        return std::make_unique<HttpGateway>(std::move(hc));
    }
    throw UsageError("unknown backend '" + c.backend + "' (valid: mock, http)");
}

std::vector<Problem> load_dataset(const RunConfig& c) {
    if (c.data.empty()) throw UsageError("missing --data (problems JSONL)");
    if (!fs::exists(c.data)) throw UsageError("dataset " + c.data + " does not exist");
    auto problems = load_problems(c.data);
    if (c.validation_size > 0) carve_validation(problems, c.validation_size, c.seed);
    return problems;
}

fs::path out_path(const RunConfig& c, const std::string& configured, const std::string& fallback) {
    return configured.empty() ? fs::path(c.out) / fallback : fs::path(configured);
}

void write_manifest(const RunConfig& c, const std::string& command, const CLI::App& app,
                    const std::vector<std::string>& args, const std::string& backend_identity,
                    const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json m = {{"command", command},
                        {"args", args},
                        {"seed", c.seed},
                        {"version", COPLANNER_VERSION},
                        {"backend", c.backend},
                        {"backend_identity", backend_identity},
                        {"config", app.config_to_str(true, false)},
                        {"strategy_order", StrategyPool::canonical().names()}};
    m.update(extra);
    write_file_atomic(fs::path(c.out) / ("manifest-" + command + ".json"), m.dump(2) + "\n");
}

PlanningMode planning_mode(const RunConfig& c) { return mode_from_name(c.mode); }

// ---- commands -------------------------------------------------------------------------

int cmd_make_world(const RunConfig& c, const CLI::App& app, const std::vector<std::string>& args,
                   std::ostream& out) {
    WorldSpec spec;
    spec.num_classes = c.classes;
    spec.train_problems = c.train_size;
    spec.validation_problems = c.val_size;
    spec.test_problems = c.test_size;
    spec.sequence_length = c.sequence_length;
    spec.embedding_dim = c.dim;
    spec.seed = c.seed;
    const auto world = generate_world(spec);
    const fs::path dir(c.out);
    write_file_atomic(dir / "scenario.json", ScriptedWorld::scenario_to_json(world.scenario).dump(2) + "\n");
    save_problems(dir / "problems.jsonl", world.problems);
    write_manifest(c, "make-world", app, args, ScriptedWorld(world.scenario).identity());
    out << "wrote " << world.problems.size() << " problems to " << (dir / "problems.jsonl").string() << " and "
        << (dir / "scenario.json").string() << "\n";
    return 0;
}

int cmd_collect_bc(const RunConfig& c, const CLI::App& app, const std::vector<std::string>& args,
                   std::ostream& out) {
    const auto problems = filter_split(load_dataset(c), Split::Train);
    if (problems.empty()) throw UsageError("dataset has no training problems");
    const auto gateway = make_gateway(c);
    const Orchestrator orchestrator(*gateway);

    CollectConfig cc;
    cc.samples_per_problem = c.samples;
    cc.max_rounds = c.rounds.front();
    cc.mode = planning_mode(c);
    cc.exclude_finish_at_round0 = !c.allow_round0_finish;
    cc.reward = reward_scheme_from_name(c.reward_scheme);
    cc.seed = c.seed;
    cc.workers = c.workers;
    const auto result = collect_bc_trajectories(problems, orchestrator, cc);

    std::string store;
    std::size_t successes = 0;
    for (const auto& e : result.episodes) {
        if (e.correct) ++successes;
        store += episode_to_json(e, e.correct, false).dump() + "\n";
    }
    write_file_atomic(out_path(c, c.trajectories, "trajectories.jsonl"), store);
    write_file_atomic(out_path(c, c.difficulty, "difficulty.csv"), difficulty_to_csv(result.difficulty));
    write_manifest(c, "collect-bc", app, args, gateway->identity(),
                   {{"episodes", result.episodes.size()}, {"failed", result.failed}});

    const auto counted = result.episodes.size() - result.failed;
    out << "problems: " << problems.size() << "\nepisodes: " << result.episodes.size() << "\nfailed: " << result.failed
        << "\nsuccess rate: " << (counted ? static_cast<double>(successes) / static_cast<double>(counted) : 0.0)
        << "\nbc pairs: " << bc_pairs_from(result.episodes).size() << "\n";
    return 0;
}

std::vector<EpisodeRecord> read_store(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read trajectory store " + path.string());
    std::vector<EpisodeRecord> episodes;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        try {
            episodes.push_back(episode_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return episodes;
}

int cmd_train_bc(const RunConfig& c, const CLI::App& app, const std::vector<std::string>& args, std::ostream& out) {
    const auto pairs = bc_pairs_from(read_store(out_path(c, c.trajectories, "trajectories.jsonl")));
    if (pairs.empty()) throw ConfigError("the trajectory store holds no successful state-action pairs");
    const auto d = static_cast<std::size_t>(pairs.front().obs.size());

    std::mt19937_64 rng(c.seed);
    auto init = PolicyParams::init(d, c.hidden, rng);
    auto value = ValueParams::init(d, c.hidden, rng);
    auto bc = c.bc;
    bc.seed = c.seed;
    const auto result = train_bc(pairs, init, bc);

    auto ckpt = make_checkpoint(result.params, value);
    ckpt.meta = {{"stage", "bc"},
                 {"val_accuracy", result.val_accuracy},
                 {"train_accuracy", result.train_accuracy},
                 {"best_step", result.best_step},
                 {"pairs", pairs.size()}};
    const auto path = out_path(c, c.checkpoint, "bc_checkpoint.json");
    save_checkpoint(path, ckpt);
    write_manifest(c, "train-bc", app, args, "", {{"checkpoint", path.string()}});
    out << "pairs: " << pairs.size() << " (train " << result.train_size << ", val " << result.val_size << ")\n"
        << "val accuracy: " << result.val_accuracy << "\ntrain accuracy: " << result.train_accuracy
        << "\nbest step: " << result.best_step << "\ncheckpoint: " << path.string() << "\n";
    return 0;
}

int cmd_train_ppo(const RunConfig& c, const CLI::App& app, const std::vector<std::string>& args,
                  std::ostream& out) {
    auto problems = filter_split(load_dataset(c), Split::Train);
    if (!c.no_filter) {
        const auto table = difficulty_from_csv(out_path(c, c.difficulty, "difficulty.csv"));
        const auto keep = curriculum_filter(table, c.filter_lo, c.filter_hi);
        std::erase_if(problems, [&](const Problem& p) { return !keep.count(p.id); });
    }
    if (problems.empty()) throw ConfigError("no training problems left after the curriculum filter");

    const auto gateway = make_gateway(c);
    const Orchestrator orchestrator(*gateway);
    const auto d = static_cast<std::size_t>(orchestrator.strategy_embeddings().rows());

    Checkpoint ckpt;
    const auto init_path = out_path(c, c.checkpoint, "bc_checkpoint.json");
    if (c.from_scratch) {
        std::mt19937_64 rng(c.seed);
        auto policy = PolicyParams::init(d, c.hidden, rng);
        auto value = ValueParams::init(d, c.hidden, rng);
        ckpt = make_checkpoint(std::move(policy), std::move(value));
    } else {
        if (!fs::exists(init_path)) throw UsageError("checkpoint " + init_path.string() + " not found (or pass --from-scratch)");
        ckpt = load_checkpoint(init_path);
    }
    if (ckpt.input_dim() != d)
        throw ConfigError("checkpoint input dimension " + std::to_string(ckpt.input_dim()) +
                          " does not match the backend embedding dimension " + std::to_string(d));

    auto cfg = c.ppo;
    cfg.max_rounds = c.rounds.front();
    cfg.normalize_advantages = !c.no_adv_norm;

    const fs::path dir(c.out);
    const auto metrics_path = dir / "metrics.csv";
    const auto ckpt_path = dir / "ppo_checkpoint.json";
    std::string metrics = metrics_csv_header() + "\n";
    if (ckpt.env_steps > 0 && fs::exists(metrics_path)) {
        std::ifstream in(metrics_path);
        std::stringstream ss;
        ss << in.rdbuf();
        metrics = ss.str();
    }

    EpisodeOptions options;
    options.max_rounds = cfg.max_rounds;
    options.reward = reward_scheme_from_name(c.reward_scheme);
    options.max_tokens = c.max_tokens;
    options.keep_log = false;
    OrchestratorSource source(orchestrator, problems, options, planning_mode(c));

    const std::int64_t start_steps = ckpt.env_steps;
    PpoTrainer trainer(std::move(ckpt), cfg, c.seed);
    std::size_t updates = 0;
    trainer.train(source, [&](const UpdateMetrics& m, const PpoTrainer& t) {
        metrics += metrics_csv_row(m) + "\n";
        write_file_atomic(metrics_path, metrics);
        ++updates;
        if (c.checkpoint_every > 0 && updates % c.checkpoint_every == 0) save_checkpoint(ckpt_path, t.checkpoint());
    });
    auto final_ckpt = trainer.checkpoint();
    final_ckpt.meta["stage"] = "ppo";
    final_ckpt.meta["training_problems"] = problems.size();
    save_checkpoint(ckpt_path, final_ckpt);
    write_file_atomic(metrics_path, metrics);
    write_manifest(c, "train-ppo", app, args, gateway->identity(),
                   {{"training_problems", problems.size()}, {"start_env_steps", start_steps}});
    out << "training problems: " << problems.size() << "\nupdates: " << updates
        << "\nenv steps: " << trainer.env_steps() << "\ncheckpoint: " << ckpt_path.string()
        << "\nmetrics: " << metrics_path.string() << "\n";
    return 0;
}

const std::vector<std::string> kPolicyNames = {"learned", "random", "cot", "tot", "direct", "fewshot", "cot-prompt"};

int cmd_eval(const RunConfig& c, const CLI::App& app, const std::vector<std::string>& args, std::ostream& out) {
    if (std::find(kPolicyNames.begin(), kPolicyNames.end(), c.policy) == kPolicyNames.end()) {
        std::string valid;
        for (const auto& n : kPolicyNames) valid += (valid.empty() ? "" : ", ") + n;
        throw UsageError("unknown policy '" + c.policy + "' (valid: " + valid + ")");
    }
    const auto all = load_dataset(c);
    const auto problems = filter_split(all, split_from_name(c.split));
    if (problems.empty()) throw ConfigError("split '" + c.split + "' has no problems");
    const auto gateway = make_gateway(c);
    const Orchestrator orchestrator(*gateway);

    EvalOptions eo;
    eo.seed = c.seed;
    eo.exclude_failed = c.exclude_failed;
    eo.workers = c.workers;
    eo.episode.reward = reward_scheme_from_name(c.reward_scheme);
    eo.episode.max_tokens = c.max_tokens;

    std::optional<PlannerPolicy> policy;
    std::optional<prompts::PromptBaseline> baseline;
    if (c.policy == "learned") {
        const auto path = out_path(c, c.checkpoint, "ppo_checkpoint.json");
        if (!fs::exists(path)) throw UsageError("checkpoint " + path.string() + " not found");
        const auto ckpt = load_checkpoint(path);
        if (ckpt.input_dim() != static_cast<std::size_t>(orchestrator.strategy_embeddings().rows()))
            throw ConfigError("checkpoint input dimension does not match the backend embedding dimension");
        policy = PlannerPolicy::learned(std::make_shared<const PolicyParams>(ckpt.policy), planning_mode(c));
    } else if (c.policy == "random") {
        policy = PlannerPolicy::random(planning_mode(c));
    } else if (c.policy == "cot") {
        policy = PlannerPolicy::cot();
    } else if (c.policy == "tot") {
        policy = PlannerPolicy::tot();
    } else {
        baseline = prompts::baseline_from_name(c.policy);
    }
    if (policy) {
        policy->raw_instruction_hints = c.no_hint;
        policy->unconditioned_hints = c.no_strategy;
        policy->validate();
    }

    std::vector<Problem> demos;
    if (baseline == prompts::PromptBaseline::FewShot) {
        for (const auto& p : all)
            if (p.split == Split::Train && demos.size() < c.demos) demos.push_back(p);
    }

    nlohmann::json summary = nlohmann::json::array();
    const fs::path dir(c.out);
    const std::vector<std::size_t> rounds = baseline ? std::vector<std::size_t>{0} : c.rounds;
    for (auto r : rounds) {
        eo.episode.max_rounds = r;
        const auto report = baseline ? orchestrator.evaluate_baseline(problems, *baseline, demos, eo)
                                     : orchestrator.evaluate(problems, *policy, eo);
        const auto name = "eval-" + c.policy + "-r" + std::to_string(r);
        write_file_atomic(dir / (name + ".json"), report.to_json(false).dump(2) + "\n");
        std::string log;
        for (const auto& e : report.episodes) log += episode_to_json(e, false, true).dump() + "\n";
        write_file_atomic(dir / (name + ".episodes.jsonl"), log);
        summary.push_back(report.to_json(false));
        out << report.table();
    }
    write_file_atomic(dir / ("eval-" + c.policy + "-summary.json"), summary.dump(2) + "\n");
    write_manifest(c, "eval-" + c.policy, app, args, gateway->identity());
    return 0;
}

void add_options(CLI::App& app, RunConfig& c) {
    app.set_config("--config", "", "TOML config file; keys mirror the long flag names");
    app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
    app.add_option("--backend", c.backend, "Backend: mock or http")->capture_default_str();
    app.add_option("--scenario", c.scenario, "Scripted-world scenario JSON (mock backend)");
    app.add_option("--data", c.data, "Problems JSONL");
    app.add_option("--out", c.out, "Output directory")->required();
    app.add_option("--rounds", c.rounds, "Maximum rounds; several values sweep in eval")->capture_default_str();
    app.add_option("--policy", c.policy, "learned, random, cot, tot, direct, fewshot, cot-prompt")->capture_default_str();
    app.add_option("--mode", c.mode, "pick-strategy or pick-hint")->capture_default_str();
    app.add_flag("--no-filter", c.no_filter, "Train PPO on all problems, ignoring difficulty");
    app.add_flag("--from-scratch", c.from_scratch, "Start PPO from random parameters instead of BC");
    app.add_option("--reward-scheme", c.reward_scheme, "pm1 or zero-one")->capture_default_str();
    app.add_option("--workers", c.workers, "Parallel episodes")->capture_default_str();
    app.add_option("--checkpoint", c.checkpoint, "Checkpoint path (input for train-ppo and eval, output for train-bc)");
    app.add_option("--trajectories", c.trajectories, "Trajectory store (default <out>/trajectories.jsonl)");
    app.add_option("--difficulty", c.difficulty, "Difficulty table (default <out>/difficulty.csv)");
    app.add_option("--split", c.split, "Evaluation split: train, validation, test")->capture_default_str();
    app.add_option("--validation-size", c.validation_size, "Carve this many validation problems from train")
        ->capture_default_str();
    app.add_option("--hidden", c.hidden, "Hidden size of both networks")->capture_default_str();
    app.add_option("--max-tokens", c.max_tokens, "Completion token limit")->capture_default_str();
    app.add_flag("--no-hint", c.no_hint, "Pass the raw strategy instruction as the hint");
    app.add_flag("--no-strategy", c.no_strategy, "Pick among unconditioned hints (pick-hint mode)");
    app.add_flag("--exclude-failed", c.exclude_failed, "Drop failed episodes from accuracy denominators");
    app.add_option("--demos", c.demos, "Few-shot demonstrations")->capture_default_str();

    app.add_option("--classes", c.classes, "make-world: problem classes")->capture_default_str();
    app.add_option("--train-size", c.train_size, "make-world: training problems")->capture_default_str();
    app.add_option("--val-size", c.val_size, "make-world: validation problems")->capture_default_str();
    app.add_option("--test-size", c.test_size, "make-world: test problems")->capture_default_str();
    app.add_option("--sequence-length", c.sequence_length, "make-world: required strategies per problem")
        ->capture_default_str();
    app.add_option("--dim", c.dim, "make-world: embedding dimension")->capture_default_str();

    app.add_option("--base-url", c.base_url, "http backend base URL");
    app.add_option("--model", c.model, "http backend chat model")->capture_default_str();
    app.add_option("--embedding-model", c.embedding_model, "http backend embedding model")->capture_default_str();
    app.add_option("--embedding-dim", c.embedding_dim, "http backend embedding dimension (0: detect)")
        ->capture_default_str();

    app.add_option("--samples", c.samples, "collect-bc: episodes per problem")->capture_default_str();
    app.add_flag("--allow-round0-finish", c.allow_round0_finish, "collect-bc: let the random policy finish at round 0");

    app.add_option("--bc-lr", c.bc.lr, "BC learning rate")->capture_default_str();
    app.add_option("--bc-batch", c.bc.batch, "BC batch size")->capture_default_str();
    app.add_option("--bc-steps", c.bc.steps, "BC steps")->capture_default_str();
    app.add_option("--bc-val-fraction", c.bc.val_fraction, "BC validation fraction")->capture_default_str();
    app.add_option("--bc-eval-every", c.bc.eval_every, "BC validation interval")->capture_default_str();

    app.add_option("--ppo-lr", c.ppo.lr, "PPO learning rate")->capture_default_str();
    app.add_option("--clip-epsilon", c.ppo.clip_epsilon, "PPO clip range")->capture_default_str();
    app.add_option("--gamma", c.ppo.gamma, "Discount")->capture_default_str();
    app.add_option("--gae-lambda", c.ppo.gae_lambda, "GAE lambda")->capture_default_str();
    app.add_option("--value-coef", c.ppo.value_loss_coef, "Value loss coefficient")->capture_default_str();
    app.add_option("--entropy-coef", c.ppo.entropy_coef, "Entropy coefficient")->capture_default_str();
    app.add_option("--ppo-epochs", c.ppo.ppo_epochs, "Epochs per update")->capture_default_str();
    app.add_option("--ppo-batch", c.ppo.batch, "Minibatch size in transitions")->capture_default_str();
    app.add_option("--episodes-per-update", c.ppo.episodes_per_update, "Episodes per rollout buffer")
        ->capture_default_str();
    app.add_option("--warmup-steps", c.ppo.warmup_freeze_steps, "Env steps with a frozen policy")
        ->capture_default_str();
    app.add_option("--total-env-steps", c.ppo.total_env_steps, "Env step budget")->capture_default_str();
    app.add_option("--grad-clip", c.ppo.grad_clip, "Gradient norm clip")->capture_default_str();
    app.add_flag("--no-lr-decay{false}", c.ppo.lr_decay, "Keep the learning rate constant");
    app.add_flag("--no-adv-norm", c.no_adv_norm, "Skip advantage normalization");
    app.add_option("--checkpoint-every", c.checkpoint_every, "Save every K updates (0: only at the end)")
        ->capture_default_str();
    app.add_option("--filter-lo", c.filter_lo, "Curriculum lower bound")->capture_default_str();
    app.add_option("--filter-hi", c.filter_hi, "Curriculum upper bound")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("CoPlanner: cooperative planner/reasoner training and evaluation", "coplanner");
    app.fallthrough();
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", COPLANNER_VERSION);
    RunConfig c;
    add_options(app, c);
    auto* make_world = app.add_subcommand("make-world", "Generate a scripted world and its dataset");
    auto* collect = app.add_subcommand("collect-bc", "Random-policy trajectories and difficulty table");
    auto* train_bc_cmd = app.add_subcommand("train-bc", "Behavior cloning from the trajectory store");
    auto* train_ppo = app.add_subcommand("train-ppo", "PPO fine-tuning of the planner");
    auto* eval = app.add_subcommand("eval", "Evaluate a policy or prompt baseline");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        const DirectoryLock lock(c.out);
        if (*make_world) return cmd_make_world(c, app, args, out);
        if (*collect) return cmd_collect_bc(c, app, args, out);
        if (*train_bc_cmd) return cmd_train_bc(c, app, args, out);
        if (*train_ppo) return cmd_train_ppo(c, app, args, out);
        if (*eval) return cmd_eval(c, app, args, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace coplanner::cli
