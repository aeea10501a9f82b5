#include "coplanner/bc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "coplanner/errors.hpp"

namespace coplanner {

double DifficultyRecord::delta() const {
    return samples > 0 ? static_cast<double>(successes) / static_cast<double>(samples) : 0.0;
}

CollectResult collect_bc_trajectories(const std::vector<Problem>& problems, const Orchestrator& orchestrator,
                                      const CollectConfig& config) {
    if (problems.empty()) throw ConfigError("trajectory collection needs at least one problem");
    if (config.samples_per_problem == 0) throw ConfigError("samples per problem must be positive");

    auto policy = PlannerPolicy::random(config.mode);
    policy.exclude_finish_at_round0 = config.exclude_finish_at_round0;
    EpisodeOptions options;
    options.max_rounds = config.max_rounds;
    options.selection = ActionSelection::Sample;
    options.reward = config.reward;
    options.record_embeddings = true;
    options.keep_log = config.keep_log;

    const std::size_t k = config.samples_per_problem;
    CollectResult result;
    result.episodes.resize(problems.size() * k);
    parallel_for(result.episodes.size(), config.workers, [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(config.seed, i));
        result.episodes[i] = orchestrator.run_episode(problems[i / k], policy, options, rng);
    });

    for (std::size_t p = 0; p < problems.size(); ++p) {
        DifficultyRecord rec{problems[p].id, 0, 0};
        for (std::size_t j = 0; j < k; ++j) {
            const auto& e = result.episodes[p * k + j];
            if (e.failed) {
                ++result.failed;
                continue;
            }
            ++rec.samples;
            if (e.correct) ++rec.successes;
        }
        result.difficulty.push_back(std::move(rec));
    }
    return result;
}

std::vector<BcPair> bc_pairs_from(const std::vector<EpisodeRecord>& episodes) {
    std::vector<BcPair> pairs;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& ep = episodes[e];
        if (!ep.correct || ep.failed) continue;
        for (std::size_t t = 0; t < ep.transitions.size(); ++t) {
            const auto& tr = ep.transitions[t];
            // A forced Finish offers one candidate and carries no choice.
            if (tr.obs_embedding.size() == 0 || tr.action_embeddings.cols() < 2) continue;
            pairs.push_back({tr.obs_embedding, tr.action_embeddings, tr.action_index, ep.problem_id, e, t});
        }
    }
    return pairs;
}

std::set<std::string> curriculum_filter(const std::vector<DifficultyRecord>& records, double lo, double hi) {
    std::set<std::string> kept;
    for (const auto& r : records) {
        if (r.samples <= 0) continue;
        const double d = r.delta();
        if (d >= lo && d <= hi) kept.insert(r.problem_id);
    }
    return kept;
}

std::string difficulty_to_csv(const std::vector<DifficultyRecord>& records) {
    std::ostringstream os;
    os << "problem_id,successes,samples,delta\n";
    for (const auto& r : records) {
        if (r.problem_id.find_first_of(",\n\"") != std::string::npos)
            throw ConfigError("problem id '" + r.problem_id + "' cannot be written to CSV");
        os << r.problem_id << ',' << r.successes << ',' << r.samples << ',' << std::setprecision(17) << r.delta()
           << '\n';
    }
    return os.str();
}

std::vector<DifficultyRecord> difficulty_from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read difficulty table " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("problem_id,successes,samples", 0) != 0)
        throw ConfigError(path.string() + ": unexpected difficulty table header");
    std::vector<DifficultyRecord> out;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string id, successes, samples;
        if (!std::getline(fields, id, ',') || !std::getline(fields, successes, ',') || !std::getline(fields, samples, ','))
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        try {
            DifficultyRecord r{id, std::stoi(successes), std::stoi(samples)};
            if (r.samples < 0 || r.successes < 0 || r.successes > r.samples) throw std::invalid_argument("range");
            out.push_back(std::move(r));
        } catch (const std::exception&) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad counts");
        }
    }
    return out;
}

namespace {

std::size_t argmax(const Eigen::VectorXd& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<std::size_t>(best);
}

}  // namespace

double bc_accuracy(const PolicyParams& params, const std::vector<BcPair>& pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& p : pairs)
        if (argmax(policy_forward(params, p.obs, p.actions).logits) == p.action_index) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

BcResult train_bc(const std::vector<BcPair>& pairs, const PolicyParams& init, const BcConfig& config) {
    if (pairs.empty()) throw ConfigError("behavior cloning needs at least one state-action pair");
    if (config.batch == 0) throw ConfigError("bc batch must be positive");
    if (config.val_fraction < 0.0 || config.val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(pairs.size())));
    if (n_val >= pairs.size()) n_val = pairs.size() - 1;

    std::vector<BcPair> val, train;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(pairs[order[i]]);

    BcResult result;
    result.train_size = train.size();
    result.val_size = val.size();
    // Without a validation split, model selection falls back to training accuracy.
    const auto& select_on = val.empty() ? train : val;

    PolicyParams params = init;
    Adam adam = Adam::for_params(params);
    result.params = params;
    result.val_accuracy = bc_accuracy(params, select_on);

    std::vector<std::size_t> epoch(train.size());
    std::iota(epoch.begin(), epoch.end(), 0);
    std::size_t cursor = epoch.size();
    const auto d = params.input_dim();
    const auto h = params.hidden_dim();

    for (std::size_t step = 1; step <= config.steps; ++step) {
        auto grads = PolicyParams::zeros(d, h);
        double loss = 0.0;
        const std::size_t b = std::min(config.batch, train.size());
        for (std::size_t k = 0; k < b; ++k) {
            if (cursor == epoch.size()) {
                std::shuffle(epoch.begin(), epoch.end(), rng);
                cursor = 0;
            }
            const auto& p = train[epoch[cursor++]];
            const auto cache = policy_forward(params, p.obs, p.actions);
            loss -= std::log(cache.probs[static_cast<Eigen::Index>(p.action_index)]) / static_cast<double>(b);
            const auto g = policy_backward(params, cache,
                                           log_prob_logit_grad(cache, p.action_index, -1.0 / static_cast<double>(b)));
            grads.w_q += g.w_q;
            grads.w_k += g.w_k;
        }
        adam.step(params, grads, config.lr, config.clip_norm);
        result.loss_curve.push_back(loss);

        if (step % config.eval_every == 0 || step == config.steps) {
            const double acc = bc_accuracy(params, select_on);
            if (acc > result.val_accuracy) {
                result.val_accuracy = acc;
                result.params = params;
                result.best_step = step;
            }
        }
    }
    if (val.empty()) result.val_accuracy = bc_accuracy(result.params, val);
    result.train_accuracy = bc_accuracy(result.params, train);
    return result;
}

}  // namespace coplanner
