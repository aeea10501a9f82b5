#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "coplanner/domain.hpp"
#include "coplanner/nets.hpp"
#include "coplanner/orchestrator.hpp"

namespace coplanner {

/// A (state, chosen action) example taken from a successful trajectory.
struct BcPair {
    Eigen::VectorXd obs;
    Eigen::MatrixXd actions;  // d x N
    std::size_t action_index = 0;
    std::string problem_id;
    std::size_t episode = 0;  // index into the collection's episode list
    std::size_t round = 0;
};

struct DifficultyRecord {
    std::string problem_id;
    int successes = 0;
    int samples = 0;

    double delta() const;
};

struct CollectConfig {
    std::size_t samples_per_problem = 32;
    std::size_t max_rounds = 2;
    PlanningMode mode = PlanningMode::PickMetaStrategy;
    bool exclude_finish_at_round0 = true;
    RewardScheme reward = RewardScheme::PlusMinusOne;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool keep_log = false;
};

struct CollectResult {
    std::vector<EpisodeRecord> episodes;  // failed episodes included, flagged
    std::vector<DifficultyRecord> difficulty;
    std::size_t failed = 0;
};

/// Runs `samples_per_problem` random-policy episodes per problem. Failed
/// episodes are excluded from both the success and sample counts.
CollectResult collect_bc_trajectories(const std::vector<Problem>& problems, const Orchestrator& orchestrator,
                                      const CollectConfig& config);

/// State-action pairs from episodes with correct == true. Transitions
/// without recorded embeddings are skipped.
std::vector<BcPair> bc_pairs_from(const std::vector<EpisodeRecord>& episodes);

/// Ids whose difficulty lies in the closed interval [lo, hi].
std::set<std::string> curriculum_filter(const std::vector<DifficultyRecord>& records, double lo = 0.05,
                                        double hi = 0.90);

std::string difficulty_to_csv(const std::vector<DifficultyRecord>& records);
std::vector<DifficultyRecord> difficulty_from_csv(const std::filesystem::path& path);

struct BcConfig {
    double lr = 1e-4;
    std::size_t batch = 16;
    std::size_t steps = 10000;
    double val_fraction = 0.1;
    std::size_t eval_every = 250;
    double clip_norm = 10.0;
    std::uint64_t seed = 0;
};

struct BcResult {
    PolicyParams params;          // best validation accuracy seen
    double val_accuracy = 0.0;
    double train_accuracy = 0.0;
    std::size_t best_step = 0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::vector<double> loss_curve;  // mean minibatch loss per step
};

/// Top-1 accuracy of argmax over the candidates.
double bc_accuracy(const PolicyParams& params, const std::vector<BcPair>& pairs);

/// Cross-entropy training on a 9:1 train/validation split. Throws ConfigError
/// on an empty pair list.
BcResult train_bc(const std::vector<BcPair>& pairs, const PolicyParams& init, const BcConfig& config);

}  // namespace coplanner
