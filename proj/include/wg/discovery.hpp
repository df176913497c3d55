#pragma once

#include <memory>
#include <vector>

#include "wg/latent.hpp"
#include "wg/policy.hpp"

namespace wg::latent {

struct DiscoveryConfig {
    int traj_len = 24;                // actions per stored trajectory
    int trajectories_per_round = 40;  // half random walks, half pi_g rollouts
    int latent_updates_per_round = 200;
    int latent_batch = 16;
    int max_rounds = 20;
    int min_rounds = 8; // plateau detection starts after warmup
    double plateau_rel_improvement = 0.005;
    int plateau_rounds = 3;
    int holdout_every = 10; // every n-th collected trajectory is held out
    LatentConfig latent;
    policy::A2CConfig a2c;
    policy::GoalTrainConfig goal_train;

    DiscoveryConfig() {
        latent.lr = 1.5e-3;
        a2c.lr = 1e-3;
        goal_train.updates = 500;
    }
};

struct DiscoveryRoundLog {
    int round = 0;
    double holdout_accuracy = 0.0;
    double train_objective = 0.0;
    double pi_g_success = 0.0;
    int pivotal_count = 0;
    int store_size = 0;
};

struct DiscoveryResult {
    std::shared_ptr<LatentSegModel> model;
    std::shared_ptr<policy::GoalConditionedPolicy> pi_g;
    std::vector<int> pivotal_states;       // sorted state ids
    std::vector<maze::Trajectory> store;   // full trajectory store
    std::vector<DiscoveryRoundLog> rounds;
    double final_holdout_accuracy = 0.0;
};

// Alternates trajectory collection (starting from the current pivotal set,
// initially the maze start cell), latent-model training, curiosity-driven
// goal-policy training and pivotal re-selection until the held-out action
// reconstruction accuracy plateaus or the round cap is hit.
DiscoveryResult discovery_loop(const maze::GridMaze& grid, const DiscoveryConfig& cfg, uint64_t seed);

// Store serialization: one record per line,
//   <maze-id> <seed> <origin> <T> <s_0..s_T> <a_0..a_{T-1}>
std::string store_to_text(const std::vector<maze::Trajectory>& store, const std::string& maze_id,
                          uint64_t seed);
std::vector<maze::Trajectory> store_from_text(const std::string& text);

// Pivotal-state export: "<state-id> <prior-mean>" per line.
std::string pivots_to_text(LatentSegModel& model, const std::vector<int>& pivots);

} // namespace wg::latent
