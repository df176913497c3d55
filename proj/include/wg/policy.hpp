#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wg/checkpoint.hpp"
#include "wg/maze.hpp"
#include "wg/nn.hpp"

namespace wg::latent {
class LatentSegModel;
}

namespace wg::policy {

struct A2CConfig {
    int embed = 64;
    int hidden = 64;
    double lr = 7e-4;
    double gamma = 0.99;
    int t_max = 20;
    double entropy_weight = 0.01;
    double value_weight = 0.5;
    double clip_norm = 0.5;
};

// Recurrent actor-critic over sparse multi-hot inputs: projection -> tanh ->
// LSTM -> {action logits, value}. The policy head starts at zero so the
// initial distribution is exactly uniform.
class RecurrentActorCritic {
public:
    RecurrentActorCritic() = default;
    RecurrentActorCritic(const std::string& name, int input_dim, int action_count,
                         const A2CConfig& cfg, uint64_t seed);

    struct StepOut {
        Tensor logits; // [B, A]
        Tensor value;  // [B, 1]
    };
    // Advances `state` in place.
    StepOut step(const std::vector<std::vector<int>>& indices, nn::LstmState& state) const;
    nn::LstmState initial_state(int batch) const { return lstm_.initial_state(batch); }

    nn::ParamRegistry& params() { return params_; }
    const nn::ParamRegistry& params() const { return params_; }
    const std::string& name() const { return name_; }
    int input_dim() const { return input_dim_; }
    int action_count() const { return action_count_; }
    int hidden() const { return cfg_.hidden; }
    const A2CConfig& config() const { return cfg_; }

private:
    std::string name_;
    int input_dim_ = 0;
    int action_count_ = 0;
    A2CConfig cfg_;
    nn::ParamRegistry params_;
    nn::Linear in_;
    nn::LstmCell lstm_;
    nn::Linear actor_;
    nn::Linear critic_;
};

// Samples an action from softmax probabilities of one row.
int sample_from_logits(const Tensor& logits, int row, Rng& rng);

// n-step discounted returns with bootstrap on non-terminal truncation.
struct AdvantageResult {
    std::vector<double> returns;
    std::vector<double> advantages;
};
AdvantageResult compute_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const uint8_t> terminal, double gamma, double bootstrap);

// Goal-conditioned policy pi_g(a | s, g). Input = state encoding plus the
// goal cell as a position one-hot appended after it.
class GoalConditionedPolicy {
public:
    GoalConditionedPolicy(const maze::GridMaze& grid, const A2CConfig& cfg, uint64_t seed);

    std::vector<int> input_indices(const maze::GridMaze& grid, int state_id, int goal_cell) const;

    RecurrentActorCritic& net() { return net_; }
    const RecurrentActorCritic& net() const { return net_; }
    int goal_offset() const { return goal_offset_; }

    nn::Checkpoint snapshot() const { return nn::snapshot(net_.params()); }
    void restore(const nn::Checkpoint& ckpt) { nn::restore(net_.params(), ckpt); }

private:
    RecurrentActorCritic net_;
    int goal_offset_ = 0;
};

// Endpoint of a fresh random walk from `state`; retries up to 10 times when
// the endpoint equals the start, then falls back to any reachable neighbor.
int sample_training_goal(maze::MazeNav& nav, int state, int walk_length, Rng& rng);

struct NavigateResult {
    maze::Trajectory traj;
    bool reached = false;
    std::vector<double> rewards; // env rewards collected en route
    // Input indices per step, recorded so the rollout can be replayed
    // through the net with gradients (online fine-tuning).
    std::vector<std::vector<int>> step_inputs;
};
// Sampled rollout toward `goal`, abandoned after `time_limit` steps. Never
// learns; also stops if the environment episode terminates.
NavigateResult navigate(const GoalConditionedPolicy& pi, maze::Env& env, int goal,
                        int time_limit, Rng& rng);

struct GoalTrainConfig {
    int walk_length = 12;
    int goal_horizon = 24; // 2 x walk_length
    double reach_reward = 1.0;
    double step_penalty = -0.01;
    // Curiosity weight. Kept small enough that reaching the goal always
    // dominates wandering for intrinsic reward (reconstruction error is
    // ~1-1.4 nats/step, so eta*nll*horizon must stay below reach_reward).
    double eta = 0.02;
    int batch_envs = 16;
    int updates = 150;
    // Early stop once the windowed episode success rate reaches this level;
    // avoids late-training policy churn.
    double stop_success = 0.97;
};

struct GoalTrainStats {
    int episodes = 0;
    int successes = 0;
    double mean_return = 0.0;
    double mean_intrinsic = 0.0;
    double success_rate() const { return episodes ? static_cast<double>(successes) / episodes : 0.0; }
};

// Curiosity-driven A2C training of pi_g on the bare maze. Starts are drawn
// uniformly from `start_states`; goals are random-walk endpoints; the
// intrinsic reward is the decoder reconstruction error of the latest latent
// model snapshot (eta = 0 or a null model disables it).
GoalTrainStats train_goal_policy(const maze::GridMaze& grid, GoalConditionedPolicy& pi,
                                 latent::LatentSegModel* latent_model,
                                 const std::vector<int>& start_states, const GoalTrainConfig& cfg,
                                 Rng& rng);

// Success rate over `episodes` sampled (start, goal) pairs with BFS distance
// in [1, max_distance], each given `horizon` steps.
double eval_goal_policy(const maze::GridMaze& grid, const GoalConditionedPolicy& pi,
                        int max_distance, int horizon, int episodes, uint64_t seed);

} // namespace wg::policy
