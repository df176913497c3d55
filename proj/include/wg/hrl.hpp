#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "wg/graph.hpp"
#include "wg/maze.hpp"
#include "wg/policy.hpp"

namespace wg::hrl {

enum class CandidateKind { VAll, VRand, VP };
std::string candidate_kind_name(CandidateKind k);
CandidateKind candidate_kind_from_name(const std::string& name);

// V_all = all floor cells of the task layout; V_rand = uniform sample of the
// same size as V_p; V_p passes through. Results are sorted.
std::vector<int> make_candidate_set(CandidateKind kind, const maze::GridMaze& layout,
                                    const std::vector<int>& v_p, uint64_t seed);

struct FeudalConfig {
    int horizon_c = 15;
    int narrow_n = 5; // odd window side; 1 reduces WN to plain FN emission
    double gamma_manager = 0.99;
    double gamma_worker = 0.99;
    double entropy_manager = 0.01;
    double entropy_worker = 0.01;
    double worker_gn_reward = 1.0;
    double worker_gw_reward = 0.5;
    bool traversal = false;
    graph::TraversalMode traversal_mode = graph::TraversalMode::Replay;
    int traversal_hop_limit = 30; // per-hop step cap in policy mode
    double pi_g_finetune_scale = 0.1;
    policy::A2CConfig a2c;
};

// Manager with the Wide-then-Narrow head pair: a wide distribution over the
// candidate set and a narrow distribution over the NxN window around the
// sampled wide goal, masked to non-wall cells. Heads start at zero so both
// initial distributions are exactly uniform.
class ManagerPolicy {
public:
    ManagerPolicy(const maze::GridMaze& grid, std::vector<int> candidates, const FeudalConfig& cfg,
                  uint64_t seed);

    struct Decision {
        int g_w = -1;
        int g_n = -1;
        Tensor logp;    // [1,1] log pi_w(g_w) + log pi_n(g_n | g_w)
        Tensor entropy; // [1,1] H(pi_w) + H(pi_n(.|g_w))
        Tensor value;   // [1,1] state value at emission
    };
    Decision act(const maze::GridMaze& grid, int agent_state, nn::LstmState& hidden, Rng& rng);

    // Value of the current state under the trunk without emitting (bootstrap).
    double state_value(const maze::GridMaze& grid, int agent_state, const nn::LstmState& hidden) const;

    nn::LstmState initial_state() const { return lstm_.initial_state(1); }
    nn::ParamRegistry& params() { return params_; }
    const nn::ParamRegistry& params() const { return params_; }
    const std::vector<int>& candidates() const { return candidates_; }
    int narrow_n() const { return narrow_n_; }
    int hidden_size() const { return cfg_.hidden; }

private:
    std::vector<int> candidates_;
    int narrow_n_;
    policy::A2CConfig cfg_;
    nn::ParamRegistry params_;
    nn::Linear in_;
    nn::LstmCell lstm_;
    nn::Linear critic_;
    nn::Linear wide_;
    nn::Linear narrow_in_;
    nn::Linear narrow_out_;
    int window_channels_ = 0;
};

enum class AgentKind { FlatA2C, Feudal };

// Flat A2C baseline or Feudal Manager/Worker with optional world-graph
// traversal and pi_g-based traversal execution.
struct HierarchicalAgent {
    AgentKind kind = AgentKind::Feudal;
    FeudalConfig cfg;
    maze::GridMaze layout; // task layout the nets were sized for
    int action_count = maze::kMoveActionCount;

    std::unique_ptr<policy::RecurrentActorCritic> flat;
    std::unique_ptr<ManagerPolicy> manager;
    std::unique_ptr<policy::RecurrentActorCritic> worker;
    std::shared_ptr<const graph::WorldGraph> world;
    std::shared_ptr<policy::GoalConditionedPolicy> pi_g;

    std::vector<int> worker_indices(const maze::GridMaze& grid, int state, int g_w, int g_n) const;

    nn::Checkpoint snapshot() const;
    void restore(const nn::Checkpoint& ckpt);
};

HierarchicalAgent make_flat_agent(const maze::GridMaze& layout, int action_count,
                                  const FeudalConfig& cfg, uint64_t seed);
HierarchicalAgent make_feudal_agent(const maze::GridMaze& layout, int action_count,
                                    const FeudalConfig& cfg, std::vector<int> candidates,
                                    uint64_t seed);

// Copies the pi_g trunk (input projection state+goal blocks, recurrent cell,
// value head) into the Worker and Manager. The Worker's second goal block
// receives pi_g's goal weights and the wide-goal block is zeroed; move-action
// head columns are copied and any extra task actions keep their fresh
// initialization. Wide/narrow heads stay zero (uniform). Throws on trunk
// shape mismatch naming both shapes.
void init_from_goal_policy(HierarchicalAgent& agent, const nn::Checkpoint& pi_g_ckpt);

struct ManagerDecisionRecord {
    int state = -1;
    int g_w = -1;
    int g_n = -1;
    bool traversed = false;
    bool traversal_completed = false;
    int traversal_steps = 0;
    std::vector<int> route;
    int tenure_steps = 0;     // env steps during the tenure, traversal included
    double env_reward = 0.0;  // undiscounted env reward accrued in the tenure
    bool reached_gn = false;
    bool reached_gw = false;
};

struct EpisodeRecord {
    double total_reward = 0.0;
    int steps = 0;
    bool reached_exit = false;
    std::vector<ManagerDecisionRecord> decisions;
};

// One full evaluation episode (no learning). The env must be freshly reset.
EpisodeRecord run_episode(HierarchicalAgent& agent, maze::TaskEnv& env, Rng& rng);

struct HrlTrainConfig {
    int iterations = 20000;
    int batch_envs = 16;
    uint64_t seed = 0; // episode seed stream + action sampling
};

struct IterationStats {
    int iteration = 0;
    int episodes_finished = 0;
    double mean_episode_reward = 0.0; // over episodes finished this iteration
    double worker_loss = 0.0;
    double manager_loss = 0.0;
};

// Synchronous batched trainer. Runs `cfg.iterations` updates of t_max worker
// steps across batch_envs environments; `on_iteration` (when set) is invoked
// after every update, e.g. for validation and checkpointing.
class HrlTrainer {
public:
    HrlTrainer(HierarchicalAgent& agent, const maze::GridMaze& base, const maze::TaskSpec& spec,
               uint64_t env_seed, const HrlTrainConfig& cfg);
    ~HrlTrainer();

    void run(const std::function<void(const IterationStats&)>& on_iteration = nullptr);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace wg::hrl
