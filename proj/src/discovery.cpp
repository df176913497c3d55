#include "wg/discovery.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace wg::latent {

namespace {

// Chains pi_g pursuits of random-walk goals into one trajectory of exactly
// `len` actions.
maze::Trajectory collect_policy_trajectory(const maze::GridMaze& grid,
                                           const policy::GoalConditionedPolicy& pi, int start,
                                           int len, int walk_length, int horizon, Rng& rng) {
    maze::MazeNav nav(grid, start);
    maze::MazeNav scratch(grid);
    maze::Trajectory traj;
    traj.origin = maze::TrajOrigin::GoalPolicy;
    traj.states.push_back(start);
    while (static_cast<int>(traj.actions.size()) < len) {
        const int goal = policy::sample_training_goal(scratch, nav.state_id(), walk_length, rng);
        auto res = policy::navigate(pi, nav, goal, horizon, rng);
        for (size_t i = 0; i < res.traj.actions.size(); ++i) {
            traj.actions.push_back(res.traj.actions[i]);
            traj.states.push_back(res.traj.states[i + 1]);
            if (static_cast<int>(traj.actions.size()) == len) break;
        }
        if (res.traj.actions.empty()) {
            // Goal equal to the state and no step taken; nudge with one
            // random move so the chain cannot stall.
            auto walk = maze::random_walk(nav, nav.state_id(), 1, rng);
            traj.actions.push_back(walk.actions[0]);
            traj.states.push_back(walk.states[1]);
        }
    }
    return traj;
}

} // namespace

DiscoveryResult discovery_loop(const maze::GridMaze& grid, const DiscoveryConfig& cfg, uint64_t seed) {
    Rng rng(Rng::substream(seed, "discovery"));
    DiscoveryResult out;
    out.model = std::make_shared<LatentSegModel>(grid, maze::kMoveActionCount, cfg.latent,
                                                 Rng::substream(seed, "latent-model"));
    out.pi_g = std::make_shared<policy::GoalConditionedPolicy>(grid, cfg.a2c,
                                                               Rng::substream(seed, "pi_g"));

    std::vector<maze::Trajectory> train_set, holdout;
    maze::MazeNav nav(grid);

    int flat_rounds = 0;
    double best_acc = -1.0;

    for (int round = 0; round < cfg.max_rounds; ++round) {
        // (1) collect trajectories from the current pivotal set.
        std::vector<int> starts = out.pivotal_states;
        if (starts.empty()) starts = {grid.start_cell()};
        for (int i = 0; i < cfg.trajectories_per_round; ++i) {
            const int start = starts[static_cast<size_t>(rng.below(starts.size()))];
            maze::Trajectory traj;
            if (i % 2 == 0) {
                traj = maze::random_walk(nav, start, cfg.traj_len, rng);
            } else {
                traj = collect_policy_trajectory(grid, *out.pi_g, start, cfg.traj_len,
                                                 cfg.goal_train.walk_length,
                                                 cfg.goal_train.goal_horizon, rng);
            }
            out.store.push_back(traj);
            if (static_cast<int>(out.store.size()) % cfg.holdout_every == 0)
                holdout.push_back(std::move(traj));
            else
                train_set.push_back(std::move(traj));
        }

        // (2) train the latent model.
        double objective = 0.0;
        for (int u = 0; u < cfg.latent_updates_per_round; ++u) {
            std::vector<maze::Trajectory> batch;
            batch.reserve(static_cast<size_t>(cfg.latent_batch));
            for (int b = 0; b < cfg.latent_batch; ++b)
                batch.push_back(train_set[static_cast<size_t>(rng.below(train_set.size()))]);
            auto stats = out.model->lagrangian_update(batch, rng);
            objective += stats.total;
        }
        objective /= cfg.latent_updates_per_round;

        // (3) train pi_g with curiosity from the fresh latent snapshot.
        auto pi_stats =
            policy::train_goal_policy(grid, *out.pi_g, out.model.get(), starts, cfg.goal_train, rng);

        // (4) re-select pivotal states over everything observed so far.
        std::set<int> observed;
        for (const auto& traj : out.store) observed.insert(traj.states.begin(), traj.states.end());
        out.pivotal_states =
            out.model->pivotal_select(std::vector<int>(observed.begin(), observed.end()));

        // Plateau check on held-out reconstruction accuracy.
        Rng eval_rng(Rng::substream(seed, "discovery-eval", static_cast<uint64_t>(round)));
        const double acc = holdout.empty() ? 0.0 : out.model->eval_accuracy(holdout, eval_rng);
        out.rounds.push_back({round, acc, objective, pi_stats.success_rate(),
                              static_cast<int>(out.pivotal_states.size()),
                              static_cast<int>(out.store.size())});
        out.final_holdout_accuracy = acc;
        if (round >= cfg.min_rounds) {
            if (best_acc > 0.0 &&
                (acc - best_acc) / std::max(best_acc, 1e-9) < cfg.plateau_rel_improvement)
                ++flat_rounds;
            else
                flat_rounds = 0;
            if (flat_rounds >= cfg.plateau_rounds) break;
        }
        best_acc = std::max(best_acc, acc);
    }
    return out;
}

std::string store_to_text(const std::vector<maze::Trajectory>& store, const std::string& maze_id,
                          uint64_t seed) {
    std::ostringstream os;
    for (const auto& traj : store) {
        os << maze_id << " " << seed << " "
           << (traj.origin == maze::TrajOrigin::RandomWalk ? "walk" : "policy") << " "
           << traj.actions.size();
        for (int s : traj.states) os << " " << s;
        for (auto a : traj.actions) os << " " << static_cast<int>(a);
        os << "\n";
    }
    return os.str();
}

std::vector<maze::Trajectory> store_from_text(const std::string& text) {
    std::vector<maze::Trajectory> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string maze_id, origin;
        uint64_t seed;
        size_t len;
        ls >> maze_id >> seed >> origin >> len;
        maze::Trajectory traj;
        traj.origin = origin == "walk" ? maze::TrajOrigin::RandomWalk : maze::TrajOrigin::GoalPolicy;
        traj.states.resize(len + 1);
        for (auto& s : traj.states) ls >> s;
        traj.actions.resize(len);
        for (auto& a : traj.actions) {
            int v;
            ls >> v;
            a = static_cast<maze::Action>(v);
        }
        if (!ls) throw std::invalid_argument("truncated trajectory record: " + line);
        out.push_back(std::move(traj));
    }
    return out;
}

std::string pivots_to_text(LatentSegModel& model, const std::vector<int>& pivots) {
    std::ostringstream os;
    for (int s : pivots) os << s << " " << model.prior_mean(s) << "\n";
    return os.str();
}

} // namespace wg::latent
