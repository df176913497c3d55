#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wg/maze.hpp"
#include "wg/policy.hpp"

namespace wg::graph {

struct EdgePath {
    enum class Provenance { RandomWalk, PolicyRefined };
    std::vector<maze::Action> actions;
    Provenance provenance = Provenance::RandomWalk;
    int weight() const { return static_cast<int>(actions.size()); }
};

struct TraversalPlan {
    std::vector<int> nodes; // src = front, dst = back; src alone when src==dst
    int total_weight = 0;
    bool empty() const { return nodes.size() <= 1; }
};

// Simple directed weighted graph over pivotal states. Immutable once built;
// planning results are cached per source.
class WorldGraph {
public:
    WorldGraph() = default;

    void set_maze_id(std::string id) { maze_id_ = std::move(id); }
    const std::string& maze_id() const { return maze_id_; }

    void set_nodes(std::vector<int> nodes);
    void set_prior_mean(int node, double mean);
    // Endpoints must be nodes, src != dst, weight = |actions| >= 1. Keeps the
    // shorter path when the edge already exists.
    void add_edge(int src, int dst, EdgePath path);

    const std::vector<int>& nodes() const { return nodes_; }
    bool has_node(int id) const;
    const std::map<std::pair<int, int>, EdgePath>& edges() const { return edges_; }
    double prior_mean(int node) const;

    // Minimal-total-weight route; ties broken by the lexicographically
    // smallest node-id sequence. nullopt when unreachable.
    std::optional<TraversalPlan> plan(int src, int dst) const;

    // Returns `current` as the traversal start node iff it is a node with a
    // feasible route to g_w.
    std::optional<int> traversal_trigger(int current, int g_w) const;

    // Exhaustive validity check on the maze the graph was built on: every
    // edge path replays from src to dst without visiting a third node.
    bool validate_on(maze::MazeNav& nav, std::string* error = nullptr) const;

    std::string to_text(const maze::GridMaze& grid) const;
    static WorldGraph from_text(const std::string& text);

private:
    std::string maze_id_;
    std::vector<int> nodes_; // sorted ascending
    std::map<int, double> prior_means_;
    std::map<std::pair<int, int>, EdgePath> edges_;
    mutable std::map<int, std::map<int, TraversalPlan>> plan_cache_;
};

// Discovers directed edges by random walks from every node: the walk prefix
// up to the first other node reached proposes an edge, the shortest proposal
// per ordered pair is kept, and pi_g (when given) refines each edge with a
// strictly shorter successful navigation that also avoids third nodes.
WorldGraph build_edges(const std::vector<int>& nodes, maze::MazeNav& nav,
                       const policy::GoalConditionedPolicy* pi_g, int walks_per_node,
                       int walk_length, uint64_t seed);

enum class TraversalMode { Replay, Policy };

struct TraversalOutcome {
    int steps = 0;
    bool completed = false;
    int reached_node = -1;            // last node actually reached
    std::vector<double> rewards;      // env reward per step taken
    maze::Trajectory traj;            // realized states/actions
    std::vector<std::vector<int>> step_inputs; // policy mode: pi_g inputs per step
    bool episode_ended = false;
};

// Executes a plan hop by hop. Replay mode follows stored actions and aborts
// when a hop fails to land on its node (newly blocked route); policy mode
// navigates each hop with pi_g under a per-hop time limit. Stops early if
// the episode terminates.
TraversalOutcome execute_traversal(const WorldGraph& graph, const TraversalPlan& plan,
                                   maze::Env& env, TraversalMode mode,
                                   const policy::GoalConditionedPolicy* pi_g,
                                   int per_hop_time_limit, Rng* rng);

} // namespace wg::graph
