#include "wg/graph.hpp"

#include <algorithm>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace wg::graph {

void WorldGraph::set_nodes(std::vector<int> nodes) {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    nodes_ = std::move(nodes);
    edges_.clear();
    plan_cache_.clear();
}

void WorldGraph::set_prior_mean(int node, double mean) { prior_means_[node] = mean; }

double WorldGraph::prior_mean(int node) const {
    auto it = prior_means_.find(node);
    return it == prior_means_.end() ? 0.0 : it->second;
}

bool WorldGraph::has_node(int id) const {
    return std::binary_search(nodes_.begin(), nodes_.end(), id);
}

void WorldGraph::add_edge(int src, int dst, EdgePath path) {
    if (!has_node(src) || !has_node(dst))
        throw std::invalid_argument("add_edge: endpoints must be nodes (" + std::to_string(src) +
                                    " -> " + std::to_string(dst) + ")");
    if (src == dst) throw std::invalid_argument("add_edge: self edges are not allowed");
    if (path.actions.empty()) throw std::invalid_argument("add_edge: empty action path");
    auto key = std::make_pair(src, dst);
    auto it = edges_.find(key);
    if (it == edges_.end() || path.weight() < it->second.weight()) edges_[key] = std::move(path);
    plan_cache_.clear();
}

std::optional<TraversalPlan> WorldGraph::plan(int src, int dst) const {
    if (!has_node(src) || !has_node(dst))
        throw std::invalid_argument("plan: src and dst must be nodes");
    auto& per_src = plan_cache_[src];
    if (per_src.empty()) {
        // Dijkstra with (distance, node sequence) labels; the lexicographic
        // path comparison makes the tie-break deterministic.
        struct Label {
            int dist;
            std::vector<int> path;
        };
        std::map<int, Label> best;
        using QEntry = std::pair<std::pair<int, std::vector<int>>, int>;
        std::priority_queue<QEntry, std::vector<QEntry>, std::greater<>> queue;
        queue.push({{0, {src}}, src});
        best[src] = {0, {src}};
        while (!queue.empty()) {
            auto [key, node] = queue.top();
            queue.pop();
            auto& [dist, path] = key;
            auto it = best.find(node);
            if (it != best.end() && (dist > it->second.dist ||
                                     (dist == it->second.dist && path > it->second.path)))
                continue;
            auto lo = edges_.lower_bound({node, std::numeric_limits<int>::min()});
            auto hi = edges_.upper_bound({node, std::numeric_limits<int>::max()});
            for (auto e = lo; e != hi; ++e) {
                const int next = e->first.second;
                const int ndist = dist + e->second.weight();
                std::vector<int> npath = path;
                npath.push_back(next);
                auto bit = best.find(next);
                if (bit == best.end() || ndist < bit->second.dist ||
                    (ndist == bit->second.dist && npath < bit->second.path)) {
                    best[next] = {ndist, npath};
                    queue.push({{ndist, std::move(npath)}, next});
                }
            }
        }
        for (auto& [node, label] : best)
            per_src[node] = TraversalPlan{label.path, label.dist};
    }
    auto it = per_src.find(dst);
    if (it == per_src.end()) return std::nullopt;
    return it->second;
}

std::optional<int> WorldGraph::traversal_trigger(int current, int g_w) const {
    if (!has_node(g_w)) throw std::invalid_argument("traversal_trigger: g_w must be a node");
    if (!has_node(current)) return std::nullopt;
    if (!plan(current, g_w).has_value()) return std::nullopt;
    return current;
}

bool WorldGraph::validate_on(maze::MazeNav& nav, std::string* error) const {
    for (const auto& [key, path] : edges_) {
        const auto [src, dst] = key;
        nav.set_agent(src);
        for (size_t i = 0; i < path.actions.size(); ++i) {
            nav.step(path.actions[i]);
            const int here = nav.state_id();
            const bool terminal = i + 1 == path.actions.size();
            if (terminal) {
                if (here != dst) {
                    if (error)
                        *error = "edge " + std::to_string(src) + "->" + std::to_string(dst) +
                                 " replays to " + std::to_string(here);
                    return false;
                }
            } else if (here != src && has_node(here)) {
                if (error)
                    *error = "edge " + std::to_string(src) + "->" + std::to_string(dst) +
                             " crosses node " + std::to_string(here);
                return false;
            }
        }
    }
    return true;
}

namespace {

char action_char(maze::Action a) {
    switch (a) {
        case maze::Action::Up: return 'U';
        case maze::Action::Down: return 'D';
        case maze::Action::Left: return 'L';
        case maze::Action::Right: return 'R';
        default: throw std::invalid_argument("edge paths contain movement actions only");
    }
}

maze::Action char_action(char c) {
    switch (c) {
        case 'U': return maze::Action::Up;
        case 'D': return maze::Action::Down;
        case 'L': return maze::Action::Left;
        case 'R': return maze::Action::Right;
        default: throw std::invalid_argument(std::string("unknown action character '") + c + "'");
    }
}

} // namespace

std::string WorldGraph::to_text(const maze::GridMaze& grid) const {
    std::ostringstream os;
    os << "worldgraph v1\n";
    os << "maze " << (maze_id_.empty() ? grid.id : maze_id_) << "\n";
    os << "nodes " << nodes_.size() << "\n";
    for (int n : nodes_)
        os << n << " " << grid.row_of(n) << " " << grid.col_of(n) << " " << prior_mean(n) << "\n";
    os << "edges " << edges_.size() << "\n";
    for (const auto& [key, path] : edges_) {
        os << key.first << " " << key.second << " " << path.weight() << " ";
        for (auto a : path.actions) os << action_char(a);
        os << "\n";
    }
    return os.str();
}

WorldGraph WorldGraph::from_text(const std::string& text) {
    std::istringstream is(text);
    std::string header, word;
    std::getline(is, header);
    if (header != "worldgraph v1") throw std::invalid_argument("bad graph header: " + header);
    WorldGraph g;
    is >> word;
    if (word != "maze") throw std::invalid_argument("expected maze id line");
    is >> g.maze_id_;
    size_t node_count = 0;
    is >> word >> node_count;
    if (word != "nodes") throw std::invalid_argument("expected node count");
    std::vector<int> nodes;
    std::map<int, double> means;
    for (size_t i = 0; i < node_count; ++i) {
        int id, row, col;
        double mean;
        if (!(is >> id >> row >> col >> mean)) throw std::invalid_argument("truncated node list");
        nodes.push_back(id);
        means[id] = mean;
    }
    g.set_nodes(nodes);
    g.prior_means_ = std::move(means);
    size_t edge_count = 0;
    is >> word >> edge_count;
    if (word != "edges") throw std::invalid_argument("expected edge count");
    for (size_t i = 0; i < edge_count; ++i) {
        int src, dst, weight;
        std::string actions;
        if (!(is >> src >> dst >> weight >> actions)) throw std::invalid_argument("truncated edge list");
        if (static_cast<int>(actions.size()) != weight)
            throw std::invalid_argument("edge " + std::to_string(src) + "->" + std::to_string(dst) +
                                        ": weight " + std::to_string(weight) + " != path length " +
                                        std::to_string(actions.size()));
        EdgePath path;
        for (char c : actions) path.actions.push_back(char_action(c));
        g.add_edge(src, dst, std::move(path));
    }
    return g;
}

WorldGraph build_edges(const std::vector<int>& nodes, maze::MazeNav& nav,
                       const policy::GoalConditionedPolicy* pi_g, int walks_per_node,
                       int walk_length, uint64_t seed) {
    if (nodes.empty()) throw std::invalid_argument("build_edges: empty node set");
    WorldGraph g;
    g.set_maze_id(nav.grid().id);
    g.set_nodes(nodes);

    Rng rng(Rng::substream(seed, "edge-walks"));
    for (int src : g.nodes()) {
        for (int w = 0; w < walks_per_node; ++w) {
            auto traj = maze::random_walk(nav, src, walk_length, rng);
            for (size_t t = 1; t < traj.states.size(); ++t) {
                const int here = traj.states[t];
                if (here != src && g.has_node(here)) {
                    EdgePath path;
                    path.actions.assign(traj.actions.begin(),
                                        traj.actions.begin() + static_cast<long>(t));
                    path.provenance = EdgePath::Provenance::RandomWalk;
                    g.add_edge(src, here, std::move(path));
                    break;
                }
            }
        }
    }

    if (pi_g != nullptr) {
        Rng refine_rng(Rng::substream(seed, "edge-refine"));
        // Collect keys first; refinement mutates the edge map.
        std::vector<std::pair<int, int>> keys;
        for (const auto& [key, _] : g.edges()) keys.push_back(key);
        for (const auto& [src, dst] : keys) {
            const int weight = g.edges().at({src, dst}).weight();
            if (weight <= 1) continue;
            nav.set_agent(src);
            auto res = policy::navigate(*pi_g, nav, dst, weight, refine_rng);
            if (!res.reached || static_cast<int>(res.traj.actions.size()) >= weight) continue;
            bool clean = true;
            for (size_t i = 1; i + 1 < res.traj.states.size(); ++i) {
                const int mid = res.traj.states[i];
                if (mid != src && g.has_node(mid)) {
                    clean = false;
                    break;
                }
            }
            if (!clean) continue;
            EdgePath path;
            path.actions = res.traj.actions;
            path.provenance = EdgePath::Provenance::PolicyRefined;
            g.add_edge(src, dst, std::move(path));
        }
    }
    return g;
}

TraversalOutcome execute_traversal(const WorldGraph& graph, const TraversalPlan& plan,
                                   maze::Env& env, TraversalMode mode,
                                   const policy::GoalConditionedPolicy* pi_g,
                                   int per_hop_time_limit, Rng* rng) {
    if (mode == TraversalMode::Policy && (pi_g == nullptr || rng == nullptr))
        throw std::invalid_argument("policy traversal requires pi_g and an rng");
    TraversalOutcome out;
    out.traj.states.push_back(env.state_id());
    out.reached_node = env.state_id();
    out.completed = true;

    for (size_t hop = 0; hop + 1 < plan.nodes.size(); ++hop) {
        const int from = plan.nodes[hop];
        const int to = plan.nodes[hop + 1];
        if (env.done()) {
            out.completed = false;
            out.episode_ended = true;
            return out;
        }
        if (mode == TraversalMode::Replay) {
            const auto it = graph.edges().find({from, to});
            if (it == graph.edges().end())
                throw std::invalid_argument("plan hop " + std::to_string(from) + "->" +
                                            std::to_string(to) + " is not an edge");
            for (auto a : it->second.actions) {
                auto res = env.step(a);
                ++out.steps;
                out.rewards.push_back(res.reward);
                out.traj.actions.push_back(a);
                out.traj.states.push_back(env.state_id());
                if (res.done) {
                    out.episode_ended = true;
                    break;
                }
            }
        } else {
            auto res = policy::navigate(*pi_g, env, to, per_hop_time_limit, *rng);
            out.steps += static_cast<int>(res.traj.actions.size());
            out.rewards.insert(out.rewards.end(), res.rewards.begin(), res.rewards.end());
            out.step_inputs.insert(out.step_inputs.end(), res.step_inputs.begin(),
                                   res.step_inputs.end());
            out.traj.actions.insert(out.traj.actions.end(), res.traj.actions.begin(),
                                    res.traj.actions.end());
            out.traj.states.insert(out.traj.states.end(), res.traj.states.begin() + 1,
                                   res.traj.states.end());
            out.episode_ended = env.done();
        }
        // A hop that fails to land on its node means the route is blocked;
        // surface it so the Manager can adapt.
        if (env.state_id() != to) {
            out.completed = false;
            return out;
        }
        out.reached_node = to;
        if (out.episode_ended && hop + 2 < plan.nodes.size()) {
            out.completed = false;
            return out;
        }
    }
    return out;
}

} // namespace wg::graph
