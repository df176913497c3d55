#include "wg/maze.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace wg::maze {

int size_class_dim(SizeClass s) {
    switch (s) {
        case SizeClass::Small: return 11;
        case SizeClass::Medium: return 17;
        case SizeClass::Large: return 25;
    }
    return 11;
}

int size_class_step_cap(SizeClass s) {
    switch (s) {
        case SizeClass::Small: return 200;
        case SizeClass::Medium: return 500;
        case SizeClass::Large: return 1000;
    }
    return 200;
}

SizeClass size_class_for_dim(int dim) {
    if (dim <= 11) return SizeClass::Small;
    if (dim <= 17) return SizeClass::Medium;
    return SizeClass::Large;
}

std::string size_class_name(SizeClass s) {
    switch (s) {
        case SizeClass::Small: return "small";
        case SizeClass::Medium: return "medium";
        case SizeClass::Large: return "large";
    }
    return "small";
}

SizeClass size_class_from_name(const std::string& name) {
    if (name == "small") return SizeClass::Small;
    if (name == "medium") return SizeClass::Medium;
    if (name == "large") return SizeClass::Large;
    throw std::invalid_argument("unknown maze size: " + name);
}

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::MultiGoal: return "multigoal";
        case TaskKind::MultiGoalSparse: return "multigoal-sparse";
        case TaskKind::MultiGoalStochastic: return "multigoal-stochastic";
        case TaskKind::DoorKey: return "door-key";
    }
    return "multigoal";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "multigoal") return TaskKind::MultiGoal;
    if (name == "multigoal-sparse") return TaskKind::MultiGoalSparse;
    if (name == "multigoal-stochastic") return TaskKind::MultiGoalStochastic;
    if (name == "door-key") return TaskKind::DoorKey;
    throw std::invalid_argument("unknown task: " + name);
}

int GridMaze::start_cell() const {
    for (int i = 0; i < cell_count(); ++i)
        if (cells[static_cast<size_t>(i)] == Cell::Floor) return i;
    throw std::runtime_error("maze has no floor cells");
}

std::vector<int> GridMaze::floor_cells() const {
    std::vector<int> out;
    for (int i = 0; i < cell_count(); ++i)
        if (cells[static_cast<size_t>(i)] == Cell::Floor) out.push_back(i);
    return out;
}

namespace {

void carve_division(GridMaze& m, Rng& rng, int r0, int c0, int r1, int c1) {
    const int hspan = r1 - r0 + 1;
    const int wspan = c1 - c0 + 1;
    const bool can_h = hspan >= 7;
    const bool can_v = wspan >= 7;
    if (!can_h && !can_v) return;
    bool horizontal = can_h && (!can_v || hspan > wspan || (hspan == wspan && rng.below(2) == 0));

    if (horizontal) {
        std::vector<int> walls;
        for (int r = r0 + 3; r <= r1 - 3; ++r)
            if (r % 2 == 0) walls.push_back(r);
        const int w = walls[static_cast<size_t>(rng.below(walls.size()))];
        std::vector<int> doors;
        for (int c = c0; c <= c1; ++c)
            if (c % 2 == 1) doors.push_back(c);
        const int door = doors[static_cast<size_t>(rng.below(doors.size()))];
        for (int c = c0; c <= c1; ++c)
            if (c != door) m.at(w, c) = Cell::Wall;
        carve_division(m, rng, r0, c0, w - 1, c1);
        carve_division(m, rng, w + 1, c0, r1, c1);
    } else {
        std::vector<int> walls;
        for (int c = c0 + 3; c <= c1 - 3; ++c)
            if (c % 2 == 0) walls.push_back(c);
        const int w = walls[static_cast<size_t>(rng.below(walls.size()))];
        std::vector<int> doors;
        for (int r = r0; r <= r1; ++r)
            if (r % 2 == 1) doors.push_back(r);
        const int door = doors[static_cast<size_t>(rng.below(doors.size()))];
        for (int r = r0; r <= r1; ++r)
            if (r != door) m.at(r, w) = Cell::Wall;
        carve_division(m, rng, r0, c0, r1, w - 1);
        carve_division(m, rng, r0, w + 1, r1, c1);
    }
}

bool fully_connected(const GridMaze& m) {
    auto floors = m.floor_cells();
    if (floors.empty()) return false;
    auto dist = bfs_distances(m, floors.front());
    for (int f : floors)
        if (dist[static_cast<size_t>(f)] < 0) return false;
    return true;
}

} // namespace

GridMaze generate_maze(SizeClass size, uint64_t seed) {
    const int dim = size_class_dim(size);
    for (uint64_t attempt = 0;; ++attempt) {
        Rng rng(Rng::substream(seed, "maze-gen", attempt));
        GridMaze m;
        m.width = dim;
        m.height = dim;
        m.size_class = size;
        m.id = size_class_name(size) + ":" + std::to_string(seed);
        m.cells.assign(static_cast<size_t>(dim) * dim, Cell::Floor);
        for (int r = 0; r < dim; ++r) {
            m.at(r, 0) = Cell::Wall;
            m.at(r, dim - 1) = Cell::Wall;
        }
        for (int c = 0; c < dim; ++c) {
            m.at(0, c) = Cell::Wall;
            m.at(dim - 1, c) = Cell::Wall;
        }
        carve_division(m, rng, 1, 1, dim - 2, dim - 2);
        // Extra openings between rooms: carve interior wall cells whose
        // opposite neighbors are both floor.
        for (int r = 1; r < dim - 1; ++r) {
            for (int c = 1; c < dim - 1; ++c) {
                if (m.at(r, c) != Cell::Wall) continue;
                const bool lr = m.at(r, c - 1) == Cell::Floor && m.at(r, c + 1) == Cell::Floor;
                const bool ud = m.at(r - 1, c) == Cell::Floor && m.at(r + 1, c) == Cell::Floor;
                if ((lr || ud) && rng.uniform() < 0.12) m.at(r, c) = Cell::Floor;
            }
        }
        if (fully_connected(m)) return m;
    }
}

namespace {

char cell_char(Cell c) {
    switch (c) {
        case Cell::Wall: return '#';
        case Cell::Floor: return '.';
        case Cell::DoorClosed: return 'D';
        case Cell::DoorOpen: return 'd';
        case Cell::Key: return 'K';
        case Cell::Ball: return 'b';
        case Cell::Exit: return 'E';
        case Cell::Lava: return 'L';
    }
    return '?';
}

Cell char_cell(char ch) {
    switch (ch) {
        case '#': return Cell::Wall;
        case '.': return Cell::Floor;
        case 'D': return Cell::DoorClosed;
        case 'd': return Cell::DoorOpen;
        case 'K': return Cell::Key;
        case 'b': return Cell::Ball;
        case 'E': return Cell::Exit;
        case 'L': return Cell::Lava;
        default: throw std::invalid_argument(std::string("unknown maze character '") + ch + "'");
    }
}

} // namespace

std::string to_ascii(const GridMaze& m, int agent_cell) {
    if (agent_cell >= 0 && m.at_index(agent_cell) != Cell::Floor)
        throw std::invalid_argument("to_ascii: agent must stand on plain floor");
    std::string out;
    out.reserve(static_cast<size_t>(m.height) * (m.width + 1));
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            const int idx = m.cell_index(r, c);
            out.push_back(idx == agent_cell ? '@' : cell_char(m.at_index(idx)));
        }
        out.push_back('\n');
    }
    return out;
}

ParsedMaze from_ascii(const std::string& text) {
    std::vector<std::string> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) rows.push_back(line);
    }
    if (rows.empty()) throw std::invalid_argument("empty maze text");
    ParsedMaze out;
    out.grid.height = static_cast<int>(rows.size());
    out.grid.width = static_cast<int>(rows.front().size());
    out.grid.size_class = size_class_for_dim(std::max(out.grid.width, out.grid.height));
    out.grid.id = "custom";
    out.grid.cells.resize(static_cast<size_t>(out.grid.width) * out.grid.height);
    for (int r = 0; r < out.grid.height; ++r) {
        if (static_cast<int>(rows[static_cast<size_t>(r)].size()) != out.grid.width)
            throw std::invalid_argument("maze rows have unequal lengths");
        for (int c = 0; c < out.grid.width; ++c) {
            const char ch = rows[static_cast<size_t>(r)][static_cast<size_t>(c)];
            const int idx = out.grid.cell_index(r, c);
            if (ch == '@') {
                if (out.agent_cell >= 0) throw std::invalid_argument("multiple agents in maze text");
                out.agent_cell = idx;
                out.grid.cells[static_cast<size_t>(idx)] = Cell::Floor;
            } else {
                out.grid.cells[static_cast<size_t>(idx)] = char_cell(ch);
            }
        }
    }
    return out;
}

int encoding_dim(const GridMaze& m) { return kEncodingChannels * m.width * m.height; }

std::vector<int> encode_indices(const GridMaze& m, int agent_cell) {
    const int hw = m.width * m.height;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(hw) + 1);
    for (int i = 0; i < hw; ++i)
        idx.push_back(static_cast<int>(m.at_index(i)) * hw + i);
    idx.push_back(kAgentChannel * hw + agent_cell);
    return idx;
}

DecodedState decode_indices(const GridMaze& m, const std::vector<int>& indices) {
    const int hw = m.width * m.height;
    DecodedState out;
    for (int ix : indices) {
        const int channel = ix / hw;
        const int cell = ix % hw;
        switch (channel) {
            case static_cast<int>(Cell::DoorClosed): out.closed_door_cells.push_back(cell); break;
            case static_cast<int>(Cell::DoorOpen): out.open_door_cells.push_back(cell); break;
            case static_cast<int>(Cell::Key): out.key_cells.push_back(cell); break;
            case static_cast<int>(Cell::Ball): out.ball_cells.push_back(cell); break;
            case static_cast<int>(Cell::Exit): out.exit_cells.push_back(cell); break;
            case static_cast<int>(Cell::Lava): out.lava_cells.push_back(cell); break;
            case kAgentChannel: out.agent_cell = cell; break;
            default: break;
        }
    }
    return out;
}

namespace {

int move_delta(const GridMaze& m, Action a) {
    switch (a) {
        case Action::Up: return -m.width;
        case Action::Down: return m.width;
        case Action::Left: return -1;
        case Action::Right: return 1;
        default: return 0;
    }
}

int move_target(const GridMaze& m, int from, Action a) {
    const int r = m.row_of(from), c = m.col_of(from);
    int nr = r, nc = c;
    switch (a) {
        case Action::Up: nr = r - 1; break;
        case Action::Down: nr = r + 1; break;
        case Action::Left: nc = c - 1; break;
        case Action::Right: nc = c + 1; break;
        default: return from;
    }
    if (!m.in_bounds(nr, nc)) return from;
    return m.cell_index(nr, nc);
}

} // namespace

StepResult MazeNav::step(Action a) {
    if (static_cast<int>(a) < 0 || static_cast<int>(a) >= kMoveActionCount)
        throw std::invalid_argument("bare maze supports movement actions only");
    const int target = move_target(maze_, agent_, a);
    if (maze_.passable(target)) agent_ = target;
    return {};
}

void MazeNav::set_agent(int cell) {
    if (cell < 0 || cell >= maze_.cell_count() || !maze_.passable(cell))
        throw std::invalid_argument("cannot place agent on cell " + std::to_string(cell));
    agent_ = cell;
}

TaskSpec default_task_spec(TaskKind kind, SizeClass size) {
    TaskSpec spec;
    spec.kind = kind;
    spec.step_cap = size_class_step_cap(size);
    return spec;
}

TaskEnv::TaskEnv(GridMaze base, TaskSpec spec, uint64_t env_seed)
    : base_(std::move(base)), spec_(spec), env_seed_(env_seed) {
    layout_ = base_;
    if (spec_.kind == TaskKind::DoorKey) {
        Rng rng(Rng::substream(env_seed_, "doorkey-layout"));
        place_doorkey_divider(rng);
    }
    work_ = layout_;
}

void TaskEnv::place_doorkey_divider(Rng& rng) {
    // Candidate dividing lines: interior rows/columns, even-aligned first
    // (they coincide with division walls), then the rest. A line is accepted
    // when sealing it splits the floor into exactly two components that the
    // door reconnects.
    struct Candidate {
        bool vertical;
        int line;
    };
    std::vector<Candidate> candidates;
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<Candidate> batch;
        for (int c = 2; c < base_.width - 2; ++c)
            if ((c % 2 == 0) == (pass == 0)) batch.push_back({true, c});
        for (int r = 2; r < base_.height - 2; ++r)
            if ((r % 2 == 0) == (pass == 0)) batch.push_back({false, r});
        rng.shuffle(batch);
        candidates.insert(candidates.end(), batch.begin(), batch.end());
    }

    for (const auto& cand : candidates) {
        GridMaze trial = base_;
        std::vector<int> line_floor;
        const int len = cand.vertical ? base_.height : base_.width;
        for (int i = 1; i < len - 1; ++i) {
            const int idx = cand.vertical ? trial.cell_index(i, cand.line) : trial.cell_index(cand.line, i);
            if (trial.at_index(idx) == Cell::Floor) {
                trial.cells[static_cast<size_t>(idx)] = Cell::Wall;
                line_floor.push_back(idx);
            }
        }
        if (line_floor.empty()) continue;
        rng.shuffle(line_floor);
        for (int door : line_floor) {
            const int a = cand.vertical ? door - 1 : door - base_.width;
            const int b = cand.vertical ? door + 1 : door + base_.width;
            if (trial.at_index(a) != Cell::Floor || trial.at_index(b) != Cell::Floor) continue;
            // Closed door: sides must be two clean components.
            auto da = bfs_distances(trial, a);
            if (da[static_cast<size_t>(b)] >= 0) continue; // leak around the line
            auto db = bfs_distances(trial, b);
            int reach_a = 0, reach_b = 0, floor_total = 0;
            bool covered = true;
            for (int i = 0; i < trial.cell_count(); ++i) {
                if (trial.at_index(i) != Cell::Floor) continue;
                ++floor_total;
                const bool ina = da[static_cast<size_t>(i)] >= 0;
                const bool inb = db[static_cast<size_t>(i)] >= 0;
                if (ina) ++reach_a;
                if (inb) ++reach_b;
                if (!ina && !inb) covered = false;
            }
            if (!covered || reach_a < 4 || reach_b < 4 || reach_a + reach_b != floor_total) continue;
            layout_ = trial;
            door_cell_ = door;
            side_near_.clear();
            side_far_.clear();
            for (int i = 0; i < trial.cell_count(); ++i) {
                if (trial.at_index(i) != Cell::Floor) continue;
                (da[static_cast<size_t>(i)] >= 0 ? side_near_ : side_far_).push_back(i);
            }
            return;
        }
    }
    throw std::runtime_error("no valid dividing wall found for door-key on maze " + base_.id);
}

void TaskEnv::reset(uint64_t episode_seed) {
    episode_rng_.reseed(Rng::substream(env_seed_, "episode", episode_seed));
    work_ = layout_;
    done_ = false;
    steps_ = 0;
    balls_collected_ = 0;
    has_key_ = false;
    lava_cell_ = -1;

    if (spec_.kind == TaskKind::DoorKey) {
        work_.cells[static_cast<size_t>(door_cell_)] = Cell::DoorClosed;
        std::vector<int> near_side = side_near_, far_side = side_far_;
        if (near_side.size() < 2 || far_side.empty())
            throw std::runtime_error("too few floor cells for door-key placement");
        episode_rng_.shuffle(near_side);
        episode_rng_.shuffle(far_side);
        agent_ = near_side[0];
        work_.cells[static_cast<size_t>(near_side[1])] = Cell::Key;
        work_.cells[static_cast<size_t>(far_side[0])] = Cell::Exit;
        balls_remaining_ = 0;
    } else {
        auto floors = work_.floor_cells();
        const int needed = 1 + spec_.ball_count + 1;
        if (static_cast<int>(floors.size()) < needed)
            throw std::runtime_error("too few floor cells: need " + std::to_string(needed) + ", have " +
                                     std::to_string(floors.size()));
        episode_rng_.shuffle(floors);
        agent_ = floors[0];
        for (int i = 0; i < spec_.ball_count; ++i)
            work_.cells[static_cast<size_t>(floors[static_cast<size_t>(1 + i)])] = Cell::Ball;
        work_.cells[static_cast<size_t>(floors[static_cast<size_t>(1 + spec_.ball_count)])] = Cell::Exit;
        balls_remaining_ = spec_.ball_count;
    }
}

void TaskEnv::spawn_lava(Rng& rng) {
    if (lava_cell_ >= 0 && work_.at_index(lava_cell_) == Cell::Lava)
        work_.cells[static_cast<size_t>(lava_cell_)] = Cell::Floor;
    lava_cell_ = -1;
    std::vector<int> floors;
    for (int i = 0; i < work_.cell_count(); ++i)
        if (work_.at_index(i) == Cell::Floor && i != agent_) floors.push_back(i);
    if (floors.empty()) return;
    lava_cell_ = floors[static_cast<size_t>(rng.below(floors.size()))];
    work_.cells[static_cast<size_t>(lava_cell_)] = Cell::Lava;
}

StepResult TaskEnv::step(Action a) {
    if (done_) throw std::logic_error("step() after episode end");
    if (static_cast<int>(a) < 0 || static_cast<int>(a) >= action_count())
        throw std::invalid_argument("action " + std::to_string(static_cast<int>(a)) + " invalid for task " +
                                    task_kind_name(spec_.kind));
    StepResult res;
    res.reward = spec_.step_penalty;

    if (static_cast<int>(a) < kMoveActionCount) {
        const int target = move_target(work_, agent_, a);
        if (work_.passable(target)) {
            agent_ = target;
            switch (work_.at_index(agent_)) {
                case Cell::Ball: {
                    work_.cells[static_cast<size_t>(agent_)] = Cell::Floor;
                    --balls_remaining_;
                    ++balls_collected_;
                    res.balls_collected = 1;
                    if (spec_.kind != TaskKind::MultiGoalSparse) res.event_reward += spec_.subtask_reward;
                    break;
                }
                case Cell::Exit: {
                    res.reached_exit = true;
                    done_ = true;
                    if (spec_.kind == TaskKind::MultiGoalSparse)
                        res.event_reward += static_cast<double>(balls_collected_) / spec_.ball_count;
                    else
                        res.event_reward += spec_.subtask_reward;
                    break;
                }
                case Cell::Lava: {
                    res.hit_lava = true;
                    done_ = true;
                    res.event_reward += spec_.lava_penalty;
                    break;
                }
                default: break;
            }
        }
    } else if (a == Action::Pick) {
        if (work_.at_index(agent_) == Cell::Key) {
            work_.cells[static_cast<size_t>(agent_)] = Cell::Floor;
            has_key_ = true;
        }
    } else if (a == Action::Open) {
        if (has_key_) {
            for (Action dir : {Action::Up, Action::Down, Action::Left, Action::Right}) {
                const int n = agent_ + move_delta(work_, dir);
                if (n >= 0 && n < work_.cell_count() && work_.at_index(n) == Cell::DoorClosed) {
                    work_.cells[static_cast<size_t>(n)] = Cell::DoorOpen;
                    res.event_reward += spec_.subtask_reward;
                    res.opened_door = true;
                    break;
                }
            }
        }
    }

    res.reward += res.event_reward;
    ++steps_;
    if (!done_ && steps_ >= spec_.step_cap) {
        done_ = true;
        res.truncated = true;
    }
    if (spec_.kind == TaskKind::MultiGoalStochastic && !done_) spawn_lava(episode_rng_);
    res.done = done_;
    return res;
}

std::string TaskEnv::render() const {
    std::string out;
    for (int r = 0; r < work_.height; ++r) {
        for (int c = 0; c < work_.width; ++c) {
            const int idx = work_.cell_index(r, c);
            out.push_back(idx == agent_ ? '@' : cell_char(work_.at_index(idx)));
        }
        out.push_back('\n');
    }
    return out;
}

Trajectory random_walk(MazeNav& nav, int start, int length, Rng& rng) {
    nav.set_agent(start);
    Trajectory traj;
    traj.origin = TrajOrigin::RandomWalk;
    traj.states.push_back(nav.state_id());
    for (int t = 0; t < length; ++t) {
        const Action a = static_cast<Action>(rng.below(kMoveActionCount));
        nav.step(a);
        traj.actions.push_back(a);
        traj.states.push_back(nav.state_id());
    }
    return traj;
}

bool replay_matches(MazeNav& nav, int start, const std::vector<Action>& actions,
                    const std::vector<int>& expected_states) {
    if (expected_states.size() != actions.size() + 1) return false;
    if (expected_states.front() != start) return false;
    nav.set_agent(start);
    for (size_t i = 0; i < actions.size(); ++i) {
        nav.step(actions[i]);
        if (nav.state_id() != expected_states[i + 1]) return false;
    }
    return true;
}

std::vector<int> bfs_distances(const GridMaze& m, int src) {
    std::vector<int> dist(static_cast<size_t>(m.cell_count()), -1);
    if (src < 0 || src >= m.cell_count() || !m.passable(src)) return dist;
    std::deque<int> queue{src};
    dist[static_cast<size_t>(src)] = 0;
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        for (Action a : {Action::Up, Action::Down, Action::Left, Action::Right}) {
            const int nxt = move_target(m, cur, a);
            if (nxt != cur && m.passable(nxt) && dist[static_cast<size_t>(nxt)] < 0) {
                dist[static_cast<size_t>(nxt)] = dist[static_cast<size_t>(cur)] + 1;
                queue.push_back(nxt);
            }
        }
    }
    return dist;
}

} // namespace wg::maze
