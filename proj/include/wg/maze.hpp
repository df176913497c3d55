#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wg/rng.hpp"

namespace wg::maze {

enum class Cell : uint8_t { Wall, Floor, DoorClosed, DoorOpen, Key, Ball, Exit, Lava };

// Movement actions exist for every task; Pick/Open only for Door-Key.
enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Pick = 4, Open = 5 };
inline constexpr int kMoveActionCount = 4;
inline constexpr int kDoorKeyActionCount = 6;

enum class SizeClass { Small, Medium, Large };
enum class TaskKind { MultiGoal, MultiGoalSparse, MultiGoalStochastic, DoorKey };

int size_class_dim(SizeClass s);        // 11 / 17 / 25
int size_class_step_cap(SizeClass s);   // 200 / 500 / 1000
SizeClass size_class_for_dim(int dim);  // nearest class, for custom layouts
std::string size_class_name(SizeClass s);
SizeClass size_class_from_name(const std::string& name);
std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct GridMaze {
    int width = 0;
    int height = 0;
    std::vector<Cell> cells;
    SizeClass size_class = SizeClass::Small;
    std::string id; // layout descriptor, e.g. "small:7"

    Cell at(int r, int c) const { return cells[static_cast<size_t>(r) * width + c]; }
    Cell& at(int r, int c) { return cells[static_cast<size_t>(r) * width + c]; }
    Cell at_index(int idx) const { return cells[static_cast<size_t>(idx)]; }
    int cell_index(int r, int c) const { return r * width + c; }
    int row_of(int idx) const { return idx / width; }
    int col_of(int idx) const { return idx % width; }
    bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
    bool passable(int idx) const {
        Cell c = cells[static_cast<size_t>(idx)];
        return c != Cell::Wall && c != Cell::DoorClosed;
    }
    int cell_count() const { return width * height; }

    // Canonical start: first floor cell in row-major order.
    int start_cell() const;
    std::vector<int> floor_cells() const;
};

// Connected maze of walls and floor; deterministic in (size, seed).
// Layout: recursive-division walls with extra openings carved between rooms.
GridMaze generate_maze(SizeClass size, uint64_t seed);

// ASCII layout format, one character per cell, one row per line:
//   '#' wall, '.' floor, 'D' closed door, 'd' open door, 'K' key,
//   'b' ball, 'E' exit, '@' agent (agent must stand on plain floor), 'L' lava.
// to_ascii and from_ascii are exact inverses.
std::string to_ascii(const GridMaze& m, int agent_cell = -1);
struct ParsedMaze {
    GridMaze grid;
    int agent_cell = -1;
};
ParsedMaze from_ascii(const std::string& text);

// --- state encoding ------------------------------------------------------

// One channel per cell type plus an agent-position channel, flattened
// channel-major; index = channel * (H*W) + r*W + c. Exactly H*W + 1 indices
// are active for any state, which the input layers exploit.
inline constexpr int kCellChannels = 8;
inline constexpr int kAgentChannel = 8;
inline constexpr int kEncodingChannels = 9;

int encoding_dim(const GridMaze& m);
std::vector<int> encode_indices(const GridMaze& m, int agent_cell);
// Dense goal encoding: a single position channel of size H*W.
inline int position_dim(const GridMaze& m) { return m.width * m.height; }

struct DecodedState {
    int agent_cell = -1;
    std::vector<int> ball_cells;
    std::vector<int> key_cells;
    std::vector<int> exit_cells;
    std::vector<int> lava_cells;
    std::vector<int> closed_door_cells;
    std::vector<int> open_door_cells;
};
DecodedState decode_indices(const GridMaze& m, const std::vector<int>& indices);

// --- environments --------------------------------------------------------

struct StepResult {
    double reward = 0.0;
    bool done = false;
    bool truncated = false;   // step-cap cutoff rather than a terminal event
    double event_reward = 0.0; // reward minus the per-step penalty
    bool reached_exit = false;
    bool opened_door = false;
    bool hit_lava = false;
    int balls_collected = 0;
};

// Minimal control surface shared by the bare maze and task episodes.
class Env {
public:
    virtual ~Env() = default;
    virtual int action_count() const = 0;
    virtual int state_id() const = 0;
    virtual const GridMaze& grid() const = 0;
    virtual bool done() const = 0;
    virtual StepResult step(Action a) = 0;
    std::vector<int> encode() const { return encode_indices(grid(), state_id()); }
};

// Bare maze navigation: movement only, no rewards, never terminates.
// Used by graph discovery, edge building and goal-policy training.
class MazeNav final : public Env {
public:
    explicit MazeNav(GridMaze maze, int start = -1)
        : maze_(std::move(maze)), agent_(start >= 0 ? start : maze_.start_cell()) {}

    int action_count() const override { return kMoveActionCount; }
    int state_id() const override { return agent_; }
    const GridMaze& grid() const override { return maze_; }
    bool done() const override { return false; }
    StepResult step(Action a) override;

    void set_agent(int cell);

private:
    GridMaze maze_;
    int agent_ = 0;
};

struct TaskSpec {
    TaskKind kind = TaskKind::MultiGoal;
    int ball_count = 5;
    double step_penalty = -0.01;
    double lava_penalty = -0.5;
    double subtask_reward = 1.0;
    int step_cap = 200;
};
TaskSpec default_task_spec(TaskKind kind, SizeClass size);

// A task episode over a working copy of the maze. For Door-Key the dividing
// wall and door position are fixed per environment (env_seed); key, exit,
// agent and balls are re-placed on every reset from the episode seed.
class TaskEnv final : public Env {
public:
    TaskEnv(GridMaze base, TaskSpec spec, uint64_t env_seed);

    void reset(uint64_t episode_seed);

    int action_count() const override {
        return spec_.kind == TaskKind::DoorKey ? kDoorKeyActionCount : kMoveActionCount;
    }
    int state_id() const override { return agent_; }
    const GridMaze& grid() const override { return work_; }
    bool done() const override { return done_; }
    StepResult step(Action a) override;

    const TaskSpec& spec() const { return spec_; }
    const GridMaze& base_grid() const { return base_; }
    // Task maze with divider walls (Door-Key) but no episode objects.
    const GridMaze& layout_grid() const { return layout_; }
    int steps_taken() const { return steps_; }
    int balls_remaining() const { return balls_remaining_; }
    bool has_key() const { return has_key_; }
    int door_cell() const { return door_cell_; }
    std::string render() const; // display only; '@' overlays the agent cell

private:
    void place_doorkey_divider(Rng& rng);
    void spawn_lava(Rng& rng);

    GridMaze base_;    // pristine maze
    GridMaze layout_;  // base + divider (Door-Key), no episode objects
    GridMaze work_;    // episode grid with objects
    TaskSpec spec_;
    uint64_t env_seed_ = 0;

    int agent_ = -1;
    bool done_ = true;
    int steps_ = 0;
    int balls_remaining_ = 0;
    int balls_collected_ = 0;
    bool has_key_ = false;
    int door_cell_ = -1;
    int lava_cell_ = -1;
    std::vector<int> side_near_;  // door-key: component the agent and key spawn in
    std::vector<int> side_far_;   // door-key: component holding the exit
    Rng episode_rng_{0};
};

// --- trajectories --------------------------------------------------------

enum class TrajOrigin { RandomWalk, GoalPolicy };

struct Trajectory {
    std::vector<int> states;          // state ids, length = actions + 1
    std::vector<Action> actions;
    TrajOrigin origin = TrajOrigin::RandomWalk;
};

// Uniform-random movement walk recorded through the environment dynamics.
Trajectory random_walk(MazeNav& nav, int start, int length, Rng& rng);

// Replays actions from `start` and checks the visited states match; the
// independent validity oracle for stored trajectories and edge paths.
bool replay_matches(MazeNav& nav, int start, const std::vector<Action>& actions,
                    const std::vector<int>& expected_states);

// BFS distances over passable cells from `src`; -1 where unreachable.
std::vector<int> bfs_distances(const GridMaze& m, int src);

} // namespace wg::maze
