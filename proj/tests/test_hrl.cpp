#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "wg/hrl.hpp"

using namespace wg;
using namespace wg::hrl;

namespace {

maze::GridMaze small_maze() { return maze::generate_maze(maze::SizeClass::Small, 2); }

FeudalConfig tiny_cfg() {
    FeudalConfig cfg;
    cfg.a2c.embed = 8;
    cfg.a2c.hidden = 8;
    cfg.a2c.t_max = 8;
    return cfg;
}

} // namespace

TEST_CASE("make_candidate_set: definitions and determinism") {
    auto grid = small_maze();
    std::vector<int> v_p = {15, 40, 23, 88};
    auto all = make_candidate_set(CandidateKind::VAll, grid, v_p, 1);
    CHECK(all.size() == grid.floor_cells().size());

    auto rnd1 = make_candidate_set(CandidateKind::VRand, grid, v_p, 7);
    auto rnd2 = make_candidate_set(CandidateKind::VRand, grid, v_p, 7);
    auto rnd3 = make_candidate_set(CandidateKind::VRand, grid, v_p, 8);
    CHECK(rnd1.size() == v_p.size()); // |V_rand| = |V_p| always
    CHECK(rnd1 == rnd2);
    CHECK(rnd1 != rnd3);

    auto vp = make_candidate_set(CandidateKind::VP, grid, v_p, 1);
    CHECK(vp == std::vector<int>({15, 23, 40, 88}));
}

TEST_CASE("fresh manager: uniform wide head, window bounds, masking") {
    auto grid = small_maze();
    auto cands = grid.floor_cells();
    FeudalConfig cfg = tiny_cfg();
    ManagerPolicy mgr(grid, cands, cfg, 5);
    Rng rng(3);
    auto hidden = mgr.initial_state();
    auto dec = mgr.act(grid, grid.start_cell(), hidden, rng);

    // Zero-logit heads: wide entropy is exactly ln|V| and narrow entropy is
    // ln(valid window cells); both within 1e-6.
    int valid = 0;
    const int half = cfg.narrow_n / 2;
    const int gr = grid.row_of(dec.g_w), gc = grid.col_of(dec.g_w);
    for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
            if (!grid.in_bounds(gr + dr, gc + dc)) continue;
            valid += grid.at(gr + dr, gc + dc) != maze::Cell::Wall;
        }
    const double expect = std::log(static_cast<double>(cands.size())) + std::log(valid);
    CHECK(std::fabs(dec.entropy.item() - expect) < 1e-6);

    // Narrow goal lies inside the NxN window and is never a wall.
    for (int trial = 0; trial < 300; ++trial) {
        auto h = mgr.initial_state();
        auto d = mgr.act(grid, grid.start_cell(), h, rng);
        CHECK(std::abs(grid.row_of(d.g_n) - grid.row_of(d.g_w)) <= half);
        CHECK(std::abs(grid.col_of(d.g_n) - grid.col_of(d.g_w)) <= half);
        CHECK(grid.at_index(d.g_n) != maze::Cell::Wall);
    }
}

TEST_CASE("masked softmax assigns exactly zero probability") {
    Tensor logits = Tensor::from_vector(1, 3, {0.3, 0.0, 0.0});
    Tensor mask = Tensor::from_vector(1, 3, {0.0, -1e9, 0.0});
    Tensor p = softmax(add(logits, mask));
    CHECK(p.at(0, 1) == 0.0);
    CHECK(p.at(0, 0) > 0.0);
    CHECK(p.at(0, 0) + p.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-valid-cell window gives deterministic narrow goal with zero entropy") {
    // g_w in a corner pocket: only the center cell of the window is floor.
    auto parsed = maze::from_ascii("#####\n"
                                   "#.###\n"
                                   "###.#\n"
                                   "#####\n");
    auto& grid = parsed.grid;
    FeudalConfig cfg = tiny_cfg();
    cfg.narrow_n = 3;
    const int pocket = grid.cell_index(1, 1);
    ManagerPolicy mgr(grid, {pocket}, cfg, 5);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto h = mgr.initial_state();
        auto d = mgr.act(grid, grid.cell_index(2, 3), h, rng);
        CHECK(d.g_w == pocket);
        CHECK(d.g_n == pocket);
        // wide is a single candidate and the window has one valid cell:
        // the whole decision entropy is exactly zero.
        CHECK(std::fabs(d.entropy.item()) < 1e-9);
    }
}

TEST_CASE("decision entropy uses the sampled-narrow alternative, not the joint") {
    // Window valid-counts differ across wide goals, so the alternative form
    // H(w) + H(n | sampled g_w) differs from the joint-expectation form;
    // the decision must match the former exactly.
    auto grid = small_maze();
    auto cands = grid.floor_cells();
    FeudalConfig cfg = tiny_cfg();
    ManagerPolicy mgr(grid, cands, cfg, 5);
    Rng rng(17);
    double expected_joint_style = std::log(static_cast<double>(cands.size()));
    {
        // joint-expectation alternative would average ln(valid) over ALL g_w
        double mean_ln_valid = 0;
        const int half = cfg.narrow_n / 2;
        for (int cand : cands) {
            int valid = 0;
            for (int dr = -half; dr <= half; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    int r = grid.row_of(cand) + dr, c = grid.col_of(cand) + dc;
                    if (grid.in_bounds(r, c) && grid.at(r, c) != maze::Cell::Wall) ++valid;
                }
            mean_ln_valid += std::log(valid);
        }
        expected_joint_style += mean_ln_valid / cands.size();
    }
    int diffs = 0;
    for (int i = 0; i < 20; ++i) {
        auto h = mgr.initial_state();
        auto d = mgr.act(grid, grid.start_cell(), h, rng);
        int valid = 0;
        const int half = cfg.narrow_n / 2;
        for (int dr = -half; dr <= half; ++dr)
            for (int dc = -half; dc <= half; ++dc) {
                int r = grid.row_of(d.g_w) + dr, c = grid.col_of(d.g_w) + dc;
                if (grid.in_bounds(r, c) && grid.at(r, c) != maze::Cell::Wall) ++valid;
            }
        const double alternative = std::log(static_cast<double>(cands.size())) + std::log(valid);
        CHECK(std::fabs(d.entropy.item() - alternative) < 1e-6);
        diffs += std::fabs(alternative - expected_joint_style) > 1e-6;
    }
    CHECK(diffs > 0); // the two forms genuinely differ on this maze
}

TEST_CASE("zero advantages with zero entropy weight leave manager heads unchanged") {
    auto grid = small_maze();
    FeudalConfig cfg = tiny_cfg();
    ManagerPolicy mgr(grid, grid.floor_cells(), cfg, 5);
    Rng rng(3);
    auto hidden = mgr.initial_state();
    auto dec = mgr.act(grid, grid.start_cell(), hidden, rng);

    // Manager loss with A=0 and no entropy: only the value term remains.
    Tensor ret = Tensor::scalar(0.37);
    Tensor vd = sub(dec.value, ret);
    Tensor loss = add(mul_scalar(sum(mul(dec.logp, Tensor::scalar(0))), Real(1)),
                      mul_scalar(sum(mul(vd, vd)), Real(0.5)));
    mgr.params().zero_grad();
    backward(loss);
    for (const char* name : {"manager.wide.w", "manager.narrow_out.w"}) {
        const auto& t = mgr.params().at(name);
        double g = 0;
        for (Real v : t.grad()) g += std::fabs(static_cast<double>(v));
        CHECK(g == 0.0);
    }
}

TEST_CASE("init_from_goal_policy: copy semantics and fresh uniform heads") {
    auto grid = small_maze();
    policy::A2CConfig pcfg;
    pcfg.embed = 8;
    pcfg.hidden = 8;
    policy::GoalConditionedPolicy pi(grid, pcfg, 21);
    // Give pi_g distinctive weights.
    Rng jitter(5);
    for (auto& [name, t] : pi.net().params().named())
        for (auto& v : t.mutable_value()) v += static_cast<Real>(jitter.uniform(-0.05, 0.05));
    auto ckpt = pi.snapshot();

    FeudalConfig cfg = tiny_cfg();
    auto agent = make_feudal_agent(grid, maze::kMoveActionCount, cfg, grid.floor_cells(), 33);
    init_from_goal_policy(agent, ckpt);

    // Worker logits on (s, g, g) equal pi_g logits on (s, g): the wide-goal
    // block is zeroed and the narrow block carries pi_g's goal weights.
    auto floors = grid.floor_cells();
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const int s = floors[static_cast<size_t>(rng.below(floors.size()))];
        const int g = floors[static_cast<size_t>(rng.below(floors.size()))];
        auto h1 = pi.net().initial_state(1);
        auto h2 = agent.worker->initial_state(1);
        auto o1 = pi.net().step({pi.input_indices(grid, s, g)}, h1);
        auto o2 = agent.worker->step({agent.worker_indices(grid, s, g, g)}, h2);
        for (int a = 0; a < 4; ++a) CHECK(o1.logits.at(0, a) == o2.logits.at(0, a));
        CHECK(o1.value.at(0, 0) == o2.value.at(0, 0));
    }

    // Fresh manager heads stay uniform after init.
    auto mh = agent.manager->initial_state();
    auto dec = agent.manager->act(grid, grid.start_cell(), mh, rng);
    (void)dec;
    auto wide_w = agent.manager->params().at("manager.wide.w");
    for (Real v : wide_w.value()) CHECK(v == 0.0);

    // Door-key task: extra action columns keep their fresh values, move
    // columns copy.
    auto dk = make_feudal_agent(grid, maze::kDoorKeyActionCount, cfg, grid.floor_cells(), 34);
    init_from_goal_policy(dk, ckpt);
    const auto& aw = dk.worker->params().at("worker.actor.w");
    const auto& pw = pi.net().params().at("pi_g.actor.w");
    for (int r = 0; r < aw.rows(); ++r)
        for (int c = 0; c < 4; ++c) CHECK(aw.at(r, c) == pw.at(r, c));

    // Trunk shape mismatch is rejected naming both shapes.
    policy::A2CConfig other = pcfg;
    other.hidden = 6;
    auto bad = make_feudal_agent(grid, maze::kMoveActionCount, [&] {
        FeudalConfig c2 = cfg;
        c2.a2c.hidden = 6;
        return c2;
    }(), grid.floor_cells(), 35);
    CHECK_THROWS_WITH_AS(init_from_goal_policy(bad, ckpt), doctest::Contains("lstm"),
                         std::runtime_error);
}

TEST_CASE("run_episode bookkeeping: tenure rewards sum to the episode total") {
    auto grid = small_maze();
    FeudalConfig cfg = tiny_cfg();
    auto agent = make_feudal_agent(grid, maze::kMoveActionCount, cfg, grid.floor_cells(), 3);
    maze::TaskEnv env(grid, maze::default_task_spec(maze::TaskKind::MultiGoal, maze::SizeClass::Small), 5);
    Rng rng(7);
    for (uint64_t seed = 0; seed < 5; ++seed) {
        env.reset(seed);
        auto rec = run_episode(agent, env, rng);
        double credited = 0.0;
        int steps = 0;
        for (const auto& d : rec.decisions) {
            credited += d.env_reward;
            steps += d.tenure_steps;
        }
        CHECK(credited == doctest::Approx(rec.total_reward).epsilon(1e-9));
        CHECK(steps == rec.steps);
        CHECK(rec.steps <= env.spec().step_cap);
    }
}

TEST_CASE("traversal flag off or missing graph reduces to plain WN behavior") {
    auto grid = small_maze();
    FeudalConfig with = tiny_cfg();
    with.traversal = true; // but no graph attached
    FeudalConfig without = tiny_cfg();

    auto run = [&](const FeudalConfig& cfg) {
        auto agent = make_feudal_agent(grid, maze::kMoveActionCount, cfg, grid.floor_cells(), 3);
        maze::TaskEnv env(grid, maze::default_task_spec(maze::TaskKind::MultiGoal, maze::SizeClass::Small), 5);
        env.reset(11);
        Rng rng(13);
        auto rec = run_episode(agent, env, rng);
        return std::make_pair(rec.total_reward, rec.steps);
    };
    CHECK(run(with) == run(without));
}

TEST_CASE("traversal executes before worker control when standing on a node") {
    auto grid = small_maze();
    maze::MazeNav nav(grid);
    auto floors = grid.floor_cells();
    std::vector<int> nodes;
    for (size_t i = 0; i < floors.size(); i += 5) nodes.push_back(floors[i]);
    auto world = std::make_shared<graph::WorldGraph>(graph::build_edges(nodes, nav, nullptr, 40, 40, 5));

    FeudalConfig cfg = tiny_cfg();
    cfg.traversal = true;
    // Candidates = graph nodes so g_w is always a node.
    auto agent = make_feudal_agent(grid, maze::kMoveActionCount, cfg, nodes, 3);
    agent.world = world;
    maze::TaskEnv env(grid, maze::default_task_spec(maze::TaskKind::MultiGoal, maze::SizeClass::Small), 5);

    Rng rng(7);
    bool saw_traversal = false;
    for (uint64_t seed = 0; seed < 30 && !saw_traversal; ++seed) {
        env.reset(seed);
        auto rec = run_episode(agent, env, rng);
        for (const auto& d : rec.decisions) {
            if (!d.traversed) continue;
            saw_traversal = true;
            // Route starts on the node where the trigger fired (emission
            // state or a node encountered mid-pursuit) and targets g_w.
            CHECK(world->has_node(d.route.front()));
            CHECK(d.route.back() == d.g_w);
        }
    }
    CHECK(saw_traversal);
}

TEST_CASE("blocked replay in door-key aborts traversal and yields a decision point") {
    auto grid = maze::generate_maze(maze::SizeClass::Small, 8);
    maze::TaskEnv env(grid, maze::default_task_spec(maze::TaskKind::DoorKey, maze::SizeClass::Small), 3);
    env.reset(1);

    // Build the graph on the bare maze; pick an edge whose path crosses the
    // closed door cell.
    maze::MazeNav nav(grid);
    auto floors = grid.floor_cells();
    std::vector<int> nodes;
    for (size_t i = 0; i < floors.size(); i += 4) nodes.push_back(floors[i]);
    auto world = graph::build_edges(nodes, nav, nullptr, 60, 40, 9);

    const int door = env.door_cell();
    bool found = false;
    for (const auto& [key, path] : world.edges()) {
        maze::MazeNav probe(grid, key.first);
        bool crosses = false;
        for (auto a : path.actions) {
            probe.step(a);
            if (probe.state_id() == door) crosses = true;
        }
        if (!crosses) continue;
        found = true;
        auto plan = world.plan(key.first, key.second);
        REQUIRE(plan.has_value());
        // Teleport the episode's agent onto the edge source if possible: we
        // drive execute_traversal directly against the live task env.
        maze::TaskEnv fresh(grid, maze::default_task_spec(maze::TaskKind::DoorKey, maze::SizeClass::Small), 3);
        fresh.reset(1);
        // walk the agent to key.first may be impossible; instead replay from
        // wherever it is only if the source matches. Use the outcome contract
        // on a nav copy of the task layout with the door closed.
        maze::GridMaze closed = fresh.layout_grid();
        closed.cells[static_cast<size_t>(door)] = maze::Cell::Wall; // closed door blocks like a wall
        maze::MazeNav blocked(closed, key.first);
        auto out = graph::execute_traversal(world, *plan, blocked, graph::TraversalMode::Replay,
                                            nullptr, 10, nullptr);
        CHECK_FALSE(out.completed);
        break;
    }
    CHECK(found);
}

TEST_CASE("hrl trainer: flat and feudal smoke runs are finite and deterministic") {
    auto grid = small_maze();
    auto spec = maze::default_task_spec(maze::TaskKind::MultiGoal, maze::SizeClass::Small);

    auto run_flat = [&] {
        FeudalConfig cfg = tiny_cfg();
        auto agent = make_flat_agent(grid, maze::kMoveActionCount, cfg, 3);
        HrlTrainConfig tc;
        tc.iterations = 30;
        tc.batch_envs = 4;
        tc.seed = 5;
        HrlTrainer trainer(agent, grid, spec, 7, tc);
        double last = 0;
        trainer.run([&](const IterationStats& s) {
            CHECK(std::isfinite(s.worker_loss));
            last = s.worker_loss;
        });
        auto ckpt = agent.snapshot();
        std::vector<double> flatvals;
        for (auto& [_, e] : ckpt) flatvals.insert(flatvals.end(), e.values.begin(), e.values.end());
        return flatvals;
    };
    CHECK(run_flat() == run_flat());

    auto run_feudal = [&](bool traversal) {
        FeudalConfig cfg = tiny_cfg();
        cfg.traversal = traversal;
        auto agent = make_feudal_agent(grid, maze::kMoveActionCount, cfg, grid.floor_cells(), 3);
        if (traversal) {
            maze::MazeNav nav(grid);
            auto floors = grid.floor_cells();
            std::vector<int> nodes;
            for (size_t i = 0; i < floors.size(); i += 5) nodes.push_back(floors[i]);
            agent.world = std::make_shared<graph::WorldGraph>(
                graph::build_edges(nodes, nav, nullptr, 30, 30, 5));
            // traversal needs g_w within nodes
            agent.manager = std::make_unique<ManagerPolicy>(grid, nodes, cfg, 3);
        }
        HrlTrainConfig tc;
        tc.iterations = 30;
        tc.batch_envs = 4;
        tc.seed = 5;
        HrlTrainer trainer(agent, grid, spec, 7, tc);
        trainer.run([&](const IterationStats& s) {
            CHECK(std::isfinite(s.worker_loss));
            CHECK(std::isfinite(s.manager_loss));
        });
        auto ckpt = agent.snapshot();
        std::vector<double> vals;
        for (auto& [_, e] : ckpt) vals.insert(vals.end(), e.values.begin(), e.values.end());
        return vals;
    };
    CHECK(run_feudal(false) == run_feudal(false));
    CHECK(run_feudal(true) == run_feudal(true));
    CHECK(run_feudal(false) != run_feudal(true));
}
