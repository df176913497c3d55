#include "wg/policy.hpp"

#include <algorithm>
#include <deque>
#include <cmath>
#include <stdexcept>

#include "wg/latent.hpp"

namespace wg::policy {

RecurrentActorCritic::RecurrentActorCritic(const std::string& name, int input_dim, int action_count,
                                           const A2CConfig& cfg, uint64_t seed)
    : name_(name), input_dim_(input_dim), action_count_(action_count), cfg_(cfg) {
    Rng rng(Rng::substream(seed, name));
    in_ = nn::Linear(params_, name + ".in", input_dim, cfg.embed, rng);
    lstm_ = nn::LstmCell(params_, name + ".lstm", cfg.embed, cfg.hidden, rng);
    actor_ = nn::Linear(params_, name + ".actor", cfg.hidden, action_count, rng);
    critic_ = nn::Linear(params_, name + ".critic", cfg.hidden, 1, rng);
    // Zero policy head: uniform initial action distribution.
    for (auto& v : params_.at(name + ".actor.w").mutable_value()) v = 0;
}

RecurrentActorCritic::StepOut RecurrentActorCritic::step(const std::vector<std::vector<int>>& indices,
                                                         nn::LstmState& state) const {
    Tensor x = tanh(in_.apply_sparse(indices));
    state = lstm_.step(x, state);
    return {actor_(state.h), critic_(state.h)};
}

int sample_from_logits(const Tensor& logits, int row, Rng& rng) {
    NoGradGuard guard;
    Tensor probs = softmax(logits);
    const double u = rng.uniform();
    double acc = 0.0;
    const int n = probs.cols();
    for (int a = 0; a < n; ++a) {
        acc += static_cast<double>(probs.at(row, a));
        if (u < acc) return a;
    }
    return n - 1;
}

AdvantageResult compute_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const uint8_t> terminal, double gamma, double bootstrap) {
    if (rewards.size() != values.size() || rewards.size() != terminal.size())
        throw std::invalid_argument("compute_advantages: length mismatch");
    const size_t n = rewards.size();
    AdvantageResult out;
    out.returns.resize(n);
    out.advantages.resize(n);
    double running = bootstrap;
    for (size_t i = n; i-- > 0;) {
        if (terminal[i]) running = 0.0;
        running = rewards[i] + gamma * running;
        out.returns[i] = running;
        out.advantages[i] = running - values[i];
    }
    return out;
}

GoalConditionedPolicy::GoalConditionedPolicy(const maze::GridMaze& grid, const A2CConfig& cfg,
                                             uint64_t seed)
    : net_("pi_g", maze::encoding_dim(grid) + maze::position_dim(grid), maze::kMoveActionCount, cfg,
           seed),
      goal_offset_(maze::encoding_dim(grid)) {}

std::vector<int> GoalConditionedPolicy::input_indices(const maze::GridMaze& grid, int state_id,
                                                      int goal_cell) const {
    auto idx = maze::encode_indices(grid, state_id);
    idx.push_back(goal_offset_ + goal_cell);
    return idx;
}

int sample_training_goal(maze::MazeNav& nav, int state, int walk_length, Rng& rng) {
    if (walk_length < 1) throw std::invalid_argument("sample_training_goal: walk_length >= 1");
    for (int attempt = 0; attempt < 10; ++attempt) {
        auto traj = maze::random_walk(nav, state, walk_length, rng);
        if (traj.states.back() != state) return traj.states.back();
    }
    // Walled-in fallback: any passable neighbor, else the state itself.
    for (maze::Action a :
         {maze::Action::Up, maze::Action::Down, maze::Action::Left, maze::Action::Right}) {
        nav.set_agent(state);
        nav.step(a);
        if (nav.state_id() != state) return nav.state_id();
    }
    return state;
}

NavigateResult navigate(const GoalConditionedPolicy& pi, maze::Env& env, int goal, int time_limit,
                        Rng& rng) {
    if (time_limit < 1) throw std::invalid_argument("navigate: time_limit >= 1");
    NoGradGuard guard;
    NavigateResult out;
    out.traj.origin = maze::TrajOrigin::GoalPolicy;
    out.traj.states.push_back(env.state_id());
    auto state = pi.net().initial_state(1);
    for (int t = 0; t < time_limit; ++t) {
        if (env.state_id() == goal) break;
        if (env.done()) break;
        auto inputs = pi.input_indices(env.grid(), env.state_id(), goal);
        auto step_out = pi.net().step({inputs}, state);
        const int a = sample_from_logits(step_out.logits, 0, rng);
        auto res = env.step(static_cast<maze::Action>(a));
        out.step_inputs.push_back(std::move(inputs));
        out.traj.actions.push_back(static_cast<maze::Action>(a));
        out.traj.states.push_back(env.state_id());
        out.rewards.push_back(res.reward);
    }
    out.reached = env.state_id() == goal;
    return out;
}

namespace {

struct EnvSlot {
    maze::MazeNav nav;
    int goal = -1;
    int steps_left = 0;
    double episode_return = 0.0;
    maze::Trajectory* episode = nullptr; // owned by the trainer's episode store
};

} // namespace

GoalTrainStats train_goal_policy(const maze::GridMaze& grid, GoalConditionedPolicy& pi,
                                 latent::LatentSegModel* latent_model,
                                 const std::vector<int>& start_states, const GoalTrainConfig& cfg,
                                 Rng& rng) {
    if (start_states.empty()) throw std::invalid_argument("train_goal_policy: no start states");
    const auto& a2c = pi.net().config();
    nn::Adam opt(static_cast<Real>(a2c.lr));
    maze::MazeNav scratch(grid);

    GoalTrainStats stats;
    double intrinsic_sum = 0.0;
    int64_t intrinsic_count = 0;
    int window_episodes = 0, window_successes = 0;

    const int B = cfg.batch_envs;
    // Episode trajectories live here so curiosity references stay valid when
    // a slot rolls over to a new episode (deque keeps addresses stable).
    std::deque<maze::Trajectory> episodes;
    std::vector<EnvSlot> slots;
    slots.reserve(static_cast<size_t>(B));
    auto new_episode = [&](EnvSlot& slot) {
        const int start = start_states[static_cast<size_t>(rng.below(start_states.size()))];
        slot.nav.set_agent(start);
        slot.goal = sample_training_goal(scratch, start, cfg.walk_length, rng);
        slot.steps_left = cfg.goal_horizon;
        slot.episode_return = 0.0;
        episodes.emplace_back();
        slot.episode = &episodes.back();
        slot.episode->origin = maze::TrajOrigin::GoalPolicy;
        slot.episode->states.push_back(start);
    };
    for (int b = 0; b < B; ++b) {
        slots.push_back({maze::MazeNav(grid), -1, 0, 0.0, nullptr});
        new_episode(slots.back());
    }

    auto hidden = pi.net().initial_state(B);
    const int T = a2c.t_max;

    for (int update = 0; update < cfg.updates; ++update) {
        std::vector<Tensor> logp_steps, value_steps, entropy_steps;
        std::vector<std::vector<double>> rewards(static_cast<size_t>(B));
        std::vector<std::vector<double>> values(static_cast<size_t>(B));
        std::vector<std::vector<uint8_t>> terminal(static_cast<size_t>(B));
        // Per (env, step) trajectory position for the curiosity pass after
        // the rollout.
        std::vector<std::vector<std::pair<const maze::Trajectory*, size_t>>> curiosity_ref(
            static_cast<size_t>(B));

        for (int t = 0; t < T; ++t) {
            std::vector<std::vector<int>> idx;
            idx.reserve(static_cast<size_t>(B));
            for (auto& slot : slots)
                idx.push_back(pi.input_indices(grid, slot.nav.state_id(), slot.goal));
            auto out = pi.net().step(idx, hidden);
            Tensor logp_all = log(softmax(out.logits));
            Tensor probs = softmax(out.logits);
            Tensor entropy = neg(sum_rows(mul(probs, logp_all))); // [B,1]

            std::vector<Real> onehot(static_cast<size_t>(B) * maze::kMoveActionCount, Real(0));
            std::vector<Real> reset_mask(static_cast<size_t>(B), Real(1));
            for (int b = 0; b < B; ++b) {
                auto& slot = slots[static_cast<size_t>(b)];
                const int a = sample_from_logits(out.logits, b, rng);
                onehot[static_cast<size_t>(b) * maze::kMoveActionCount + a] = Real(1);
                slot.nav.step(static_cast<maze::Action>(a));
                slot.episode->actions.push_back(static_cast<maze::Action>(a));
                slot.episode->states.push_back(slot.nav.state_id());
                --slot.steps_left;

                const bool reached = slot.nav.state_id() == slot.goal;
                double r = cfg.step_penalty + (reached ? cfg.reach_reward : 0.0);
                rewards[static_cast<size_t>(b)].push_back(r);
                values[static_cast<size_t>(b)].push_back(static_cast<double>(out.value.at(b, 0)));
                curiosity_ref[static_cast<size_t>(b)].emplace_back(slot.episode,
                                                                   slot.episode->actions.size() - 1);
                slot.episode_return += r;

                const bool done = reached || slot.steps_left <= 0;
                terminal[static_cast<size_t>(b)].push_back(done);
                if (done) {
                    ++stats.episodes;
                    stats.successes += reached;
                    ++window_episodes;
                    window_successes += reached;
                    stats.mean_return += slot.episode_return;
                    new_episode(slot);
                    reset_mask[static_cast<size_t>(b)] = Real(0);
                }
            }
            // Row-reset hidden state for envs that finished an episode.
            Tensor mask = Tensor::from_vector(B, 1, reset_mask);
            hidden.h = scale_rows(hidden.h, mask);
            hidden.c = scale_rows(hidden.c, mask);

            logp_steps.push_back(sum_rows(mul(logp_all, Tensor::from_vector(B, maze::kMoveActionCount,
                                                                            std::move(onehot)))));
            value_steps.push_back(out.value);
            entropy_steps.push_back(entropy);
        }

        // Curiosity: decoder reconstruction error against the latest latent
        // snapshot; episodes shorter than two actions contribute zero.
        if (latent_model != nullptr && cfg.eta != 0.0) {
            std::vector<const maze::Trajectory*> seen;
            std::vector<std::vector<double>> nll_cache;
            auto nll_for = [&](const maze::Trajectory* traj) -> const std::vector<double>& {
                for (size_t i = 0; i < seen.size(); ++i)
                    if (seen[i] == traj) return nll_cache[i];
                seen.push_back(traj);
                if (traj->actions.size() >= 2)
                    nll_cache.push_back(latent_model->action_nll(*traj));
                else
                    nll_cache.push_back(std::vector<double>(traj->actions.size(), 0.0));
                return nll_cache.back();
            };
            for (int b = 0; b < B; ++b) {
                for (int t = 0; t < T; ++t) {
                    auto [traj, pos] = curiosity_ref[static_cast<size_t>(b)][static_cast<size_t>(t)];
                    const auto& nll = nll_for(traj);
                    const double bonus = pos < nll.size() ? cfg.eta * nll[pos] : 0.0;
                    rewards[static_cast<size_t>(b)][static_cast<size_t>(t)] += bonus;
                    intrinsic_sum += bonus;
                    ++intrinsic_count;
                }
            }
        }

        // Bootstrap values for unfinished episodes.
        std::vector<double> bootstrap(static_cast<size_t>(B), 0.0);
        {
            NoGradGuard guard;
            std::vector<std::vector<int>> idx;
            for (auto& slot : slots)
                idx.push_back(pi.input_indices(grid, slot.nav.state_id(), slot.goal));
            auto carry = hidden; // copy; the graph state itself stays intact
            auto out = pi.net().step(idx, carry);
            for (int b = 0; b < B; ++b)
                if (!terminal[static_cast<size_t>(b)].back())
                    bootstrap[static_cast<size_t>(b)] = static_cast<double>(out.value.at(b, 0));
        }

        // Assemble the batched A2C loss.
        std::vector<AdvantageResult> adv_per_env(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b)
            adv_per_env[static_cast<size_t>(b)] =
                compute_advantages(rewards[static_cast<size_t>(b)], values[static_cast<size_t>(b)],
                                   terminal[static_cast<size_t>(b)], a2c.gamma,
                                   bootstrap[static_cast<size_t>(b)]);
        Tensor loss = Tensor::scalar(0);
        for (int t = 0; t < T; ++t) {
            std::vector<Real> adv(static_cast<size_t>(B)), ret(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) {
                adv[static_cast<size_t>(b)] =
                    static_cast<Real>(adv_per_env[static_cast<size_t>(b)].advantages[static_cast<size_t>(t)]);
                ret[static_cast<size_t>(b)] =
                    static_cast<Real>(adv_per_env[static_cast<size_t>(b)].returns[static_cast<size_t>(t)]);
            }
            Tensor adv_t = Tensor::from_vector(B, 1, std::move(adv));
            Tensor ret_t = Tensor::from_vector(B, 1, std::move(ret));
            Tensor pg = neg(sum(mul(adv_t, logp_steps[static_cast<size_t>(t)])));
            Tensor vd = sub(value_steps[static_cast<size_t>(t)], ret_t);
            Tensor vl = mul_scalar(sum(mul(vd, vd)), static_cast<Real>(a2c.value_weight));
            Tensor ent = mul_scalar(sum(entropy_steps[static_cast<size_t>(t)]),
                                    static_cast<Real>(-a2c.entropy_weight));
            loss = add(loss, add(pg, add(vl, ent)));
        }
        loss = mul_scalar(loss, Real(1) / static_cast<Real>(B * T));
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw std::runtime_error("train_goal_policy: non-finite loss");
        pi.net().params().zero_grad();
        backward(loss);
        auto tensors = pi.net().params().tensors();
        clip_grad_global_norm(tensors, static_cast<Real>(a2c.clip_norm));
        opt.step(pi.net().params());

        hidden.h = hidden.h.detach();
        hidden.c = hidden.c.detach();

        if ((update + 1) % 50 == 0 && window_episodes >= 100) {
            if (static_cast<double>(window_successes) / window_episodes >= cfg.stop_success) break;
            window_episodes = 0;
            window_successes = 0;
        }
    }

    if (stats.episodes > 0) stats.mean_return /= stats.episodes;
    stats.mean_intrinsic = intrinsic_count ? intrinsic_sum / static_cast<double>(intrinsic_count) : 0.0;
    return stats;
}

double eval_goal_policy(const maze::GridMaze& grid, const GoalConditionedPolicy& pi,
                        int max_distance, int horizon, int episodes, uint64_t seed) {
    Rng rng(Rng::substream(seed, "pi_g-eval"));
    maze::MazeNav env(grid);
    const auto floors = grid.floor_cells();
    int success = 0;
    for (int e = 0; e < episodes; ++e) {
        int start, goal;
        while (true) {
            start = floors[static_cast<size_t>(rng.below(floors.size()))];
            auto dist = maze::bfs_distances(grid, start);
            std::vector<int> close;
            for (int f : floors)
                if (f != start && dist[static_cast<size_t>(f)] >= 1 &&
                    dist[static_cast<size_t>(f)] <= max_distance)
                    close.push_back(f);
            if (!close.empty()) {
                goal = close[static_cast<size_t>(rng.below(close.size()))];
                break;
            }
        }
        env.set_agent(start);
        auto res = navigate(pi, env, goal, horizon, rng);
        success += res.reached;
    }
    return static_cast<double>(success) / episodes;
}

} // namespace wg::policy
