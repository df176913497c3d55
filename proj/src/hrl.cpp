#include "wg/hrl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wg::hrl {

std::string candidate_kind_name(CandidateKind k) {
    switch (k) {
        case CandidateKind::VAll: return "v-all";
        case CandidateKind::VRand: return "v-rand";
        case CandidateKind::VP: return "v-p";
    }
    return "v-p";
}

CandidateKind candidate_kind_from_name(const std::string& name) {
    if (name == "v-all") return CandidateKind::VAll;
    if (name == "v-rand") return CandidateKind::VRand;
    if (name == "v-p") return CandidateKind::VP;
    throw std::invalid_argument("unknown candidate set: " + name);
}

std::vector<int> make_candidate_set(CandidateKind kind, const maze::GridMaze& layout,
                                    const std::vector<int>& v_p, uint64_t seed) {
    switch (kind) {
        case CandidateKind::VAll: return layout.floor_cells();
        case CandidateKind::VP: {
            auto v = v_p;
            std::sort(v.begin(), v.end());
            return v;
        }
        case CandidateKind::VRand: {
            auto floors = layout.floor_cells();
            Rng rng(Rng::substream(seed, "v-rand"));
            rng.shuffle(floors);
            const size_t n = std::min(v_p.size(), floors.size());
            std::vector<int> v(floors.begin(), floors.begin() + static_cast<long>(n));
            std::sort(v.begin(), v.end());
            return v;
        }
    }
    return {};
}

ManagerPolicy::ManagerPolicy(const maze::GridMaze& grid, std::vector<int> candidates,
                             const FeudalConfig& cfg, uint64_t seed)
    : candidates_(std::move(candidates)), narrow_n_(cfg.narrow_n), cfg_(cfg.a2c) {
    if (candidates_.empty()) throw std::invalid_argument("manager: empty candidate set");
    if (narrow_n_ < 1 || narrow_n_ % 2 == 0)
        throw std::invalid_argument("manager: narrow window must be odd and >= 1");
    std::sort(candidates_.begin(), candidates_.end());
    Rng rng(Rng::substream(seed, "manager"));
    const int enc_dim = maze::encoding_dim(grid);
    const int n2 = narrow_n_ * narrow_n_;
    window_channels_ = maze::kCellChannels;
    in_ = nn::Linear(params_, "manager.in", enc_dim, cfg_.embed, rng);
    lstm_ = nn::LstmCell(params_, "manager.lstm", cfg_.embed, cfg_.hidden, rng);
    critic_ = nn::Linear(params_, "manager.critic", cfg_.hidden, 1, rng);
    wide_ = nn::Linear(params_, "manager.wide", cfg_.hidden, static_cast<int>(candidates_.size()), rng);
    narrow_in_ = nn::Linear(params_, "manager.narrow_in",
                            window_channels_ * n2 + maze::position_dim(grid), cfg_.embed, rng);
    narrow_out_ = nn::Linear(params_, "manager.narrow_out", cfg_.hidden + cfg_.embed, n2, rng);
    // Zero heads: uniform initial wide and narrow distributions.
    for (auto& v : params_.at("manager.wide.w").mutable_value()) v = 0;
    for (auto& v : params_.at("manager.narrow_out.w").mutable_value()) v = 0;
}

ManagerPolicy::Decision ManagerPolicy::act(const maze::GridMaze& grid, int agent_state,
                                           nn::LstmState& hidden, Rng& rng) {
    Tensor x = tanh(in_.apply_sparse({maze::encode_indices(grid, agent_state)}));
    hidden = lstm_.step(x, hidden);

    Decision dec;
    Tensor wide_logits = wide_(hidden.h);
    Tensor wide_logp = log(softmax(wide_logits));
    Tensor wide_probs = softmax(wide_logits);
    const int wide_idx = policy::sample_from_logits(wide_logits, 0, rng);
    dec.g_w = candidates_[static_cast<size_t>(wide_idx)];

    std::vector<Real> wide_onehot(candidates_.size(), Real(0));
    wide_onehot[static_cast<size_t>(wide_idx)] = Real(1);
    Tensor wide_pick = sum_rows(mul(wide_logp, Tensor::from_vector(1, static_cast<int>(candidates_.size()),
                                                                   std::move(wide_onehot))));
    Tensor wide_entropy = neg(sum_rows(mul(wide_probs, wide_logp)));

    // Narrow head over the NxN window around g_w, masked to non-wall cells.
    const int n = narrow_n_;
    const int n2 = n * n;
    const int half = n / 2;
    const int gr = grid.row_of(dec.g_w), gc = grid.col_of(dec.g_w);
    std::vector<int> widx;
    std::vector<uint8_t> valid(static_cast<size_t>(n2), 0);
    std::vector<int> cell_of(static_cast<size_t>(n2), -1);
    for (int dr = -half; dr <= half; ++dr) {
        for (int dc = -half; dc <= half; ++dc) {
            const int wi = (dr + half) * n + (dc + half);
            const int r = gr + dr, c = gc + dc;
            if (!grid.in_bounds(r, c)) continue;
            const int cell = grid.cell_index(r, c);
            const maze::Cell type = grid.at_index(cell);
            widx.push_back(static_cast<int>(type) * n2 + wi);
            cell_of[static_cast<size_t>(wi)] = cell;
            valid[static_cast<size_t>(wi)] =
                type != maze::Cell::Wall && type != maze::Cell::DoorClosed;
        }
    }
    widx.push_back(window_channels_ * n2 + dec.g_w);

    bool any_valid = false;
    for (uint8_t v : valid) any_valid = any_valid || v;
    if (!any_valid) {
        // Fully masked window: the narrow goal degenerates to the wide goal.
        dec.g_n = dec.g_w;
        dec.logp = wide_pick;
        dec.entropy = wide_entropy;
        dec.value = critic_(hidden.h);
        return dec;
    }

    Tensor feat = tanh(narrow_in_.apply_sparse({widx}));
    Tensor narrow_logits = narrow_out_(concat(hidden.h, feat));
    std::vector<Real> mask(static_cast<size_t>(n2), Real(0));
    for (int i = 0; i < n2; ++i)
        if (!valid[static_cast<size_t>(i)]) mask[static_cast<size_t>(i)] = Real(-1e9);
    Tensor masked = add(narrow_logits, Tensor::from_vector(1, n2, std::move(mask)));
    Tensor narrow_logp = log(softmax(masked));
    Tensor narrow_probs = softmax(masked);
    const int narrow_idx = policy::sample_from_logits(masked, 0, rng);
    dec.g_n = cell_of[static_cast<size_t>(narrow_idx)];

    std::vector<Real> narrow_onehot(static_cast<size_t>(n2), Real(0));
    narrow_onehot[static_cast<size_t>(narrow_idx)] = Real(1);
    Tensor narrow_pick =
        sum_rows(mul(narrow_logp, Tensor::from_vector(1, n2, std::move(narrow_onehot))));
    Tensor narrow_entropy = neg(sum_rows(mul(narrow_probs, narrow_logp)));

    dec.logp = add(wide_pick, narrow_pick);
    dec.entropy = add(wide_entropy, narrow_entropy);
    dec.value = critic_(hidden.h);
    return dec;
}

double ManagerPolicy::state_value(const maze::GridMaze& grid, int agent_state,
                                  const nn::LstmState& hidden) const {
    NoGradGuard guard;
    Tensor x = tanh(in_.apply_sparse({maze::encode_indices(grid, agent_state)}));
    auto carry = hidden;
    carry = lstm_.step(x, carry);
    return static_cast<double>(critic_(carry.h).item());
}

std::vector<int> HierarchicalAgent::worker_indices(const maze::GridMaze& grid, int state, int g_w,
                                                   int g_n) const {
    auto idx = maze::encode_indices(grid, state);
    const int enc = maze::encoding_dim(grid);
    const int pos = maze::position_dim(grid);
    idx.push_back(enc + g_w);
    idx.push_back(enc + pos + g_n);
    return idx;
}

nn::Checkpoint HierarchicalAgent::snapshot() const {
    nn::Checkpoint ckpt;
    auto merge = [&](const nn::ParamRegistry& reg) {
        for (auto& [name, entry] : nn::snapshot(reg)) ckpt[name] = entry;
    };
    if (flat) merge(flat->params());
    if (manager) merge(manager->params());
    if (worker) merge(worker->params());
    return ckpt;
}

void HierarchicalAgent::restore(const nn::Checkpoint& ckpt) {
    if (flat) nn::restore(flat->params(), ckpt);
    if (manager) nn::restore(manager->params(), ckpt);
    if (worker) nn::restore(worker->params(), ckpt);
}

HierarchicalAgent make_flat_agent(const maze::GridMaze& layout, int action_count,
                                  const FeudalConfig& cfg, uint64_t seed) {
    HierarchicalAgent agent;
    agent.kind = AgentKind::FlatA2C;
    agent.cfg = cfg;
    agent.layout = layout;
    agent.action_count = action_count;
    agent.flat = std::make_unique<policy::RecurrentActorCritic>(
        "flat", maze::encoding_dim(layout), action_count, cfg.a2c, seed);
    return agent;
}

HierarchicalAgent make_feudal_agent(const maze::GridMaze& layout, int action_count,
                                    const FeudalConfig& cfg, std::vector<int> candidates,
                                    uint64_t seed) {
    HierarchicalAgent agent;
    agent.kind = AgentKind::Feudal;
    agent.cfg = cfg;
    agent.layout = layout;
    agent.action_count = action_count;
    agent.manager = std::make_unique<ManagerPolicy>(layout, std::move(candidates), cfg, seed);
    agent.worker = std::make_unique<policy::RecurrentActorCritic>(
        "worker", maze::encoding_dim(layout) + 2 * maze::position_dim(layout), action_count,
        cfg.a2c, Rng::substream(seed, "worker"));
    return agent;
}

namespace {

void copy_rows(Tensor& dst, int dst_row0, const nn::CheckpointEntry& src, int src_row0, int rows) {
    const int cols = static_cast<int>(src.shape[1]);
    auto out = dst.mutable_value();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<size_t>(dst_row0 + r) * dst.cols() + c] =
                static_cast<Real>(src.values[static_cast<size_t>(src_row0 + r) * cols + c]);
}

void zero_rows(Tensor& dst, int row0, int rows) {
    auto out = dst.mutable_value();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < dst.cols(); ++c) out[static_cast<size_t>(row0 + r) * dst.cols() + c] = 0;
}

const nn::CheckpointEntry& entry(const nn::Checkpoint& ckpt, const std::string& name) {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) throw std::runtime_error("pi_g checkpoint is missing '" + name + "'");
    return it->second;
}

std::string shape_str(const nn::CheckpointEntry& e) {
    std::string s = "[";
    for (size_t i = 0; i < e.shape.size(); ++i) s += (i ? "," : "") + std::to_string(e.shape[i]);
    return s + "]";
}

void copy_exact(nn::ParamRegistry& reg, const std::string& dst_name, const nn::Checkpoint& ckpt,
                const std::string& src_name) {
    const auto& src = entry(ckpt, src_name);
    Tensor& dst = reg.at(dst_name);
    if (static_cast<int>(src.shape[0]) != dst.rows() || static_cast<int>(src.shape[1]) != dst.cols())
        throw std::runtime_error("init_from_goal_policy: '" + src_name + "' " + shape_str(src) +
                                 " does not match '" + dst_name + "' [" + std::to_string(dst.rows()) +
                                 "," + std::to_string(dst.cols()) + "]");
    auto out = dst.mutable_value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(src.values[i]);
}

} // namespace

void init_from_goal_policy(HierarchicalAgent& agent, const nn::Checkpoint& pi_g_ckpt) {
    const int enc = maze::encoding_dim(agent.layout);
    const int pos = maze::position_dim(agent.layout);
    const auto& in_w = entry(pi_g_ckpt, "pi_g.in.w");
    if (static_cast<int>(in_w.shape[0]) != enc + pos)
        throw std::runtime_error("init_from_goal_policy: pi_g input " + shape_str(in_w) +
                                 " incompatible with layout encoding [" + std::to_string(enc + pos) +
                                 ", ...]");
    const auto& actor_w = entry(pi_g_ckpt, "pi_g.actor.w");
    const int move_actions = static_cast<int>(actor_w.shape[1]);
    if (agent.action_count < move_actions)
        throw std::runtime_error("init_from_goal_policy: task has " +
                                 std::to_string(agent.action_count) + " actions, pi_g head has " +
                                 std::to_string(move_actions));

    auto copy_actor = [&](nn::ParamRegistry& reg, const std::string& prefix) {
        // Move-action columns come from pi_g; extra task actions keep their init.
        Tensor& w = reg.at(prefix + ".actor.w");
        if (w.rows() != static_cast<int>(actor_w.shape[0]))
            throw std::runtime_error("init_from_goal_policy: actor hidden " + shape_str(actor_w) +
                                     " vs [" + std::to_string(w.rows()) + "," +
                                     std::to_string(w.cols()) + "]");
        auto out = w.mutable_value();
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < move_actions; ++c)
                out[static_cast<size_t>(r) * w.cols() + c] =
                    static_cast<Real>(actor_w.values[static_cast<size_t>(r) * move_actions + c]);
        const auto& actor_b = entry(pi_g_ckpt, "pi_g.actor.b");
        Tensor& b = reg.at(prefix + ".actor.b");
        auto bout = b.mutable_value();
        for (int c = 0; c < move_actions; ++c) bout[static_cast<size_t>(c)] = static_cast<Real>(actor_b.values[static_cast<size_t>(c)]);
    };

    if (agent.kind == AgentKind::FlatA2C) {
        Tensor& w = agent.flat->params().at("flat.in.w");
        copy_rows(w, 0, in_w, 0, enc);
        copy_exact(agent.flat->params(), "flat.in.b", pi_g_ckpt, "pi_g.in.b");
        copy_exact(agent.flat->params(), "flat.lstm.w", pi_g_ckpt, "pi_g.lstm.w");
        copy_exact(agent.flat->params(), "flat.lstm.b", pi_g_ckpt, "pi_g.lstm.b");
        copy_exact(agent.flat->params(), "flat.critic.w", pi_g_ckpt, "pi_g.critic.w");
        copy_exact(agent.flat->params(), "flat.critic.b", pi_g_ckpt, "pi_g.critic.b");
        copy_actor(agent.flat->params(), "flat");
        return;
    }

    // Worker trunk: state block + g_n block from pi_g, g_w block zeroed.
    Tensor& ww = agent.worker->params().at("worker.in.w");
    if (ww.rows() != enc + 2 * pos || ww.cols() != static_cast<int>(in_w.shape[1]))
        throw std::runtime_error("init_from_goal_policy: worker input [" + std::to_string(ww.rows()) +
                                 "," + std::to_string(ww.cols()) + "] vs pi_g " + shape_str(in_w));
    copy_rows(ww, 0, in_w, 0, enc);
    zero_rows(ww, enc, pos);
    copy_rows(ww, enc + pos, in_w, enc, pos);
    copy_exact(agent.worker->params(), "worker.in.b", pi_g_ckpt, "pi_g.in.b");
    copy_exact(agent.worker->params(), "worker.lstm.w", pi_g_ckpt, "pi_g.lstm.w");
    copy_exact(agent.worker->params(), "worker.lstm.b", pi_g_ckpt, "pi_g.lstm.b");
    copy_exact(agent.worker->params(), "worker.critic.w", pi_g_ckpt, "pi_g.critic.w");
    copy_exact(agent.worker->params(), "worker.critic.b", pi_g_ckpt, "pi_g.critic.b");
    copy_actor(agent.worker->params(), "worker");

    // Manager trunk: state rows + recurrent cell + value head; wide/narrow
    // heads stay zero-initialized (uniform).
    Tensor& mw = agent.manager->params().at("manager.in.w");
    if (mw.rows() != enc || mw.cols() != static_cast<int>(in_w.shape[1]))
        throw std::runtime_error("init_from_goal_policy: manager input [" + std::to_string(mw.rows()) +
                                 "," + std::to_string(mw.cols()) + "] vs pi_g " + shape_str(in_w));
    copy_rows(mw, 0, in_w, 0, enc);
    copy_exact(agent.manager->params(), "manager.in.b", pi_g_ckpt, "pi_g.in.b");
    copy_exact(agent.manager->params(), "manager.lstm.w", pi_g_ckpt, "pi_g.lstm.w");
    copy_exact(agent.manager->params(), "manager.lstm.b", pi_g_ckpt, "pi_g.lstm.b");
    copy_exact(agent.manager->params(), "manager.critic.w", pi_g_ckpt, "pi_g.critic.w");
    copy_exact(agent.manager->params(), "manager.critic.b", pi_g_ckpt, "pi_g.critic.b");
}

// --- evaluation episode ----------------------------------------------------

EpisodeRecord run_episode(HierarchicalAgent& agent, maze::TaskEnv& env, Rng& rng) {
    NoGradGuard guard;
    EpisodeRecord rec;
    if (env.done()) throw std::invalid_argument("run_episode: env must be freshly reset");

    if (agent.kind == AgentKind::FlatA2C) {
        auto hidden = agent.flat->initial_state(1);
        while (!env.done()) {
            auto out = agent.flat->step({maze::encode_indices(env.grid(), env.state_id())}, hidden);
            const int a = policy::sample_from_logits(out.logits, 0, rng);
            auto res = env.step(static_cast<maze::Action>(a));
            rec.total_reward += res.reward;
            ++rec.steps;
            rec.reached_exit = rec.reached_exit || res.reached_exit;
        }
        return rec;
    }

    auto mgr_hidden = agent.manager->initial_state();
    auto wrk_hidden = agent.worker->initial_state(1);
    bool suppress_traversal = false;

    while (!env.done()) {
        auto dec = agent.manager->act(env.grid(), env.state_id(), mgr_hidden, rng);
        ManagerDecisionRecord mrec;
        mrec.state = env.state_id();
        mrec.g_w = dec.g_w;
        mrec.g_n = dec.g_n;
        bool tenure_over = false;

        auto try_traverse = [&]() {
            if (!agent.cfg.traversal || !agent.world || suppress_traversal || mrec.traversed)
                return;
            if (!agent.world->has_node(env.state_id()) || !agent.world->has_node(dec.g_w) ||
                env.state_id() == dec.g_w)
                return;
            auto plan = agent.world->plan(env.state_id(), dec.g_w);
            if (!plan || plan->empty()) return;
            auto outcome = graph::execute_traversal(*agent.world, *plan, env, agent.cfg.traversal_mode,
                                                    agent.pi_g.get(), agent.cfg.traversal_hop_limit,
                                                    &rng);
            mrec.traversed = true;
            mrec.traversal_completed = outcome.completed;
            mrec.traversal_steps = outcome.steps;
            mrec.route = plan->nodes;
            for (double r : outcome.rewards) {
                mrec.env_reward += r;
                rec.total_reward += r;
            }
            mrec.tenure_steps += outcome.steps;
            rec.steps += outcome.steps;
            if (!outcome.completed) {
                // Newly blocked route: surface a decision point immediately.
                tenure_over = true;
                suppress_traversal = true;
            }
        };

        if (env.state_id() == dec.g_n) {
            mrec.reached_gn = true; // immediate completion at emission
        } else {
            try_traverse();
            for (int k = 0; k < agent.cfg.horizon_c && !tenure_over && !env.done(); ++k) {
                if (env.state_id() == dec.g_n) {
                    mrec.reached_gn = true;
                    break;
                }
                try_traverse();
                if (tenure_over || env.done()) break;
                auto out = agent.worker->step(
                    {agent.worker_indices(env.grid(), env.state_id(), dec.g_w, dec.g_n)}, wrk_hidden);
                const int a = policy::sample_from_logits(out.logits, 0, rng);
                auto res = env.step(static_cast<maze::Action>(a));
                suppress_traversal = false;
                rec.total_reward += res.reward;
                ++rec.steps;
                mrec.env_reward += res.reward;
                ++mrec.tenure_steps;
                rec.reached_exit = rec.reached_exit || res.reached_exit;
                if (env.state_id() == dec.g_n) {
                    mrec.reached_gn = true;
                    break;
                }
                if (env.state_id() == dec.g_w) {
                    mrec.reached_gw = true;
                    break;
                }
            }
        }
        rec.decisions.push_back(mrec);
    }
    return rec;
}

// --- trainer ----------------------------------------------------------------

struct HrlTrainer::Impl {
    HierarchicalAgent& agent;
    maze::GridMaze base;
    maze::TaskSpec spec;
    uint64_t env_seed;
    HrlTrainConfig cfg;
    Rng rng;
    uint64_t episode_counter = 0;

    struct Tenure {
        Tensor logp, entropy, value;
        double disc_reward = 0.0;
        double gamma_pow = 1.0;
        int len = 0;
        bool in_pg = true;  // emitted within the current segment
        bool closed = false;
        bool terminal = false; // episode ended during this tenure
    };

    struct Slot {
        std::unique_ptr<maze::TaskEnv> env;
        nn::LstmState mgr_hidden;
        int g_w = -1, g_n = -1;
        int worker_left = 0;
        bool need_decision = true;
        bool traversed_this_tenure = false;
        bool suppress_traversal = false;
        double episode_return = 0.0;
        std::vector<Tenure> tenures; // segment-local, last may be open
    };
    std::vector<Slot> slots;
    nn::LstmState wrk_hidden;

    nn::Adam worker_opt;
    nn::Adam manager_opt;
    nn::Adam pi_g_opt;

    // Policy-mode traversal hops queued for pi_g fine-tuning.
    struct HopRecord {
        std::vector<std::vector<int>> inputs;
        std::vector<int> actions;
        bool reached = false;
    };
    std::deque<HopRecord> hop_queue;

    std::vector<double> finished_returns;

    Impl(HierarchicalAgent& a, const maze::GridMaze& b, const maze::TaskSpec& s, uint64_t es,
         const HrlTrainConfig& c)
        : agent(a), base(b), spec(s), env_seed(es), cfg(c),
          rng(Rng::substream(c.seed, "hrl-train")),
          worker_opt(static_cast<Real>(a.cfg.a2c.lr)),
          manager_opt(static_cast<Real>(a.cfg.a2c.lr)),
          pi_g_opt(static_cast<Real>(a.cfg.a2c.lr * a.cfg.pi_g_finetune_scale)) {
        const int B = cfg.batch_envs;
        slots.resize(static_cast<size_t>(B));
        for (auto& slot : slots) {
            slot.env = std::make_unique<maze::TaskEnv>(base, spec, env_seed);
            reset_slot(slot);
        }
        auto& net = agent.kind == AgentKind::FlatA2C ? *agent.flat : *agent.worker;
        wrk_hidden = net.initial_state(B);
    }

    void reset_slot(Slot& slot) {
        slot.env->reset(Rng::substream(cfg.seed, "episode", episode_counter++));
        if (agent.manager) slot.mgr_hidden = agent.manager->initial_state();
        slot.need_decision = true;
        slot.traversed_this_tenure = false;
        slot.suppress_traversal = false;
        slot.episode_return = 0.0;
        slot.g_w = slot.g_n = -1;
        slot.worker_left = 0;
    }

    void close_tenure(Slot& slot, bool terminal) {
        if (slot.tenures.empty() || slot.tenures.back().closed) return;
        slot.tenures.back().closed = true;
        slot.tenures.back().terminal = terminal;
        slot.need_decision = true;
    }

    void accrue(Slot& slot, double reward) {
        slot.episode_return += reward;
        if (!slot.tenures.empty() && !slot.tenures.back().closed) {
            auto& ten = slot.tenures.back();
            ten.disc_reward += ten.gamma_pow * reward;
            ten.gamma_pow *= agent.cfg.gamma_manager;
            ++ten.len;
        }
    }

    // Emits a manager decision for the slot, running traversal when it
    // triggers. May close the tenure immediately (blocked route or instant
    // narrow-goal completion).
    void manager_decision(Slot& slot) {
        auto dec = agent.manager->act(slot.env->grid(), slot.env->state_id(), slot.mgr_hidden, rng);
        Tenure ten;
        ten.logp = dec.logp;
        ten.entropy = dec.entropy;
        ten.value = dec.value;
        slot.tenures.push_back(std::move(ten));
        slot.g_w = dec.g_w;
        slot.g_n = dec.g_n;
        slot.worker_left = agent.cfg.horizon_c;
        slot.need_decision = false;
        slot.traversed_this_tenure = false;

        if (slot.env->state_id() == slot.g_n) {
            close_tenure(slot, false); // immediate completion at emission
            return;
        }
        try_traversal(slot);
    }

    void try_traversal(Slot& slot) {
        if (!agent.cfg.traversal || !agent.world || slot.suppress_traversal ||
            slot.traversed_this_tenure || slot.need_decision)
            return;
        const int here = slot.env->state_id();
        if (!agent.world->has_node(here) || !agent.world->has_node(slot.g_w) || here == slot.g_w)
            return;
        auto plan = agent.world->plan(here, slot.g_w);
        if (!plan || plan->empty()) return;
        auto outcome =
            graph::execute_traversal(*agent.world, *plan, *slot.env, agent.cfg.traversal_mode,
                                     agent.pi_g.get(), agent.cfg.traversal_hop_limit, &rng);
        slot.traversed_this_tenure = true;
        for (double r : outcome.rewards) accrue(slot, r);
        if (agent.cfg.traversal_mode == graph::TraversalMode::Policy && agent.pi_g)
            queue_hops(*plan, outcome);
        if (slot.env->done()) return; // episode end handled by the caller
        if (!outcome.completed) {
            close_tenure(slot, false);
            slot.suppress_traversal = true;
        } else if (slot.env->state_id() == slot.g_n) {
            close_tenure(slot, false);
        }
    }

    void queue_hops(const graph::TraversalPlan& plan, const graph::TraversalOutcome& outcome) {
        (void)plan;
        if (outcome.step_inputs.empty()) return;
        HopRecord rec;
        rec.inputs = outcome.step_inputs;
        rec.actions.reserve(outcome.traj.actions.size());
        for (auto a : outcome.traj.actions) rec.actions.push_back(static_cast<int>(a));
        rec.reached = outcome.completed;
        hop_queue.push_back(std::move(rec));
        while (hop_queue.size() > 16) hop_queue.pop_front();
    }

    // Replays queued traversal hops through pi_g with gradients to adapt it
    // to task stochasticity; small learning rate via pi_g_opt.
    void finetune_pi_g() {
        if (!agent.pi_g || hop_queue.empty()) return;
        const auto& a2c = agent.pi_g->net().config();
        Tensor loss = Tensor::scalar(0);
        int steps = 0;
        const int batch = std::min<int>(4, static_cast<int>(hop_queue.size()));
        for (int i = 0; i < batch; ++i) {
            const auto& hop = hop_queue.front();
            auto state = agent.pi_g->net().initial_state(1);
            std::vector<double> rewards, values;
            std::vector<uint8_t> terminal;
            std::vector<Tensor> logps, vals;
            for (size_t t = 0; t < hop.actions.size(); ++t) {
                auto out = agent.pi_g->net().step({hop.inputs[t]}, state);
                Tensor logp_all = log(softmax(out.logits));
                std::vector<Real> onehot(static_cast<size_t>(out.logits.cols()), Real(0));
                onehot[static_cast<size_t>(hop.actions[t])] = Real(1);
                logps.push_back(sum_rows(
                    mul(logp_all, Tensor::from_vector(1, out.logits.cols(), std::move(onehot)))));
                vals.push_back(out.value);
                const bool last = t + 1 == hop.actions.size();
                rewards.push_back(-0.01 + (last && hop.reached ? 1.0 : 0.0));
                values.push_back(static_cast<double>(out.value.item()));
                terminal.push_back(last);
            }
            auto adv = policy::compute_advantages(rewards, values, terminal, a2c.gamma, 0.0);
            for (size_t t = 0; t < logps.size(); ++t) {
                Tensor a = Tensor::scalar(static_cast<Real>(adv.advantages[t]));
                Tensor r = Tensor::scalar(static_cast<Real>(adv.returns[t]));
                Tensor vd = sub(vals[t], r);
                loss = add(loss, add(neg(sum(mul(a, logps[t]))),
                                     mul_scalar(sum(mul(vd, vd)), static_cast<Real>(a2c.value_weight))));
                ++steps;
            }
            hop_queue.pop_front();
        }
        if (steps == 0) return;
        loss = mul_scalar(loss, Real(1) / static_cast<Real>(steps));
        agent.pi_g->net().params().zero_grad();
        backward(loss);
        auto tensors = agent.pi_g->net().params().tensors();
        clip_grad_global_norm(tensors, static_cast<Real>(a2c.clip_norm));
        pi_g_opt.step(agent.pi_g->net().params());
    }

    IterationStats iterate(int iteration) {
        const int B = cfg.batch_envs;
        const int T = agent.cfg.a2c.t_max;
        const bool flat = agent.kind == AgentKind::FlatA2C;
        auto& net = flat ? *agent.flat : *agent.worker;

        IterationStats stats;
        stats.iteration = iteration;
        finished_returns.clear();

        std::vector<Tensor> logp_steps, value_steps, entropy_steps;
        std::vector<std::vector<double>> rewards(static_cast<size_t>(B));
        std::vector<std::vector<double>> values(static_cast<size_t>(B));
        std::vector<std::vector<uint8_t>> terminal(static_cast<size_t>(B));

        for (int t = 0; t < T; ++t) {
            // Decision phase: make sure every env has an active subgoal.
            for (auto& slot : slots) {
                if (flat) break;
                for (int guard = 0; guard < 8; ++guard) {
                    if (slot.env->done()) {
                        close_tenure(slot, true);
                        finished_returns.push_back(slot.episode_return);
                        reset_slot(slot);
                        continue;
                    }
                    if (slot.need_decision) {
                        manager_decision(slot);
                        continue;
                    }
                    break;
                }
                // A pathological immediate-completion chain: force the last
                // subgoal to run a worker step anyway.
                slot.need_decision = false;
            }
            if (flat) {
                for (auto& slot : slots) {
                    if (slot.env->done()) {
                        finished_returns.push_back(slot.episode_return);
                        reset_slot(slot);
                    }
                }
            }

            // Batched worker/flat forward.
            std::vector<std::vector<int>> idx;
            idx.reserve(static_cast<size_t>(B));
            for (auto& slot : slots) {
                if (flat)
                    idx.push_back(maze::encode_indices(slot.env->grid(), slot.env->state_id()));
                else
                    idx.push_back(agent.worker_indices(slot.env->grid(), slot.env->state_id(),
                                                       slot.g_w, slot.g_n));
            }
            auto out = net.step(idx, wrk_hidden);
            Tensor logp_all = log(softmax(out.logits));
            Tensor probs = softmax(out.logits);
            const int A = out.logits.cols();

            std::vector<Real> onehot(static_cast<size_t>(B) * A, Real(0));
            std::vector<Real> reset_mask(static_cast<size_t>(B), Real(1));
            for (int b = 0; b < B; ++b) {
                auto& slot = slots[static_cast<size_t>(b)];
                const int a = policy::sample_from_logits(out.logits, b, rng);
                onehot[static_cast<size_t>(b) * A + a] = Real(1);
                auto res = slot.env->step(static_cast<maze::Action>(a));
                slot.suppress_traversal = false;

                double worker_reward;
                bool worker_terminal;
                if (flat) {
                    slot.episode_return += res.reward;
                    worker_reward = res.reward;
                    worker_terminal = res.done;
                    if (res.done) {
                        finished_returns.push_back(slot.episode_return);
                        reset_slot(slot);
                        reset_mask[static_cast<size_t>(b)] = Real(0);
                    }
                } else {
                    accrue(slot, res.reward);
                    --slot.worker_left;
                    worker_reward = 0.0;
                    bool complete = false;
                    if (slot.env->state_id() == slot.g_n) {
                        worker_reward = agent.cfg.worker_gn_reward;
                        complete = true;
                    } else if (slot.env->state_id() == slot.g_w) {
                        worker_reward = agent.cfg.worker_gw_reward;
                        complete = true;
                    }
                    const bool horizon_out = slot.worker_left <= 0;
                    worker_terminal = complete || horizon_out || res.done;
                    if (res.done) {
                        close_tenure(slot, true);
                        finished_returns.push_back(slot.episode_return);
                        reset_slot(slot);
                        reset_mask[static_cast<size_t>(b)] = Real(0);
                    } else if (complete || horizon_out) {
                        close_tenure(slot, false);
                    } else {
                        try_traversal(slot);
                        if (slot.need_decision) {
                            // Blocked traversal ended the tenure mid-pursuit.
                            worker_terminal = true;
                        }
                        if (slot.env->done()) {
                            close_tenure(slot, true);
                            finished_returns.push_back(slot.episode_return);
                            reset_slot(slot);
                            reset_mask[static_cast<size_t>(b)] = Real(0);
                            worker_terminal = true;
                        }
                    }
                }
                rewards[static_cast<size_t>(b)].push_back(worker_reward);
                values[static_cast<size_t>(b)].push_back(static_cast<double>(out.value.at(b, 0)));
                terminal[static_cast<size_t>(b)].push_back(worker_terminal);
            }
            Tensor mask = Tensor::from_vector(B, 1, reset_mask);
            wrk_hidden.h = scale_rows(wrk_hidden.h, mask);
            wrk_hidden.c = scale_rows(wrk_hidden.c, mask);

            logp_steps.push_back(
                sum_rows(mul(logp_all, Tensor::from_vector(B, A, std::move(onehot)))));
            value_steps.push_back(out.value);
            entropy_steps.push_back(neg(sum_rows(mul(probs, logp_all))));
        }

        // Worker bootstrap on unfinished pursuits.
        std::vector<double> bootstrap(static_cast<size_t>(B), 0.0);
        {
            NoGradGuard guard;
            // Envs that need a decision have no live subgoal; bootstrap 0 for
            // them (pursuit ended exactly at the boundary).
            std::vector<std::vector<int>> idx;
            for (auto& slot : slots) {
                if (flat)
                    idx.push_back(maze::encode_indices(slot.env->grid(), slot.env->state_id()));
                else
                    idx.push_back(agent.worker_indices(slot.env->grid(), slot.env->state_id(),
                                                       std::max(slot.g_w, 0), std::max(slot.g_n, 0)));
            }
            auto carry = wrk_hidden;
            auto out = net.step(idx, carry);
            for (int b = 0; b < B; ++b) {
                auto& slot = slots[static_cast<size_t>(b)];
                const bool live = flat ? !slot.env->done() : !slot.need_decision;
                if (!terminal[static_cast<size_t>(b)].back() && live)
                    bootstrap[static_cast<size_t>(b)] = static_cast<double>(out.value.at(b, 0));
            }
        }

        // Worker A2C loss.
        const auto& a2c = agent.cfg.a2c;
        const double gamma = flat ? a2c.gamma : agent.cfg.gamma_worker;
        const double ew = flat ? a2c.entropy_weight : agent.cfg.entropy_worker;
        std::vector<policy::AdvantageResult> adv(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b)
            adv[static_cast<size_t>(b)] =
                policy::compute_advantages(rewards[static_cast<size_t>(b)],
                                           values[static_cast<size_t>(b)],
                                           terminal[static_cast<size_t>(b)], gamma,
                                           bootstrap[static_cast<size_t>(b)]);
        Tensor worker_loss = Tensor::scalar(0);
        for (int t = 0; t < T; ++t) {
            std::vector<Real> a(static_cast<size_t>(B)), r(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) {
                a[static_cast<size_t>(b)] =
                    static_cast<Real>(adv[static_cast<size_t>(b)].advantages[static_cast<size_t>(t)]);
                r[static_cast<size_t>(b)] =
                    static_cast<Real>(adv[static_cast<size_t>(b)].returns[static_cast<size_t>(t)]);
            }
            Tensor at = Tensor::from_vector(B, 1, std::move(a));
            Tensor rt = Tensor::from_vector(B, 1, std::move(r));
            Tensor vd = sub(value_steps[static_cast<size_t>(t)], rt);
            worker_loss =
                add(worker_loss,
                    add(neg(sum(mul(at, logp_steps[static_cast<size_t>(t)]))),
                        add(mul_scalar(sum(mul(vd, vd)), static_cast<Real>(a2c.value_weight)),
                            mul_scalar(sum(entropy_steps[static_cast<size_t>(t)]),
                                       static_cast<Real>(-ew)))));
        }
        worker_loss = mul_scalar(worker_loss, Real(1) / static_cast<Real>(B * T));
        stats.worker_loss = static_cast<double>(worker_loss.item());

        // Manager loss over tenures emitted this segment.
        Tensor manager_loss = Tensor::scalar(0);
        int manager_count = 0;
        if (!flat) {
            for (auto& slot : slots) {
                double g_next = 0.0;
                // Open tail bootstraps from the manager value at the current
                // state; closed terminal tenures cut the chain.
                for (auto it = slot.tenures.rbegin(); it != slot.tenures.rend(); ++it) {
                    double g;
                    if (!it->closed) {
                        const double v_boot =
                            slot.env->done()
                                ? 0.0
                                : agent.manager->state_value(slot.env->grid(), slot.env->state_id(),
                                                             slot.mgr_hidden);
                        g = it->disc_reward + it->gamma_pow * v_boot;
                    } else if (it->terminal) {
                        g = it->disc_reward;
                    } else {
                        g = it->disc_reward + it->gamma_pow * g_next;
                    }
                    g_next = g;
                    if (!it->in_pg) continue;
                    const double advantage = g - static_cast<double>(it->value.item());
                    Tensor at = Tensor::scalar(static_cast<Real>(advantage));
                    Tensor rt = Tensor::scalar(static_cast<Real>(g));
                    Tensor vd = sub(it->value, rt);
                    manager_loss =
                        add(manager_loss,
                            add(neg(sum(mul(at, it->logp))),
                                add(mul_scalar(sum(mul(vd, vd)), static_cast<Real>(a2c.value_weight)),
                                    mul_scalar(sum(it->entropy),
                                               static_cast<Real>(-agent.cfg.entropy_manager)))));
                    ++manager_count;
                }
            }
            if (manager_count > 0)
                manager_loss = mul_scalar(manager_loss, Real(1) / static_cast<Real>(manager_count));
            stats.manager_loss = static_cast<double>(manager_loss.item());
        }

        Tensor total = flat ? worker_loss : add(worker_loss, manager_loss);
        if (!std::isfinite(static_cast<double>(total.item())))
            throw std::runtime_error("hrl: non-finite training loss at iteration " +
                                     std::to_string(iteration));
        net.params().zero_grad();
        if (!flat) agent.manager->params().zero_grad();
        backward(total);
        auto wt = net.params().tensors();
        clip_grad_global_norm(wt, static_cast<Real>(a2c.clip_norm));
        worker_opt.step(net.params());
        if (!flat) {
            auto mt = agent.manager->params().tensors();
            clip_grad_global_norm(mt, static_cast<Real>(a2c.clip_norm));
            manager_opt.step(agent.manager->params());
        }

        wrk_hidden.h = wrk_hidden.h.detach();
        wrk_hidden.c = wrk_hidden.c.detach();
        if (!flat) {
            for (auto& slot : slots) {
                // Segment boundary: keep only the open tenure (bookkeeping),
                // and exclude it from future policy gradients - it was just
                // trained with a bootstrapped return.
                if (!slot.tenures.empty() && !slot.tenures.back().closed) {
                    Tenure open = std::move(slot.tenures.back());
                    open.in_pg = false;
                    slot.tenures.clear();
                    slot.tenures.push_back(std::move(open));
                } else {
                    slot.tenures.clear();
                }
                slot.mgr_hidden.h = slot.mgr_hidden.h.detach();
                slot.mgr_hidden.c = slot.mgr_hidden.c.detach();
            }
        }

        if (agent.cfg.traversal && agent.cfg.traversal_mode == graph::TraversalMode::Policy)
            finetune_pi_g();

        stats.episodes_finished = static_cast<int>(finished_returns.size());
        for (double r : finished_returns) stats.mean_episode_reward += r;
        if (stats.episodes_finished > 0) stats.mean_episode_reward /= stats.episodes_finished;
        return stats;
    }
};

HrlTrainer::HrlTrainer(HierarchicalAgent& agent, const maze::GridMaze& base,
                       const maze::TaskSpec& spec, uint64_t env_seed, const HrlTrainConfig& cfg)
    : impl_(std::make_unique<Impl>(agent, base, spec, env_seed, cfg)) {}

HrlTrainer::~HrlTrainer() = default;

void HrlTrainer::run(const std::function<void(const IterationStats&)>& on_iteration) {
    for (int i = 0; i < impl_->cfg.iterations; ++i) {
        auto stats = impl_->iterate(i);
        if (on_iteration) on_iteration(stats);
    }
}

} // namespace wg::hrl
