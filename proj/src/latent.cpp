#include "wg/latent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wg::latent {

using maze::Trajectory;

LatentSegModel::LatentSegModel(maze::GridMaze grid, int action_count, LatentConfig cfg, uint64_t seed)
    : grid_(std::move(grid)), action_count_(action_count), cfg_(cfg), opt_(static_cast<Real>(cfg.lr)) {
    Rng rng(Rng::substream(seed, "latent-init"));
    const int enc_dim = maze::encoding_dim(grid_);
    // Encoder consumes (state, action) pairs; one extra action slot marks the
    // final state that has no outgoing action.
    enc_in_ = nn::Linear(params_, "enc.in", enc_dim + action_count_ + 1, cfg_.embed, rng);
    enc_fwd_ = nn::LstmCell(params_, "enc.fwd", cfg_.embed, cfg_.enc_hidden, rng);
    enc_bwd_ = nn::LstmCell(params_, "enc.bwd", cfg_.embed, cfg_.enc_hidden, rng);
    enc_out_ = nn::Linear(params_, "enc.out", 2 * cfg_.enc_hidden, 1, rng);
    dec_in_ = nn::Linear(params_, "dec.in", enc_dim, cfg_.embed, rng);
    dec_fwd_ = nn::LstmCell(params_, "dec.fwd", cfg_.embed, cfg_.dec_hidden, rng);
    dec_bwd_ = nn::LstmCell(params_, "dec.bwd", cfg_.embed, cfg_.dec_hidden, rng);
    dec_out_ = nn::Linear(params_, "dec.out", 2 * cfg_.dec_hidden, action_count_, rng);
    prior_in_ = nn::Linear(params_, "prior.in", enc_dim, cfg_.prior_hidden, rng);
    prior_out_ = nn::Linear(params_, "prior.out", cfg_.prior_hidden, 2, rng);
    lambdas_ = {cfg_.lambda_init, cfg_.lambda_init, cfg_.lambda_init};
}

const std::vector<int>& LatentSegModel::state_indices(int state_id) {
    auto it = enc_cache_.find(state_id);
    if (it == enc_cache_.end())
        it = enc_cache_.emplace(state_id, maze::encode_indices(grid_, state_id)).first;
    return it->second;
}

struct LatentSegModel::Forward {
    int batch = 0;
    int steps = 0; // actions per trajectory
    std::vector<Tensor> logits;      // steps entries, [B, A]
    std::vector<Tensor> post_a;      // steps+1 entries, [B, 1] (empty in decoder-only mode)
    std::vector<Tensor> prior_alpha; // steps+1
    std::vector<Tensor> prior_beta;
    std::vector<Tensor> z;           // steps+1, [B, 1]
    double accuracy = 0.0;
};

LatentSegModel::Forward LatentSegModel::run_forward(std::span<const Trajectory> batch, Rng* rng,
                                                    const std::vector<double>* forced_z,
                                                    const std::set<int>* keep) {
    if (batch.empty()) throw std::invalid_argument("latent: empty batch");
    const int B = static_cast<int>(batch.size());
    const int T = static_cast<int>(batch[0].actions.size());
    if (T < 2) throw std::invalid_argument("latent: trajectory needs at least 2 actions");
    for (const auto& traj : batch)
        if (static_cast<int>(traj.actions.size()) != T || traj.states.size() != traj.actions.size() + 1)
            throw std::invalid_argument("latent: batch trajectories must share one length");

    const int enc_dim = maze::encoding_dim(grid_);
    const bool decoder_only = forced_z != nullptr || keep != nullptr;

    Forward fwd;
    fwd.batch = B;
    fwd.steps = T;

    // Per-step sparse inputs.
    std::vector<std::vector<std::vector<int>>> state_idx(static_cast<size_t>(T) + 1);
    std::vector<std::vector<std::vector<int>>> enc_idx(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) {
        state_idx[static_cast<size_t>(t)].resize(static_cast<size_t>(B));
        enc_idx[static_cast<size_t>(t)].resize(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            const auto& base = state_indices(batch[static_cast<size_t>(b)].states[static_cast<size_t>(t)]);
            auto& sidx = state_idx[static_cast<size_t>(t)][static_cast<size_t>(b)];
            sidx = base;
            auto& eidx = enc_idx[static_cast<size_t>(t)][static_cast<size_t>(b)];
            eidx = base;
            const int act = t < T ? static_cast<int>(batch[static_cast<size_t>(b)].actions[static_cast<size_t>(t)])
                                  : action_count_;
            eidx.push_back(enc_dim + act);
        }
    }

    if (!decoder_only) {
        // Inference encoder: bidirectional over (s_t, a_t).
        std::vector<Tensor> enc_f(static_cast<size_t>(T) + 1), enc_b(static_cast<size_t>(T) + 1);
        auto sf = enc_fwd_.initial_state(B);
        for (int t = 0; t <= T; ++t) {
            sf = enc_fwd_.step(enc_in_.apply_sparse(enc_idx[static_cast<size_t>(t)]), sf);
            enc_f[static_cast<size_t>(t)] = sf.h;
        }
        auto sb = enc_bwd_.initial_state(B);
        for (int t = T; t >= 0; --t) {
            sb = enc_bwd_.step(enc_in_.apply_sparse(enc_idx[static_cast<size_t>(t)]), sb);
            enc_b[static_cast<size_t>(t)] = sb.h;
        }
        fwd.post_a.resize(static_cast<size_t>(T) + 1);
        fwd.prior_alpha.resize(static_cast<size_t>(T) + 1);
        fwd.prior_beta.resize(static_cast<size_t>(T) + 1);
        for (int t = 0; t <= T; ++t) {
            Tensor h = concat(enc_f[static_cast<size_t>(t)], enc_b[static_cast<size_t>(t)]);
            fwd.post_a[static_cast<size_t>(t)] = nn::softplus_positive(enc_out_(h));
            Tensor ph = tanh(prior_in_.apply_sparse(state_idx[static_cast<size_t>(t)]));
            Tensor pp = nn::softplus_positive(prior_out_(ph));
            fwd.prior_alpha[static_cast<size_t>(t)] = slice(pp, 0, 1);
            fwd.prior_beta[static_cast<size_t>(t)] = slice(pp, 1, 1);
        }
    }

    // Latent gates. Boundary latents are forced on.
    fwd.z.resize(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) {
        if (forced_z != nullptr) {
            std::vector<Real> zv(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b)
                zv[static_cast<size_t>(b)] =
                    static_cast<Real>((*forced_z)[static_cast<size_t>(b) * (T + 1) + t]);
            fwd.z[static_cast<size_t>(t)] = Tensor::from_vector(B, 1, std::move(zv));
        } else if (t == 0 || t == T) {
            fwd.z[static_cast<size_t>(t)] = Tensor::filled(B, 1, Real(1));
        } else if (keep != nullptr) {
            std::vector<Real> zv(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b)
                zv[static_cast<size_t>(b)] = keep->count(batch[static_cast<size_t>(b)].states[static_cast<size_t>(t)])
                                                 ? Real(1)
                                                 : Real(0);
            fwd.z[static_cast<size_t>(t)] = Tensor::from_vector(B, 1, std::move(zv));
        } else {
            std::vector<double> u(static_cast<size_t>(B));
            for (auto& v : u) v = rng->uniform_open();
            fwd.z[static_cast<size_t>(t)] = hk::sample_t(fwd.post_a[static_cast<size_t>(t)], cfg_.stretch, u);
        }
    }

    // Generation decoder over gated states; bidirectional so the action at t
    // can condition on the next kept state.
    std::vector<Tensor> dec_f(static_cast<size_t>(T) + 1), dec_b(static_cast<size_t>(T) + 1);
    auto df = dec_fwd_.initial_state(B);
    for (int t = 0; t <= T; ++t) {
        Tensor m = scale_rows(dec_in_.apply_sparse(state_idx[static_cast<size_t>(t)]),
                              fwd.z[static_cast<size_t>(t)]);
        df = dec_fwd_.step(m, df);
        dec_f[static_cast<size_t>(t)] = df.h;
    }
    auto db = dec_bwd_.initial_state(B);
    for (int t = T; t >= 0; --t) {
        Tensor m = scale_rows(dec_in_.apply_sparse(state_idx[static_cast<size_t>(t)]),
                              fwd.z[static_cast<size_t>(t)]);
        db = dec_bwd_.step(m, db);
        dec_b[static_cast<size_t>(t)] = db.h;
    }

    fwd.logits.resize(static_cast<size_t>(T));
    int correct = 0;
    for (int t = 0; t < T; ++t) {
        Tensor h = concat(dec_f[static_cast<size_t>(t)], dec_b[static_cast<size_t>(t) + 1]);
        Tensor logits = dec_out_(h);
        fwd.logits[static_cast<size_t>(t)] = logits;
        for (int b = 0; b < B; ++b) {
            int best = 0;
            for (int a = 1; a < action_count_; ++a)
                if (logits.at(b, a) > logits.at(b, best)) best = a;
            correct += best == static_cast<int>(batch[static_cast<size_t>(b)].actions[static_cast<size_t>(t)]);
        }
    }
    fwd.accuracy = static_cast<double>(correct) / (static_cast<double>(B) * T);
    return fwd;
}

LatentLosses LatentSegModel::batch_losses(std::span<const Trajectory> batch, Rng& rng) {
    Forward fwd = run_forward(batch, &rng, nullptr, nullptr);
    const int B = fwd.batch, T = fwd.steps;
    const double mu0 = cfg_.sparsity_ratio * T;

    LatentLosses out;
    out.accuracy = fwd.accuracy;

    // Reconstruction NLL: mean over batch, sum over steps.
    Tensor nll = Tensor::scalar(0);
    for (int t = 0; t < T; ++t) {
        Tensor logp = log(softmax(fwd.logits[static_cast<size_t>(t)]));
        std::vector<Real> onehot(static_cast<size_t>(B) * action_count_, Real(0));
        for (int b = 0; b < B; ++b)
            onehot[static_cast<size_t>(b) * action_count_ +
                   static_cast<int>(batch[static_cast<size_t>(b)].actions[static_cast<size_t>(t)])] = Real(1);
        Tensor pick = sum_rows(mul(logp, Tensor::from_vector(B, action_count_, std::move(onehot))));
        nll = add(nll, neg(mean(pick)));
    }
    out.nll = nll;

    // KL between posterior and the state-conditioned prior, summed per step.
    Tensor kl_acc = Tensor::zeros(B, 1);
    for (int t = 0; t <= T; ++t)
        kl_acc = add(kl_acc, hk::kl_kuma_beta_t(fwd.post_a[static_cast<size_t>(t)],
                                                fwd.prior_alpha[static_cast<size_t>(t)],
                                                fwd.prior_beta[static_cast<size_t>(t)]));
    out.kl_sum = mean(kl_acc);

    // Expected-L0 bottleneck over interior latents.
    Tensor active = Tensor::zeros(B, 1);
    std::vector<Tensor> p0(static_cast<size_t>(T) + 1);
    p0[0] = Tensor::zeros(B, 1);
    p0[static_cast<size_t>(T)] = Tensor::zeros(B, 1);
    for (int t = 1; t < T; ++t) {
        p0[static_cast<size_t>(t)] = hk::prob_zero_t(fwd.post_a[static_cast<size_t>(t)], cfg_.stretch);
        active = add(active, add_scalar(neg(p0[static_cast<size_t>(t)]), Real(1)));
    }
    Tensor l0_dev = add_scalar(active, static_cast<Real>(-mu0));
    out.l0_loss = mean(mul(l0_dev, l0_dev));

    // Expected on/off switches along the chain (boundaries on).
    Tensor trans = Tensor::zeros(B, 1);
    for (int t = 0; t < T; ++t) {
        Tensor a = p0[static_cast<size_t>(t)];
        Tensor b = p0[static_cast<size_t>(t) + 1];
        trans = add(trans, add(mul(a, add_scalar(neg(b), Real(1))), mul(add_scalar(neg(a), Real(1)), b)));
    }
    Tensor tr_dev = add_scalar(trans, static_cast<Real>(-2.0 * mu0));
    out.transition_loss = mean(mul(tr_dev, tr_dev));
    return out;
}

LatentLosses LatentSegModel::forward_losses(const Trajectory& traj, Rng& rng) {
    return batch_losses(std::span<const Trajectory>(&traj, 1), rng);
}

LatentSegModel::UpdateStats LatentSegModel::lagrangian_update(std::span<const Trajectory> batch, Rng& rng) {
    LatentLosses losses = batch_losses(batch, rng);
    Tensor total = add(losses.nll,
                       add(mul_scalar(losses.kl_sum, static_cast<Real>(lambdas_.l1)),
                           add(mul_scalar(losses.l0_loss, static_cast<Real>(lambdas_.l2)),
                               mul_scalar(losses.transition_loss, static_cast<Real>(lambdas_.l3)))));
    UpdateStats stats;
    stats.total = total.item();
    stats.nll = losses.nll.item();
    stats.kl = losses.kl_sum.item();
    stats.l0 = losses.l0_loss.item();
    stats.transitions = losses.transition_loss.item();
    stats.accuracy = losses.accuracy;
    if (!std::isfinite(stats.total))
        throw std::runtime_error("latent: non-finite training objective");

    params_.zero_grad();
    backward(total);
    opt_.step(params_);

    // Ascent on the multipliers against constraint violations, projected to
    // stay nonnegative. The KL constraint carries a per-step budget so the
    // multiplier settles instead of ratcheting.
    const int steps = static_cast<int>(batch[0].actions.size()) + 1;
    lambdas_.l1 = std::max(0.0, lambdas_.l1 + cfg_.lambda_lr * (stats.kl - cfg_.kl_budget_per_step * steps));
    lambdas_.l2 = std::max(0.0, lambdas_.l2 + cfg_.lambda_lr * stats.l0);
    lambdas_.l3 = std::max(0.0, lambdas_.l3 + cfg_.lambda_lr * stats.transitions);
    stats.lambdas = lambdas_;
    return stats;
}

std::vector<double> LatentSegModel::action_nll(const Trajectory& traj) {
    NoGradGuard guard;
    const int T = static_cast<int>(traj.actions.size());
    std::vector<double> ones(static_cast<size_t>(T) + 1, 1.0);
    Forward fwd = run_forward(std::span<const Trajectory>(&traj, 1), nullptr, &ones, nullptr);
    std::vector<double> out(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        Tensor logp = log(softmax(fwd.logits[static_cast<size_t>(t)]));
        out[static_cast<size_t>(t)] =
            -static_cast<double>(logp.at(0, static_cast<int>(traj.actions[static_cast<size_t>(t)])));
    }
    return out;
}

double LatentSegModel::reconstruction_error(const Trajectory& traj, size_t t) {
    if (t >= traj.actions.size()) throw std::invalid_argument("reconstruction_error: step out of range");
    return action_nll(traj)[t];
}

double LatentSegModel::masked_accuracy(const Trajectory& traj, const std::set<int>& keep) {
    NoGradGuard guard;
    Forward fwd = run_forward(std::span<const Trajectory>(&traj, 1), nullptr, nullptr, &keep);
    return fwd.accuracy;
}

double LatentSegModel::eval_accuracy(std::span<const Trajectory> batch, Rng& rng) {
    NoGradGuard guard;
    double acc = 0.0;
    for (const auto& traj : batch) {
        Forward fwd = run_forward(std::span<const Trajectory>(&traj, 1), &rng, nullptr, nullptr);
        acc += fwd.accuracy;
    }
    return acc / static_cast<double>(batch.size());
}

std::vector<std::vector<double>> LatentSegModel::decode_logits(const Trajectory& traj,
                                                               const std::vector<double>& z) {
    NoGradGuard guard;
    if (z.size() != traj.states.size())
        throw std::invalid_argument("decode_logits: z length must match states");
    Forward fwd = run_forward(std::span<const Trajectory>(&traj, 1), nullptr, &z, nullptr);
    std::vector<std::vector<double>> out;
    for (const auto& logits : fwd.logits)
        out.emplace_back(logits.value().begin(), logits.value().end());
    return out;
}

std::vector<double> LatentSegModel::posterior_shapes(const Trajectory& traj) {
    NoGradGuard guard;
    Rng dummy(0);
    Forward fwd = run_forward(std::span<const Trajectory>(&traj, 1), &dummy, nullptr, nullptr);
    std::vector<double> out;
    for (const auto& a : fwd.post_a) out.push_back(a.item());
    return out;
}

hk::BetaParams LatentSegModel::prior_params(int state_id) {
    NoGradGuard guard;
    std::vector<std::vector<int>> idx{state_indices(state_id)};
    Tensor ph = tanh(prior_in_.apply_sparse(idx));
    Tensor pp = nn::softplus_positive(prior_out_(ph));
    return {static_cast<double>(pp.at(0, 0)), static_cast<double>(pp.at(0, 1))};
}

double LatentSegModel::prior_mean(int state_id) {
    auto p = prior_params(state_id);
    return p.alpha / (p.alpha + p.beta);
}

std::vector<int> LatentSegModel::pivotal_select(const std::vector<int>& observed_states) {
    if (observed_states.empty()) throw std::invalid_argument("pivotal_select: no observed states");
    std::vector<int> unique = observed_states;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(unique.size());
    for (int s : unique) ranked.emplace_back(-prior_mean(s), s);
    std::sort(ranked.begin(), ranked.end());

    const int k = pivotal_count(static_cast<int>(unique.size()));
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(ranked[static_cast<size_t>(i)].second);
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace wg::latent
