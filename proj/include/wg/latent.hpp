#pragma once

#include <map>
#include <set>
#include <span>
#include <vector>

#include "wg/hardkuma.hpp"
#include "wg/maze.hpp"
#include "wg/nn.hpp"

namespace wg::latent {

struct LatentConfig {
    int embed = 64;            // state projection width (encoder/decoder)
    int enc_hidden = 64;       // per direction
    int dec_hidden = 64;       // per direction
    int prior_hidden = 128;
    double sparsity_ratio = 0.2;      // rho; mu0 = rho * T per sequence
    double lambda_init = 1.0;
    double lambda_lr = 0.01;
    double kl_budget_per_step = 0.5;  // lagrangian target for the KL term, nats/step
    double lr = 7e-4;
    hk::StretchInterval stretch{};
};

struct LatentLosses {
    Tensor nll;             // action reconstruction, mean over batch
    Tensor kl_sum;          // sum over steps, mean over batch
    Tensor l0_loss;         // (E||Z||_0 - mu0)^2, mean over batch
    Tensor transition_loss; // (E[switches] - 2 mu0)^2, mean over batch
    double accuracy = 0.0;  // greedy decoding vs ground truth
};

struct LagrangeMultipliers {
    double l1 = 1.0; // KL
    double l2 = 1.0; // L0
    double l3 = 1.0; // transitions
};

// Recurrent variational model over trajectories: a state-conditioned Beta
// prior network, a bidirectional HardKuma inference encoder (second shape
// fixed at 1) and a generative decoder that reconstructs the action sequence
// from the states whose latent stays on. Boundary latents are forced on.
class LatentSegModel {
public:
    LatentSegModel(maze::GridMaze grid, int action_count, LatentConfig cfg, uint64_t seed);

    // Teacher-forced losses for a batch of equal-length trajectories with
    // masks sampled from the posterior. Rejects trajectories shorter than
    // two actions.
    LatentLosses batch_losses(std::span<const maze::Trajectory> batch, Rng& rng);
    LatentLosses forward_losses(const maze::Trajectory& traj, Rng& rng);

    struct UpdateStats {
        double total = 0, nll = 0, kl = 0, l0 = 0, transitions = 0, accuracy = 0;
        LagrangeMultipliers lambdas;
    };
    // One descent step on the network parameters against the lambda-weighted
    // objective, then one projected ascent step on the multipliers.
    UpdateStats lagrangian_update(std::span<const maze::Trajectory> batch, Rng& rng);

    // Per-step action negative log-likelihood with every state visible and
    // no sampling; the curiosity signal for the goal policy.
    std::vector<double> action_nll(const maze::Trajectory& traj);
    double reconstruction_error(const maze::Trajectory& traj, size_t t);

    // Greedy accuracy with an explicit keep-set: z_t = 1 iff the state is in
    // `keep` (boundaries always on).
    double masked_accuracy(const maze::Trajectory& traj, const std::set<int>& keep);
    // Accuracy under posterior-sampled masks; the plateau metric.
    double eval_accuracy(std::span<const maze::Trajectory> batch, Rng& rng);

    // Raw decoder logits for an explicit z assignment (no grad); exposes the
    // masking contract to tests.
    std::vector<std::vector<double>> decode_logits(const maze::Trajectory& traj,
                                                   const std::vector<double>& z);
    // Posterior shape a_t per step (no grad).
    std::vector<double> posterior_shapes(const maze::Trajectory& traj);

    hk::BetaParams prior_params(int state_id);
    double prior_mean(int state_id);

    // Top ceil(0.2 n) states by prior mean; ties broken by ascending id.
    std::vector<int> pivotal_select(const std::vector<int>& observed_states);

    nn::ParamRegistry& params() { return params_; }
    const nn::ParamRegistry& params() const { return params_; }
    const LagrangeMultipliers& lambdas() const { return lambdas_; }
    const LatentConfig& config() const { return cfg_; }
    const maze::GridMaze& grid() const { return grid_; }
    int action_count() const { return action_count_; }

private:
    struct Forward;
    Forward run_forward(std::span<const maze::Trajectory> batch, Rng* rng,
                        const std::vector<double>* forced_z, const std::set<int>* keep);
    const std::vector<int>& state_indices(int state_id);

    maze::GridMaze grid_;
    int action_count_;
    LatentConfig cfg_;
    nn::ParamRegistry params_;
    nn::Adam opt_;
    LagrangeMultipliers lambdas_;

    nn::Linear enc_in_, enc_out_;
    nn::LstmCell enc_fwd_, enc_bwd_;
    nn::Linear dec_in_, dec_out_;
    nn::LstmCell dec_fwd_, dec_bwd_;
    nn::Linear prior_in_, prior_out_;

    std::map<int, std::vector<int>> enc_cache_;
};

// Fraction of 0.2-selection: exported for reuse by candidate-set logic.
inline int pivotal_count(int observed) { return (observed * 20 + 99) / 100; } // ceil(0.2 n)

} // namespace wg::latent
