#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wg/discovery.hpp"
#include "wg/graph.hpp"
#include "wg/hrl.hpp"
#include "wg/maze.hpp"

namespace wg::harness {

// A full experiment description; every run is a pure function of one of
// these (bit-exact reruns).
struct ExperimentConfig {
    std::string task = "multigoal";      // multigoal | multigoal-sparse | multigoal-stochastic | door-key
    std::string maze_size = "small";     // small | medium | large
    uint64_t maze_seed = 0;              // layout seed; ignored when maze_file is set
    std::string maze_file;               // optional ASCII layout
    uint64_t master_seed = 1;

    std::string agent = "wn";            // a2c | fn | wn
    std::string candidates = "v-p";      // v-all | v-rand | v-p (wn only)
    bool pi_g_init = false;
    bool traversal = false;

    int iterations = 20000;
    int validate_every = 500;
    int validation_episodes_per_seed = 10;
    int batch_envs = 16;
    int train_seeds = 3;

    latent::DiscoveryConfig discovery;
    hrl::FeudalConfig feudal;

    std::string to_json() const;                       // canonical (sorted keys)
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    void set_key(const std::string& dotted_key, const std::string& value);
    uint64_t hash() const; // FNV-1a of the canonical JSON
};

// 3 training / 10 validation / 100 testing seeds, derived from the master
// seed as disjoint pools (asserted).
struct SeedProtocol {
    explicit SeedProtocol(uint64_t master);
    std::vector<uint64_t> train;
    std::vector<uint64_t> validation;
    std::vector<uint64_t> test;
};

// Stage-1 products for one maze, shared by every cell of an ablation.
struct DiscoveryArtifacts {
    maze::GridMaze grid;
    std::shared_ptr<latent::LatentSegModel> model;
    std::shared_ptr<policy::GoalConditionedPolicy> pi_g;
    std::vector<int> pivotal_states;
    std::shared_ptr<graph::WorldGraph> graph_vp;
    double pi_g_success = 0.0;     // short-range eval after training
    double holdout_accuracy = 0.0; // latent plateau metric
};

// Runs stage 1 (or loads it from `dir` when the cached hash matches) and
// persists maze/pivots/graph/checkpoint/store under `dir`.
DiscoveryArtifacts ensure_discovery(const ExperimentConfig& cfg, const std::string& dir);

struct ValidationPoint {
    int iteration = 0;
    uint64_t train_seed = 0;
    double mean_metric = 0.0; // mean validation reward or success rate
};

struct SeedRunResult {
    uint64_t train_seed = 0;
    std::vector<ValidationPoint> curve;
    int best_iteration = -1;
    double best_validation = 0.0;
    double test_metric = 0.0; // mean over test seeds ("reward" or "success")
    bool fail = true;         // validation metric never above 0
};

struct RunResult {
    std::string cell;   // variant key, e.g. "wn:v-p+init"
    std::string metric; // "reward" | "success"
    std::vector<SeedRunResult> seeds;
    double mean = 0.0; // mean of per-seed test metrics
    double stdev = 0.0;
    bool fail = true; // every seed failed
};

// Stage 2 for one cell: per-training-seed runs with periodic validation,
// checkpoint selection on the validation pool and a final test evaluation.
RunResult run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir);

// The Table-1-shaped control matrix for one task/size:
//   a2c, fn, fn+init, wn:v-p, wn:{v-all,v-rand,v-p}+init,
//   wn:{v-rand,v-p}+trav, wn:{v-rand,v-p}+init+trav
std::vector<std::string> ablation_cells();
// Applies a cell key onto a base config.
ExperimentConfig cell_config(const ExperimentConfig& base, const std::string& cell);

struct AblationResult {
    std::vector<RunResult> cells;
    std::vector<std::string> errors; // "<cell>: <what>" for isolated failures
};
AblationResult run_ablation_matrix(const ExperimentConfig& base, const std::string& out_dir,
                                   const std::vector<std::string>& only_cells = {}, int jobs = 1);

// Output files: curves CSV, summary JSON, SVG learning curves, graph export.
void emit_outputs(const ExperimentConfig& cfg, const AblationResult& result,
                  const std::string& out_dir);

// Recomputes every reported number from the raw episode logs and compares;
// returns a list of discrepancies (empty = verified).
std::vector<std::string> verify_outputs(const std::string& out_dir);

} // namespace wg::harness
