#pragma once

// Orchestrates the progressive-onboarding schedule: per-batch onboarding
// (freeze + snapshot of the previous batch, local-baseline evaluation of
// the arriving one), federated rounds over the active batch only, periodic
// serving evaluations, and the server-side replay phase.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcofl/data.hpp"
#include "pcofl/hypernet.hpp"
#include "pcofl/masking.hpp"
#include "pcofl/metrics.hpp"
#include "pcofl/net.hpp"
#include "pcofl/replay.hpp"
#include "pcofl/types.hpp"

namespace pcofl {

enum class Method {
  PFedDSH,          // hypernet + trainable mask + replay
  PFedDSHNoReplay,  // ablation: mask kept, replay off
  PFedDSHNoMask,    // ablation: replay kept, all-ones mask
  PFedHNNoMask,     // hypernet baseline: no mask, no snapshots, no replay
  FedAvg,           // single shared model, plain delta averaging
  LocalOnly,        // per-client isolated training
};

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct MethodTraits {
  bool uses_hypernet = false;
  bool uses_mask = false;       // masked generation; false means all-ones
  bool trainable_mask = false;  // mask logits receive server updates
  bool snapshots = false;       // earlier batches serve frozen snapshots
  bool replay = false;          // replay phase may run (config can disable)
};

MethodTraits method_traits(Method m);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string method = "pfeddsh";
  int jobs = 1;

  struct Data {
    Eigen::Index dim = 16;
    Eigen::Index classes = 5;
    Eigen::Index per_class = 400;
    Scalar spread = 2.0;         // class overlap; higher favors collaboration
    Scalar alpha = 0.1;          // Dirichlet concentration
    Scalar test_fraction = 0.2;
  } data;

  struct Schedule {
    std::vector<int> batches = {8, 2};    // clients arriving per batch
    std::vector<int> rounds = {200, 150}; // federated rounds per batch
  } schedule;

  struct Net {
    Eigen::Index hidden = 32;
    int hidden_layers = 2;
  } net;

  struct Hypernet {
    Eigen::Index embed_dim = 32;
    Eigen::Index hidden = 64;
  } hypernet;

  struct Mask {
    Scalar lambda = 5e-5;        // occupancy penalty weight
    Scalar gamma0 = 10;          // initial sigmoid sharpness
    Scalar gamma_growth = 1.02;  // per-round multiplicative anneal
    Scalar gamma_max = 50;       // sharper caps destabilize logit updates
  } mask;

  struct Train {
    Scalar client_lr = 0.01;     // cosine-decayed within each batch
    Scalar momentum = 0.9;
    int batch_size = 32;
    int local_epochs = 5;        // E, per sampled round
    Scalar server_lr = 0.1;      // alpha, applied to summed gradients
    bool robbins_monro = false;  // alpha_r = alpha/(1+global_round)
    Scalar sample_fraction = 1.0;
    int pretrain_epochs = 50;    // local baseline before joining
    Scalar pretrain_lr = 0.01;
    int eval_every = 10;         // serving evaluation cadence (event log)
  } train;

  struct Replay {
    bool enabled = true;
    ReplayHyperparams hp;
  } replay;

  int n_clients() const;
  int total_rounds() const;
  void validate() const;
};

struct ClientRecord {
  int id = 0;
  int batch = 0;  // 1-based onboarding batch
  std::vector<int> train_idx, test_idx;
  Vector embedding;     // hypernet methods
  BnStatSet stats;      // client-side running statistics
  Vector local_params;  // local_only live model
  Vector local_velocity;
};

struct Snapshot {
  Vector params;
  BnStatSet stats;
};

struct RoundEvent {
  int batch = 0;
  int round = 0;         // within the batch
  int global_round = 0;
  Scalar client_lr = 0;
  Scalar server_lr = 0;
  std::vector<int> sampled;
  Scalar mean_loss = 0;
  Scalar grad_phi_sq = 0;  // squared norm of the summed generator gradient
  Scalar l1_term = 0;      // occupancy penalty value, masked methods
};

struct RunResult {
  ExperimentConfig config;
  MetricsLedger ledger;
  CapacityReport capacity;
  std::vector<MaskState> masks;        // one per batch, frozen
  std::vector<SyntheticPool> pools;    // one per executed replay phase
  std::vector<RoundEvent> rounds;
  std::vector<std::string> events;     // onboard/freeze/eval/replay notes
  std::map<int, Snapshot> snapshots;   // final serving snapshots by client
  std::map<std::string, double> phase_seconds;
};

RunResult run_experiment(const ExperimentConfig& config);

}  // namespace pcofl
