#include "pcofl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "pcofl/rng.hpp"
#include "pcofl/textio.hpp"

namespace pcofl {

Method parse_method(const std::string& name) {
  if (name == "pfeddsh") return Method::PFedDSH;
  if (name == "pfeddsh_noreplay") return Method::PFedDSHNoReplay;
  if (name == "pfeddsh_nomask") return Method::PFedDSHNoMask;
  if (name == "pfedhn_nomask") return Method::PFedHNNoMask;
  if (name == "fedavg") return Method::FedAvg;
  if (name == "local_only") return Method::LocalOnly;
  throw ConfigError("unknown method '" + name +
                    "' (expected pfeddsh, pfeddsh_noreplay, pfeddsh_nomask, "
                    "pfedhn_nomask, fedavg, or local_only)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::PFedDSH:
      return "pfeddsh";
    case Method::PFedDSHNoReplay:
      return "pfeddsh_noreplay";
    case Method::PFedDSHNoMask:
      return "pfeddsh_nomask";
    case Method::PFedHNNoMask:
      return "pfedhn_nomask";
    case Method::FedAvg:
      return "fedavg";
    case Method::LocalOnly:
      return "local_only";
  }
  throw InputError("method_name: unknown method");
}

MethodTraits method_traits(Method m) {
  switch (m) {
    case Method::PFedDSH:
      return {true, true, true, true, true};
    case Method::PFedDSHNoReplay:
      return {true, true, true, true, false};
    case Method::PFedDSHNoMask:
      return {true, false, false, true, true};
    case Method::PFedHNNoMask:
      return {true, false, false, false, false};
    case Method::FedAvg:
      return {false, false, false, false, false};
    case Method::LocalOnly:
      return {false, false, false, true, false};
  }
  throw InputError("method_traits: unknown method");
}

int ExperimentConfig::n_clients() const {
  int n = 0;
  for (int s : schedule.batches) n += s;
  return n;
}

int ExperimentConfig::total_rounds() const {
  int n = 0;
  for (int r : schedule.rounds) n += r;
  return n;
}

void ExperimentConfig::validate() const {
  parse_method(method);
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (data.dim < 1 || data.classes < 2 || data.per_class < 1)
    throw ConfigError("data: dim >= 1, classes >= 2, per_class >= 1 required");
  if (data.spread < 0) throw ConfigError("data.spread must be >= 0");
  if (data.alpha <= 0) throw ConfigError("data.alpha must be > 0");
  if (data.test_fraction <= 0 || data.test_fraction >= 1)
    throw ConfigError("data.test_fraction must lie in (0, 1)");
  if (schedule.batches.empty())
    throw ConfigError("schedule.batches must not be empty");
  for (int s : schedule.batches)
    if (s < 1) throw ConfigError("schedule.batches entries must be >= 1");
  if (schedule.rounds.size() != schedule.batches.size())
    throw ConfigError("schedule.rounds must match schedule.batches in length");
  for (int r : schedule.rounds)
    if (r < 1) throw ConfigError("schedule.rounds entries must be >= 1");
  if (net.hidden < 1 || net.hidden_layers < 1)
    throw ConfigError("net: hidden >= 1 and hidden_layers >= 1 required");
  if (hypernet.embed_dim < 1 || hypernet.hidden < 1)
    throw ConfigError("hypernet: embed_dim >= 1 and hidden >= 1 required");
  if (mask.lambda < 0) throw ConfigError("mask.lambda must be >= 0");
  if (mask.gamma0 <= 0) throw ConfigError("mask.gamma0 must be > 0");
  if (mask.gamma_growth < 1)
    throw ConfigError("mask.gamma_growth must be >= 1");
  if (mask.gamma_max < mask.gamma0)
    throw ConfigError("mask.gamma_max must be >= mask.gamma0");
  if (train.client_lr <= 0) throw ConfigError("train.client_lr must be > 0");
  if (train.momentum < 0 || train.momentum >= 1)
    throw ConfigError("train.momentum must lie in [0, 1)");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.local_epochs < 0)
    throw ConfigError("train.local_epochs must be >= 0");
  if (train.server_lr <= 0) throw ConfigError("train.server_lr must be > 0");
  if (train.sample_fraction <= 0 || train.sample_fraction > 1)
    throw ConfigError("train.sample_fraction must lie in (0, 1]");
  if (train.pretrain_epochs < 0)
    throw ConfigError("train.pretrain_epochs must be >= 0");
  if (train.pretrain_lr <= 0)
    throw ConfigError("train.pretrain_lr must be > 0");
  if (train.eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  replay.hp.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// One epoch of shuffled minibatch SGD with momentum; commits batch
// statistics into `stats` after every minibatch. Returns the mean
// minibatch loss.
Scalar train_one_epoch(const NetSpec& spec, Vector& params, Vector& velocity,
                       BnStatSet& stats, const Matrix& x, const IntVector& y,
                       Scalar lr, Scalar momentum, int batch_size,
                       std::mt19937_64 eng) {
  const int n = int(x.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), eng);
  Scalar loss_sum = 0;
  int n_batches = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    std::vector<int> idx(order.begin() + start, order.begin() + stop);
    Matrix xb = gather_rows(x, idx);
    IntVector yb(Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      yb[Eigen::Index(i)] = y[idx[i]];
    LossResult res = loss_and_grads(spec, params, xb, yb, stats, Mode::Train);
    sgd_step(params, velocity, res.param_grads, lr, momentum);
    commit_bn_update(spec, stats, res.trace);
    loss_sum += res.loss;
    ++n_batches;
  }
  return n_batches ? loss_sum / Scalar(n_batches) : 0;
}

// Everything a sampled client reports back to the server for one round.
struct ClientOut {
  int id = 0;
  Vector delta;        // start params minus end params (descent direction)
  Vector grad_logits;  // mask-logit gradient, trainable-mask methods
  Scalar l1_term = 0;
  Scalar loss = 0;
  BnStatSet stats;  // fedavg: the participant's updated statistics
};

struct Runner {
  const ExperimentConfig& cfg;
  Method method;
  MethodTraits traits;
  NetSpec spec;
  LabeledDataset dataset;
  PartitionPlan plan;
  std::vector<std::vector<int>> batch_ids;
  std::vector<ClientRecord> clients;
  HypernetState hyper;
  Vector gparams;     // fedavg shared model
  BnStatSet gstats;   // fedavg shared statistics
  std::vector<MaskState> masks;
  RunResult out;
  int global_round = 0;

  explicit Runner(const ExperimentConfig& c)
      : cfg(c), method(parse_method(c.method)), traits(method_traits(method)) {}

  Matrix train_x(const ClientRecord& c) const {
    return gather_rows(dataset.inputs, c.train_idx);
  }
  IntVector train_y(const ClientRecord& c) const {
    return gather_labels(dataset.labels, c.train_idx);
  }
  Matrix test_x(const ClientRecord& c) const {
    return gather_rows(dataset.inputs, c.test_idx);
  }
  IntVector test_y(const ClientRecord& c) const {
    return gather_labels(dataset.labels, c.test_idx);
  }

  void note(const std::string& line) { out.events.push_back(line); }

  void setup() {
    const auto start = Clock::now();
    cfg.validate();
    out.config = cfg;
    spec = NetSpec::mlp(cfg.data.dim, cfg.net.hidden, cfg.data.classes,
                        cfg.net.hidden_layers);
    dataset = gen_blobs(cfg.data.dim, cfg.data.classes, cfg.data.per_class,
                        cfg.data.spread, rng::derive(cfg.seed, "data"));
    const int n = cfg.n_clients();
    plan = dirichlet_partition(dataset, n, cfg.data.alpha,
                               cfg.data.test_fraction,
                               rng::derive(cfg.seed, "partition"));
    batch_ids = schedule_batches(n, cfg.schedule.batches,
                                 rng::derive(cfg.seed, "schedule"));
    clients.resize(n);
    for (std::size_t t = 0; t < batch_ids.size(); ++t)
      for (int id : batch_ids[t]) clients[id].batch = int(t) + 1;
    for (int id = 0; id < n; ++id) {
      ClientRecord& c = clients[id];
      c.id = id;
      c.train_idx = plan.clients[id].train;
      c.test_idx = plan.clients[id].test;
      c.stats = make_bn_stats(spec);
      if (traits.uses_hypernet)
        c.embedding = init_embedding(std::uint64_t(id), cfg.hypernet.embed_dim,
                                     cfg.seed);
      if (method == Method::LocalOnly) {
        c.local_params =
            init_params(spec, rng::derive(cfg.seed, "local_init",
                                          std::uint64_t(id)));
        c.local_velocity = Vector::Zero(spec.param_count());
      }
    }
    if (traits.uses_hypernet)
      hyper = make_hypernet(spec, cfg.hypernet.embed_dim, cfg.hypernet.hidden,
                            rng::derive(cfg.seed, "hyper_init"));
    if (method == Method::FedAvg) {
      gparams = init_params(spec, rng::derive(cfg.seed, "fedavg_init"));
      gstats = make_bn_stats(spec);
    }
    out.phase_seconds["setup"] += seconds_since(start);
  }

  // Generated models carry no running statistics of their own, so before a
  // served evaluation the client re-estimates them with one train-mode pass
  // over its own training rows (no labels involved). Deterministic: full
  // train set as a single batch, variances floored like committed updates.
  void recalibrate(const Vector& theta, const Matrix& x,
                   BnStatSet& stats) const {
    const ForwardTrace trace = forward(spec, theta, x, stats, Mode::Train);
    const std::vector<std::size_t> bn = spec.bn_layers();
    for (std::size_t k = 0; k < bn.size(); ++k) {
      BnLayerStats& layer = stats.layers[k];
      layer.mean = trace.layers[bn[k]].batch_mean;
      layer.var = trace.layers[bn[k]].batch_var.cwiseMax(spec.bn_eps);
      layer.count = x.rows();
    }
  }

  // The model a client would serve right now: a frozen snapshot when one
  // exists, the live method-specific model otherwise.
  Scalar serving_accuracy(ClientRecord& c) {
    const auto it = out.snapshots.find(c.id);
    if (it != out.snapshots.end())
      return accuracy(spec, it->second.params, test_x(c), test_y(c),
                      it->second.stats);
    switch (method) {
      case Method::FedAvg:
        return accuracy(spec, gparams, test_x(c), test_y(c), gstats);
      case Method::LocalOnly:
        return accuracy(spec, c.local_params, test_x(c), test_y(c), c.stats);
      default: {
        Vector theta = generate(hyper, c.embedding);
        if (traits.uses_mask)
          theta = apply_mask(materialize(masks.at(c.batch - 1), MaskForm::Hard),
                             theta);
        recalibrate(theta, train_x(c), c.stats);
        return accuracy(spec, theta, test_x(c), test_y(c), c.stats);
      }
    }
  }

  void freeze_batch(int t) {
    if (t >= 1 && std::size_t(t) <= masks.size()) freeze(masks[t - 1]);
    if (traits.snapshots)
      for (int id : batch_ids[t - 1]) {
        ClientRecord& c = clients[id];
        Snapshot snap;
        if (method == Method::LocalOnly) {
          snap.params = c.local_params;
        } else {
          snap.params = generate(hyper, c.embedding);
          if (traits.uses_mask)
            snap.params = apply_mask(
                materialize(masks.at(t - 1), MaskForm::Hard), snap.params);
          recalibrate(snap.params, train_x(c), c.stats);
        }
        snap.stats = c.stats;
        out.snapshots[id] = std::move(snap);
      }
    note("freeze batch=" + std::to_string(t) +
         " global=" + std::to_string(global_round));
  }

  void onboard(int t) {
    if (t > 1) freeze_batch(t - 1);
    if (traits.uses_hypernet) {
      MaskState m;
      if (!traits.uses_mask) {
        m = make_mask(t, spec.param_count(), cfg.mask.gamma0);
        m.logits.setOnes();  // record-only, every position active
      } else if (t == 1) {
        m = make_mask(1, spec.param_count(), cfg.mask.gamma0);
      } else {
        std::vector<const MaskState*> earlier;
        for (const MaskState& e : masks) earlier.push_back(&e);
        m = make_mask_reusing(t, cfg.mask.gamma0, earlier);
      }
      masks.push_back(std::move(m));
    }
    {
      std::string ids;
      for (int id : batch_ids[t - 1])
        ids += (ids.empty() ? "" : "|") + std::to_string(id);
      note("onboard batch=" + std::to_string(t) + " clients=" + ids);
    }

    const auto start = Clock::now();
    for (int id : batch_ids[t - 1]) {
      ClientRecord& c = clients[id];
      const Matrix x = train_x(c);
      const IntVector y = train_y(c);
      Vector params = init_params(
          spec, rng::derive(cfg.seed, "pretrain_init", std::uint64_t(id)));
      Vector velocity = Vector::Zero(spec.param_count());
      BnStatSet stats = make_bn_stats(spec);
      for (int e = 0; e < cfg.train.pretrain_epochs; ++e)
        train_one_epoch(spec, params, velocity, stats, x, y,
                        cosine_lr(e, cfg.train.pretrain_epochs,
                                  cfg.train.pretrain_lr),
                        cfg.train.momentum, cfg.train.batch_size,
                        rng::engine(cfg.seed, "pretrain_shuffle",
                                    std::uint64_t(id), std::uint64_t(e)));
      const Scalar local_acc = accuracy(spec, params, test_x(c), test_y(c),
                                        stats);
      out.ledger.add(id, Check::LocalPretrain, 0, local_acc);
      out.ledger.add(id, Check::AtJoin, t, serving_accuracy(c));
    }
    out.phase_seconds["pretrain"] += seconds_since(start);
  }

  ClientOut run_client_hypernet(int id, const Vector& soft_mask, Scalar lr) {
    ClientRecord& c = clients[id];
    ClientOut res;
    res.id = id;
    const Matrix x = train_x(c);
    const IntVector y = train_y(c);
    if (traits.trainable_mask) {
      MaskGradResult mg =
          mask_grads(spec, hyper, c.embedding, masks.at(c.batch - 1), x, y,
                     c.stats, cfg.mask.lambda);
      res.grad_logits = std::move(mg.grad_logits);
      res.l1_term = mg.l1_term;
    }
    Vector theta = generate(hyper, c.embedding);
    if (traits.uses_mask) theta = apply_mask(soft_mask, theta);
    const Vector theta0 = theta;
    Vector velocity = Vector::Zero(spec.param_count());
    Scalar loss_sum = 0;
    for (int e = 0; e < cfg.train.local_epochs; ++e)
      loss_sum += train_one_epoch(
          spec, theta, velocity, c.stats, x, y, lr, cfg.train.momentum,
          cfg.train.batch_size,
          rng::engine(cfg.seed, "local_shuffle", std::uint64_t(global_round),
                      std::uint64_t(id), std::uint64_t(e)));
    res.loss = cfg.train.local_epochs
                   ? loss_sum / Scalar(cfg.train.local_epochs)
                   : 0;
    res.delta = theta0 - theta;
    return res;
  }

  ClientOut run_client_fedavg(int id, Scalar lr) {
    ClientRecord& c = clients[id];
    ClientOut res;
    res.id = id;
    const Matrix x = train_x(c);
    const IntVector y = train_y(c);
    Vector params = gparams;
    Vector velocity = Vector::Zero(spec.param_count());
    res.stats = gstats;
    // Report only this round's sample counts: the pooled count would
    // otherwise feed back through every client and compound each round.
    for (BnLayerStats& ls : res.stats.layers) ls.count = 0;
    Scalar loss_sum = 0;
    for (int e = 0; e < cfg.train.local_epochs; ++e)
      loss_sum += train_one_epoch(
          spec, params, velocity, res.stats, x, y, lr, cfg.train.momentum,
          cfg.train.batch_size,
          rng::engine(cfg.seed, "local_shuffle", std::uint64_t(global_round),
                      std::uint64_t(id), std::uint64_t(e)));
    res.loss = cfg.train.local_epochs
                   ? loss_sum / Scalar(cfg.train.local_epochs)
                   : 0;
    res.delta = gparams - params;
    return res;
  }

  ClientOut run_client_local(int id, Scalar lr) {
    ClientRecord& c = clients[id];
    ClientOut res;
    res.id = id;
    const Matrix x = train_x(c);
    const IntVector y = train_y(c);
    Scalar loss_sum = 0;
    for (int e = 0; e < cfg.train.local_epochs; ++e)
      loss_sum += train_one_epoch(
          spec, c.local_params, c.local_velocity, c.stats, x, y, lr,
          cfg.train.momentum, cfg.train.batch_size,
          rng::engine(cfg.seed, "local_shuffle", std::uint64_t(global_round),
                      std::uint64_t(id), std::uint64_t(e)));
    res.loss = cfg.train.local_epochs
                   ? loss_sum / Scalar(cfg.train.local_epochs)
                   : 0;
    return res;
  }

  void run_round(int t, int r) {
    const std::vector<int>& pool = batch_ids[t - 1];
    if (pool.empty()) throw StateError("run_round: empty active batch");
    const int k = std::max(
        1, int(std::ceil(cfg.train.sample_fraction * double(pool.size()) -
                         1e-9)));
    std::vector<int> sampled;
    {
      std::mt19937_64 eng = rng::engine(cfg.seed, "sampling",
                                        std::uint64_t(global_round));
      std::sample(pool.begin(), pool.end(), std::back_inserter(sampled),
                  std::size_t(k), eng);
    }
    const Scalar client_lr =
        cosine_lr(r, cfg.schedule.rounds[std::size_t(t) - 1],
                  cfg.train.client_lr);
    const Scalar server_lr =
        cfg.train.robbins_monro
            ? cfg.train.server_lr / Scalar(1 + global_round)
            : cfg.train.server_lr;

    Vector soft_mask;
    if (traits.uses_mask)
      soft_mask = materialize(masks.at(std::size_t(t) - 1), MaskForm::Soft);

    auto run_one = [&](int id) {
      switch (method) {
        case Method::FedAvg:
          return run_client_fedavg(id, client_lr);
        case Method::LocalOnly:
          return run_client_local(id, client_lr);
        default:
          return run_client_hypernet(id, soft_mask, client_lr);
      }
    };

    std::vector<ClientOut> results(sampled.size());
    if (cfg.jobs <= 1 || sampled.size() <= 1) {
      for (std::size_t i = 0; i < sampled.size(); ++i)
        results[i] = run_one(sampled[i]);
    } else {
      for (std::size_t wave = 0; wave < sampled.size();
           wave += std::size_t(cfg.jobs)) {
        const std::size_t stop =
            std::min(sampled.size(), wave + std::size_t(cfg.jobs));
        std::vector<std::future<ClientOut>> futures;
        for (std::size_t i = wave; i < stop; ++i)
          futures.push_back(std::async(std::launch::async, run_one,
                                       sampled[i]));
        for (std::size_t i = wave; i < stop; ++i)
          results[i] = futures[i - wave].get();
      }
    }

    RoundEvent ev;
    ev.batch = t;
    ev.round = r;
    ev.global_round = global_round;
    ev.client_lr = client_lr;
    ev.server_lr = server_lr;
    ev.sampled = sampled;

    // Aggregation consumes results in client-id order (sampled ids ascend).
    Scalar loss_sum = 0;
    if (traits.uses_hypernet) {
      Vector sum_phi = Vector::Zero(hyper.phi_count());
      Vector sum_logits;
      if (traits.trainable_mask)
        sum_logits = Vector::Zero(spec.param_count());
      std::vector<std::pair<int, Vector>> embed_grads;
      for (const ClientOut& res : results) {
        Vector masked_delta = traits.uses_mask
                                  ? apply_mask(soft_mask, res.delta)
                                  : res.delta;
        HypernetGrads g = hypernet_backprop(
            hyper, clients[res.id].embedding, masked_delta);
        sum_phi += g.grad_phi;
        embed_grads.emplace_back(res.id, std::move(g.grad_embedding));
        if (traits.trainable_mask) {
          sum_logits += res.grad_logits;
          ev.l1_term = res.l1_term;
        }
        loss_sum += res.loss;
      }
      hyper.phi -= server_lr * sum_phi;
      for (auto& [id, ge] : embed_grads)
        clients[id].embedding -= server_lr * ge;
      if (traits.trainable_mask) {
        MaskState& m = masks.at(std::size_t(t) - 1);
        update_logits(m, sum_logits, server_lr);
        anneal_gamma(m, cfg.mask.gamma_growth, cfg.mask.gamma_max);
      }
      ev.grad_phi_sq = sum_phi.squaredNorm();
    } else if (method == Method::FedAvg) {
      Vector mean_delta = Vector::Zero(spec.param_count());
      std::vector<BnStatSet> parts;
      for (const ClientOut& res : results) {
        mean_delta += res.delta;
        parts.push_back(res.stats);
        loss_sum += res.loss;
      }
      mean_delta /= Scalar(results.size());
      gparams -= mean_delta;
      if (cfg.train.local_epochs > 0)
        gstats = capture_bn_stats(spec, parts);
    } else {  // local_only: no server state
      for (const ClientOut& res : results) loss_sum += res.loss;
    }
    ev.mean_loss = loss_sum / Scalar(results.size());
    out.rounds.push_back(std::move(ev));

    if ((r + 1) % cfg.train.eval_every == 0) {
      const auto start = Clock::now();
      for (int s = 1; s <= t; ++s) {
        Scalar sum = 0;
        for (int id : batch_ids[std::size_t(s) - 1])
          sum += serving_accuracy(clients[id]);
        note("eval global=" + std::to_string(global_round) +
             " batch=" + std::to_string(s) + " serving=" +
             format_double(sum / Scalar(batch_ids[std::size_t(s) - 1].size())));
      }
      out.phase_seconds["eval"] += seconds_since(start);
    }
    ++global_round;
  }

  void post_batch_evals(int t) {
    for (int s = 1; s <= t; ++s)
      for (int id : batch_ids[std::size_t(s) - 1])
        out.ledger.add(id, Check::PostBatch, t,
                       serving_accuracy(clients[id]));
  }

  Scalar train_loss(const Vector& theta, const BnStatSet& stats,
                    const ClientRecord& c) const {
    const ForwardTrace trace =
        forward(spec, theta, train_x(c), stats, Mode::Eval);
    return softmax_cross_entropy(trace.output, train_y(c)).first;
  }

  // Restrict a synthetic pool to the classes a client actually holds, so a
  // refresh never pulls its model toward labels it will never serve.
  SyntheticPool class_filtered(const SyntheticPool& pool,
                               const IntVector& owned) const {
    std::vector<char> has(std::size_t(cfg.data.classes), 0);
    for (Eigen::Index i = 0; i < owned.size(); ++i)
      has[std::size_t(owned[i])] = 1;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < pool.labels.size(); ++i)
      if (has[std::size_t(pool.labels[i])]) keep.push_back(i);
    SyntheticPool subset;
    subset.source_batch = pool.source_batch;
    subset.inputs = Matrix(Eigen::Index(keep.size()), pool.inputs.cols());
    subset.labels = IntVector(Eigen::Index(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      subset.inputs.row(Eigen::Index(k)) = pool.inputs.row(keep[k]);
      subset.labels[Eigen::Index(k)] = pool.labels[keep[k]];
    }
    return subset;
  }

  void replay_phase(int t) {
    if (t <= 1) return;
    if (!traits.replay || !cfg.replay.enabled) {
      note("replay_skipped batch=" + std::to_string(t) +
           " reason=" + (traits.replay ? "disabled" : "method"));
      return;
    }
    if (cfg.train.local_epochs == 0) {
      note("replay_skipped batch=" + std::to_string(t) +
           " reason=no_local_training");
      return;
    }
    const auto start = Clock::now();

    std::vector<BnStatSet> parts;
    Vector mean_embedding = Vector::Zero(cfg.hypernet.embed_dim);
    int onboarded = 0;
    for (int s = 1; s <= t; ++s)
      for (int id : batch_ids[std::size_t(s) - 1]) {
        parts.push_back(clients[id].stats);
        mean_embedding += clients[id].embedding;
        ++onboarded;
      }
    mean_embedding /= Scalar(onboarded);
    const BnStatSet pool_stats = capture_bn_stats(spec, parts);

    Vector theta = generate(hyper, mean_embedding);
    if (traits.uses_mask)
      theta = apply_mask(materialize(masks.at(std::size_t(t) - 1),
                                     MaskForm::Hard),
                         theta);

    SyntheticPool pool =
        build_pool(spec, theta, pool_stats, cfg.replay.hp, t,
                   rng::derive(cfg.seed, "synthesis", std::uint64_t(t)));
    note("replay batch=" + std::to_string(t) +
         " pool_rows=" + std::to_string(pool.inputs.rows()));

    for (int s = 1; s < t; ++s)
      for (int id : batch_ids[std::size_t(s) - 1]) {
        Snapshot& snap = out.snapshots.at(id);
        {
          ClientRecord& cl = clients[id];
          Vector live = generate(hyper, cl.embedding);
          if (traits.uses_mask)
            live = apply_mask(materialize(masks.at(std::size_t(t) - 1),
                                          MaskForm::Hard),
                              live);
          BnStatSet live_stats = snap.stats;
          recalibrate(live, train_x(cl), live_stats);
          note("replay_headroom batch=" + std::to_string(t) +
               " client=" + std::to_string(id) + " snapshot=" +
               format_double(accuracy(spec, snap.params, test_x(cl),
                                      test_y(cl), snap.stats)) +
               " live=" +
               format_double(accuracy(spec, live, test_x(cl), test_y(cl),
                                      live_stats)));
        }
        const Vector hard =
            traits.uses_mask
                ? materialize(masks.at(std::size_t(s) - 1), MaskForm::Hard)
                : Vector::Ones(spec.param_count());
        const SyntheticPool subset =
            class_filtered(pool, train_y(clients[id]));
        if (subset.inputs.rows() > 0) {
          const Vector refreshed = finetune_prior(
              spec, snap.params, snap.stats, hard, subset, cfg.replay.hp,
              rng::derive(cfg.seed, "finetune", std::uint64_t(t),
                          std::uint64_t(id)));
          // The client accepts a refreshed model only when it beats the
          // current one on its own training split; the server never sees
          // real data, so this gate is the client's side of the exchange.
          BnStatSet refreshed_stats = snap.stats;
          recalibrate(refreshed, train_x(clients[id]), refreshed_stats);
          const ClientRecord& cl = clients[id];
          const Scalar old_loss = train_loss(snap.params, snap.stats, cl);
          const Scalar new_loss = train_loss(refreshed, refreshed_stats, cl);
          const Scalar old_acc = accuracy(spec, snap.params, train_x(cl),
                                          train_y(cl), snap.stats);
          const Scalar new_acc = accuracy(spec, refreshed, train_x(cl),
                                          train_y(cl), refreshed_stats);
          // A refresh must demonstrably help on the client's own training
          // split: it has to classify strictly more of it, at no worse
          // loss. Anything weaker, and the client keeps its current model.
          if (new_acc > old_acc && new_loss <= old_loss) {
            snap.params = refreshed;
            snap.stats = std::move(refreshed_stats);
            note("replay_accept batch=" + std::to_string(t) +
                 " client=" + std::to_string(id));
          }
        }
        out.ledger.add(id, Check::PostReplay, t,
                       serving_accuracy(clients[id]));
      }
    out.pools.push_back(std::move(pool));
    out.phase_seconds["replay"] += seconds_since(start);
  }

  RunResult run() {
    setup();
    const int batches = int(batch_ids.size());
    for (int t = 1; t <= batches; ++t) {
      onboard(t);
      const auto start = Clock::now();
      for (int r = 0; r < cfg.schedule.rounds[std::size_t(t) - 1]; ++r)
        run_round(t, r);
      out.phase_seconds["rounds"] += seconds_since(start);
      post_batch_evals(t);
      replay_phase(t);
    }
    freeze_batch(batches);
    out.masks = masks;
    if (traits.uses_hypernet) out.capacity = capacity_report(spec, masks);
    return std::move(out);
  }
};

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  Runner runner(config);
  return runner.run();
}

}  // namespace pcofl
