/** Command-line front end: run a configured experiment, sweep one knob,
 *  rebuild a report from a stored ledger, verify a recorded run by
 *  re-execution, and finite-difference-check the gradient paths.
 *
 *  Exit codes: 0 success, 2 configuration/input problems, 3 numeric
 *  failures, 4 verification mismatches, 1 unexpected errors. */

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcofl/config.hpp"
#include "pcofl/federation.hpp"
#include "pcofl/gradcheck.hpp"
#include "pcofl/metrics.hpp"
#include "pcofl/serialize.hpp"
#include "pcofl/textio.hpp"

namespace {

using namespace pcofl;
namespace fs = std::filesystem;

constexpr Scalar kGradTolerance = 1e-4;

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::string seed;    // unset when empty; parsed through set_config_value
  std::string method;
  std::string jobs;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out) {
  cmd->add_option("--config", f.config_path, "configuration file");
  if (with_out) cmd->add_option("--out", f.out, "output location");
  cmd->add_option("--seed", f.seed, "override the root seed");
  cmd->add_option("--method", f.method, "override the method");
  cmd->add_option("--jobs", f.jobs, "worker threads for client updates");
  cmd->add_flag("--force", f.force, "overwrite an existing output");
}

// defaults < config file < PCOFL_* environment < command line
ExperimentConfig build_config(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = load_config_file(f.config_path, cfg);
  apply_env_overrides(cfg);
  if (!f.seed.empty()) set_config_value(cfg, "seed", f.seed);
  if (!f.method.empty()) set_config_value(cfg, "method", f.method);
  if (!f.jobs.empty()) set_config_value(cfg, "jobs", f.jobs);
  cfg.validate();
  return cfg;
}

std::string fmt(Scalar v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, double(v));
  return buf;
}

void write_or_print(const std::string& out, const std::string& text,
                    bool force) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  if (fs::exists(out) && !force)
    throw ConfigError("output file " + out +
                      " already exists (pass --force to overwrite)");
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + out + " for writing");
  f << text;
}

struct Aggregates {
  Scalar accuracy = 0;        // percent: mean final serving accuracy
  Scalar pa = 0;              // percent: mean onboarding gain over batches
  Scalar ri = 0;              // percent: mean retention over transitions
  bool has_ri = false;
  Scalar sparsity = 0;        // percent: mean inactive-parameter share
  Scalar neuron_fraction = 0; // union active neurons / total neurons
};

Aggregates aggregate(const RunResult& run) {
  Aggregates a;
  const MetricsLedger& led = run.ledger;
  const int last = led.max_batch();

  std::vector<int> clients;
  for (int t = 1; t <= last; ++t)
    for (int c : led.batch_members(t)) clients.push_back(c);
  for (int c : clients) {
    const LedgerEntry* e = led.find(c, Check::PostReplay, last);
    if (!e) e = led.find(c, Check::PostBatch, last);
    if (!e) throw DataError("client " + std::to_string(c) +
                            " has no serving entry for the final batch");
    a.accuracy += e->accuracy * 100 / Scalar(clients.size());
  }

  for (int t = 1; t <= last; ++t) a.pa += compute_pa(led, t) / Scalar(last);
  if (last >= 2) {
    a.has_ri = true;
    for (int t = 2; t <= last; ++t)
      a.ri += compute_ri(led, t) / Scalar(last - 1);
  }

  if (!run.capacity.batches.empty()) {
    for (const BatchCapacity& b : run.capacity.batches)
      a.sparsity += (1.0 - b.active_fraction) * 100 /
                    Scalar(run.capacity.batches.size());
  }
  if (run.capacity.neurons_total > 0)
    a.neuron_fraction = Scalar(run.capacity.neurons_union_active) /
                        Scalar(run.capacity.neurons_total);
  return a;
}

int cmd_run(const CommonFlags& flags) {
  const ExperimentConfig cfg = build_config(flags);
  const RunResult run = run_experiment(cfg);
  const Aggregates a = aggregate(run);

  std::cout << "method=" << cfg.method << " seed=" << cfg.seed
            << " clients=" << cfg.n_clients() << "\n";
  const int last = run.ledger.max_batch();
  for (int t = 1; t <= last; ++t) {
    std::cout << "batch " << t << " pa " << fmt(compute_pa(run.ledger, t));
    if (t >= 2) {
      const Scalar ri = compute_ri(run.ledger, t);
      std::cout << " ri " << fmt(ri) << " mutual "
                << fmt(mutual(compute_pa(run.ledger, t), ri));
    }
    std::cout << "\n";
  }
  std::cout << "accuracy " << fmt(a.accuracy) << "\n";
  double elapsed = 0;
  for (const auto& [phase, seconds] : run.phase_seconds) elapsed += seconds;
  std::cout << "elapsed " << fmt(elapsed, 2) << " s\n";
  if (!flags.out.empty()) {
    write_run_dir(flags.out, run, flags.force);
    std::cout << "wrote " << flags.out << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& param,
              const std::string& values_csv) {
  static const std::map<std::string, std::string> vocabulary = {
      {"lambda", "mask.lambda"},
      {"embed_dim", "hypernet.embed_dim"},
      {"gamma", "mask.gamma0"},
      {"alpha_dirichlet", "data.alpha"},
      {"seed", "seed"},
  };
  const auto it = vocabulary.find(param);
  if (it == vocabulary.end())
    throw ConfigError("unknown sweep parameter '" + param +
                      "' (expected lambda, embed_dim, gamma, "
                      "alpha_dirichlet, or seed)");
  std::vector<std::string> values;
  for (const std::string& v : split(values_csv, ','))
    if (!trim(v).empty()) values.push_back(trim(v));
  if (values.empty())
    throw ConfigError("sweep needs at least one value in --values");

  const ExperimentConfig base = build_config(flags);
  std::string csv =
      "param,value,accuracy,pa,ri,sparsity,active_neuron_fraction\n";
  for (const std::string& v : values) {
    ExperimentConfig cfg = base;
    set_config_value(cfg, it->second, v);
    cfg.validate();
    const RunResult run = run_experiment(cfg);
    const Aggregates a = aggregate(run);
    csv += param + "," + v + "," + fmt(a.accuracy) + "," + fmt(a.pa) + "," +
           (a.has_ri ? fmt(a.ri) : std::string("nan")) + "," +
           fmt(a.sparsity) + "," + fmt(a.neuron_fraction, 6) + "\n";
    std::cerr << "sweep " << param << "=" << v << " accuracy "
              << fmt(a.accuracy) << " pa " << fmt(a.pa) << " ri "
              << (a.has_ri ? fmt(a.ri) : std::string("nan")) << " sparsity "
              << fmt(a.sparsity) << "\n";
  }
  write_or_print(flags.out, csv, flags.force);
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out,
               bool force) {
  const fs::path root(run_dir);
  const fs::path ledger_path = root / "ledger.csv";
  const fs::path config_path = root / "config.cfg";
  std::ifstream f(ledger_path, std::ios::binary);
  if (!f) throw DataError("cannot open " + ledger_path.string());
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  const MetricsLedger ledger = parse_ledger_csv(text);
  const ExperimentConfig cfg = load_config_file(config_path.string());
  write_or_print(out, render_report_csv(build_report(cfg.method, ledger)),
                 force);
  return 0;
}

int cmd_verify(const std::string& target) {
  fs::path p(target);
  if (fs::is_directory(p)) p /= "manifest.txt";
  const VerifyResult r = verify_run(p.string());
  std::cout << r.message << "\n";
  return r.ok ? 0 : 4;
}

int cmd_gradcheck(std::uint64_t seed, int per_family) {
  const GradCheckReport rep = run_gradcheck(seed, per_family);
  std::map<std::string, Scalar> worst_by_family;
  std::map<std::string, int> count_by_family;
  for (const GradCheckCase& c : rep.cases) {
    worst_by_family[c.family] =
        std::max(worst_by_family[c.family], c.max_rel_err);
    ++count_by_family[c.family];
  }
  for (const auto& [family, worst] : worst_by_family)
    std::cout << family << " worst_rel_err " << format_double(worst) << " ("
              << count_by_family[family] << " instances)\n";
  std::cout << "overall worst_rel_err " << format_double(rep.worst)
            << " across " << rep.instances << " checks\n";
  if (rep.worst > kGradTolerance) {
    std::cerr << "error: gradient mismatch exceeds tolerance "
              << format_double(kGradTolerance) << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive federated onboarding simulator"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run_cmd =
      app.add_subcommand("run", "run one experiment and record it");
  add_common(run_cmd, run_flags, true);

  CommonFlags sweep_flags;
  std::string sweep_param, sweep_values;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "run the experiment across one knob");
  add_common(sweep_cmd, sweep_flags, true);
  sweep_cmd
      ->add_option("--param", sweep_param,
                   "lambda, embed_dim, gamma, alpha_dirichlet, or seed")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")
      ->required();

  std::string report_dir, report_out;
  bool report_force = false;
  CLI::App* report_cmd =
      app.add_subcommand("report", "rebuild report.csv from a stored ledger");
  report_cmd->add_option("dir", report_dir, "run directory")->required();
  report_cmd->add_option("--out", report_out, "output file (default stdout)");
  report_cmd->add_flag("--force", report_force, "overwrite an existing file");

  std::string verify_target;
  CLI::App* verify_cmd = app.add_subcommand(
      "verify", "re-run a recorded experiment and compare ledgers");
  verify_cmd->add_option("path", verify_target, "run directory or manifest")
      ->required();

  std::uint64_t grad_seed = 20240817;
  int grad_per_family = 5;
  CLI::App* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of all gradient paths");
  grad_cmd->add_option("--seed", grad_seed, "root seed for the instances");
  grad_cmd->add_option("--instances", grad_per_family,
                       "instances per gradient family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (sweep_cmd->parsed())
      return cmd_sweep(sweep_flags, sweep_param, sweep_values);
    if (report_cmd->parsed())
      return cmd_report(report_dir, report_out, report_force);
    if (verify_cmd->parsed()) return cmd_verify(verify_target);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seed, grad_per_family);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
