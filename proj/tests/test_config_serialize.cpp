/** Tests for config parsing/overrides and run-directory persistence. */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcofl/config.hpp"
#include "pcofl/serialize.hpp"

using namespace pcofl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig fast_config() {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.data.dim = 5;
  cfg.data.classes = 3;
  cfg.data.per_class = 40;
  cfg.schedule.batches = {3, 2};
  cfg.schedule.rounds = {4, 3};
  cfg.net.hidden = 8;
  cfg.net.hidden_layers = 1;
  cfg.hypernet.embed_dim = 6;
  cfg.hypernet.hidden = 12;
  cfg.train.local_epochs = 1;
  cfg.train.pretrain_epochs = 2;
  cfg.train.eval_every = 2;
  cfg.replay.hp.iterations = 8;
  cfg.replay.hp.images_per_class = 4;
  cfg.replay.hp.finetune_epochs = 1;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("canonical config text round-trips every field") {
  ExperimentConfig cfg = fast_config();
  cfg.method = "pfeddsh_nomask";
  cfg.train.robbins_monro = true;
  cfg.mask.lambda = 3.25e-4;
  cfg.replay.hp.label_weight = 0.125;

  const std::string text = canonical_config_text(cfg);
  const ExperimentConfig back = parse_config_text(text);
  CHECK(canonical_config_text(back) == text);
  CHECK(back.method == "pfeddsh_nomask");
  CHECK(back.train.robbins_monro == true);
  CHECK(back.mask.lambda == 3.25e-4);
  CHECK(back.replay.hp.label_weight == 0.125);
  CHECK(back.schedule.batches == std::vector<int>{3, 2});

  // Every recognized key appears exactly once in the canonical dump.
  for (const std::string& key : config_keys())
    CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("unknown keys and bad values report their line") {
  CHECK_THROWS_WITH_AS(parse_config_text("seed = 4\nno.such.key = 1\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("\n\nseed = banana\n"),
                       doctest::Contains("line 3"), ConfigError);
  ExperimentConfig cfg;
  CHECK_THROWS_AS(set_config_value(cfg, "nope", "1"), ConfigError);

  SUBCASE("comments and blanks parse cleanly") {
    const ExperimentConfig cfg = parse_config_text(
        "# comment\n\nseed = 9\nmask.lambda = 0.25  # trailing\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.mask.lambda == 0.25);
  }
}

TEST_CASE("single values get and set symmetrically") {
  ExperimentConfig cfg;
  set_config_value(cfg, "schedule.batches", "5,4,3");
  set_config_value(cfg, "train.momentum", "0.5");
  set_config_value(cfg, "replay.enabled", "false");
  CHECK(cfg.schedule.batches == std::vector<int>{5, 4, 3});
  CHECK(cfg.train.momentum == 0.5);
  CHECK(cfg.replay.enabled == false);
  CHECK(get_config_value(cfg, "schedule.batches") == "5,4,3");
  CHECK(get_config_value(cfg, "replay.enabled") == "false");
  CHECK_THROWS_AS(set_config_value(cfg, "train.momentum", "fast"),
                  ConfigError);
}

TEST_CASE("environment variables override parsed values") {
  CHECK(env_var_name("mask.lambda") == "PCOFL_MASK_LAMBDA");
  CHECK(env_var_name("replay.hp.beta_tv") == "PCOFL_REPLAY_HP_BETA_TV");

  ExperimentConfig cfg;
  REQUIRE(setenv("PCOFL_MASK_LAMBDA", "0.125", 1) == 0);
  REQUIRE(setenv("PCOFL_TRAIN_BATCH_SIZE", "16", 1) == 0);
  apply_env_overrides(cfg);
  unsetenv("PCOFL_MASK_LAMBDA");
  unsetenv("PCOFL_TRAIN_BATCH_SIZE");
  CHECK(cfg.mask.lambda == 0.125);
  CHECK(cfg.train.batch_size == 16);

  SUBCASE("a malformed override still names the key") {
    REQUIRE(setenv("PCOFL_SEED", "soon", 1) == 0);
    ExperimentConfig fresh;
    CHECK_THROWS_WITH_AS(apply_env_overrides(fresh),
                         doctest::Contains("PCOFL_SEED"), ConfigError);
    unsetenv("PCOFL_SEED");
  }
}

TEST_CASE("validation rejects inconsistent experiment settings") {
  ExperimentConfig cfg = fast_config();
  cfg.schedule.rounds = {4};  // length mismatch with batches
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = fast_config();
  cfg.train.sample_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = fast_config();
  cfg.mask.gamma_max = cfg.mask.gamma0 / 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = fast_config();
  cfg.method = "unheard_of";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("mask, pool, and snapshot blobs round-trip bit-exact") {
  const RunResult run = run_experiment(fast_config());
  TempDir tmp("pcofl_blob_roundtrip");
  fs::create_directories(tmp.path);

  const std::string mpath = (tmp.path / "masks.blob").string();
  save_masks(mpath, run.masks);
  const std::vector<MaskState> masks = load_masks(mpath);
  REQUIRE(masks.size() == run.masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    CHECK(masks[i].batch_index == run.masks[i].batch_index);
    CHECK(masks[i].gamma == run.masks[i].gamma);
    CHECK(masks[i].frozen == run.masks[i].frozen);
    CHECK(masks[i].logits == run.masks[i].logits);
    CHECK(masks[i].hard_cache == run.masks[i].hard_cache);
  }

  const std::string ppath = (tmp.path / "pools.blob").string();
  save_pools(ppath, run.pools);
  const std::vector<SyntheticPool> pools = load_pools(ppath);
  REQUIRE(pools.size() == run.pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    CHECK(pools[i].source_batch == run.pools[i].source_batch);
    CHECK(pools[i].inputs == run.pools[i].inputs);
    CHECK(pools[i].labels == run.pools[i].labels);
  }

  const std::string spath = (tmp.path / "snapshots.blob").string();
  save_snapshots(spath, run.snapshots);
  const std::map<int, Snapshot> snaps = load_snapshots(spath);
  REQUIRE(snaps.size() == run.snapshots.size());
  for (const auto& [id, snap] : run.snapshots) {
    REQUIRE(snaps.count(id) == 1);
    CHECK(snaps.at(id).params == snap.params);
    REQUIRE(snaps.at(id).stats.layers.size() == snap.stats.layers.size());
    for (std::size_t l = 0; l < snap.stats.layers.size(); ++l) {
      CHECK(snaps.at(id).stats.layers[l].mean == snap.stats.layers[l].mean);
      CHECK(snaps.at(id).stats.layers[l].var == snap.stats.layers[l].var);
      CHECK(snaps.at(id).stats.layers[l].count == snap.stats.layers[l].count);
    }
  }

  SUBCASE("corrupted magic raises DataError") {
    std::fstream f(mpath, std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    f.put('Z');
    f.close();
    CHECK_THROWS_AS(load_masks(mpath), DataError);
  }
}

TEST_CASE("run directories write, verify, and detect tampering") {
  const RunResult run = run_experiment(fast_config());
  TempDir tmp("pcofl_run_dir");
  const std::string dir = tmp.path.string();

  write_run_dir(dir, run, false);
  for (const char* name : {"manifest.txt", "config.cfg", "ledger.csv",
                           "report.csv", "capacity.csv", "masks.blob",
                           "pools.blob", "snapshots.blob"})
    CHECK(fs::exists(tmp.path / name));

  SUBCASE("an existing directory is refused without force") {
    CHECK_THROWS_AS(write_run_dir(dir, run, false), ConfigError);
    write_run_dir(dir, run, true);  // force overwrites
  }

  SUBCASE("a fresh directory verifies clean") {
    const VerifyResult v = verify_run((tmp.path / "manifest.txt").string());
    CHECK(v.ok);
    CHECK(v.entries_checked ==
          static_cast<int>(run.ledger.entries().size()));
  }

  SUBCASE("one flipped ledger byte fails verification") {
    const fs::path ledger = tmp.path / "ledger.csv";
    std::string text;
    {
      std::ifstream in(ledger);
      text.assign(std::istreambuf_iterator<char>(in), {});
    }
    const std::size_t digit = text.find_last_of("123456789");
    REQUIRE(digit != std::string::npos);
    text[digit] = text[digit] == '9' ? '8' : '9';
    {
      std::ofstream out(ledger, std::ios::trunc);
      out << text;
    }
    const VerifyResult v = verify_run((tmp.path / "manifest.txt").string());
    CHECK(!v.ok);
    CHECK(v.message.find("ledger") != std::string::npos);
  }
}
