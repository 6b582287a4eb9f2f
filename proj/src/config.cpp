#include "pcofl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "pcofl/textio.hpp"

namespace pcofl {

namespace {

long long to_int(const std::string& v, const std::string& key) {
  try {
    return parse_int(v, key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

Scalar to_double(const std::string& v, const std::string& key) {
  try {
    return parse_double(v, key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  const std::string t = trim(v);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  for (const std::string& part : split(trim(v), ','))
    out.push_back(int(to_int(part, key)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string from_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct KeyDef {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::vector<KeyDef> build_registry() {
  std::vector<KeyDef> keys;
  auto add = [&keys](std::string name, auto setter, auto getter) {
    keys.push_back({std::move(name), setter, getter});
  };

  auto def_u64 = [&](std::string name, std::uint64_t ExperimentConfig::* f) {
    add(name,
        [f, name](ExperimentConfig& c, const std::string& v) {
          c.*f = std::uint64_t(to_int(v, name));
        },
        [f](const ExperimentConfig& c) { return std::to_string(c.*f); });
  };
  auto def_str = [&](std::string name, std::string ExperimentConfig::* f) {
    add(name,
        [f](ExperimentConfig& c, const std::string& v) { c.*f = trim(v); },
        [f](const ExperimentConfig& c) { return c.*f; });
  };

  def_u64("seed", &ExperimentConfig::seed);
  def_str("method", &ExperimentConfig::method);
  add("jobs",
      [](ExperimentConfig& c, const std::string& v) {
        c.jobs = int(to_int(v, "jobs"));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.jobs); });

  auto def_index = [&](std::string name, auto field_ref) {
    add(name,
        [field_ref, name](ExperimentConfig& c, const std::string& v) {
          field_ref(c) = Eigen::Index(to_int(v, name));
        },
        [field_ref](const ExperimentConfig& c) {
          return std::to_string(field_ref(c));
        });
  };
  auto def_int = [&](std::string name, auto field_ref) {
    add(name,
        [field_ref, name](ExperimentConfig& c, const std::string& v) {
          field_ref(c) = int(to_int(v, name));
        },
        [field_ref](const ExperimentConfig& c) {
          return std::to_string(field_ref(c));
        });
  };
  auto def_real = [&](std::string name, auto field_ref) {
    add(name,
        [field_ref, name](ExperimentConfig& c, const std::string& v) {
          field_ref(c) = to_double(v, name);
        },
        [field_ref](const ExperimentConfig& c) {
          return format_double(field_ref(c));
        });
  };
  auto def_bool = [&](std::string name, auto field_ref) {
    add(name,
        [field_ref, name](ExperimentConfig& c, const std::string& v) {
          field_ref(c) = to_bool(v, name);
        },
        [field_ref](const ExperimentConfig& c) {
          return field_ref(c) ? "true" : "false";
        });
  };
  auto def_list = [&](std::string name, auto field_ref) {
    add(name,
        [field_ref, name](ExperimentConfig& c, const std::string& v) {
          field_ref(c) = to_int_list(v, name);
        },
        [field_ref](const ExperimentConfig& c) {
          return from_int_list(field_ref(c));
        });
  };

#define PCOFL_FIELD(expr) [](auto& c) -> decltype(auto) { return (c.expr); }
  def_index("data.dim", PCOFL_FIELD(data.dim));
  def_index("data.classes", PCOFL_FIELD(data.classes));
  def_index("data.per_class", PCOFL_FIELD(data.per_class));
  def_real("data.spread", PCOFL_FIELD(data.spread));
  def_real("data.alpha", PCOFL_FIELD(data.alpha));
  def_real("data.test_fraction", PCOFL_FIELD(data.test_fraction));
  def_list("schedule.batches", PCOFL_FIELD(schedule.batches));
  def_list("schedule.rounds", PCOFL_FIELD(schedule.rounds));
  def_index("net.hidden", PCOFL_FIELD(net.hidden));
  def_int("net.hidden_layers", PCOFL_FIELD(net.hidden_layers));
  def_index("hypernet.embed_dim", PCOFL_FIELD(hypernet.embed_dim));
  def_index("hypernet.hidden", PCOFL_FIELD(hypernet.hidden));
  def_real("mask.lambda", PCOFL_FIELD(mask.lambda));
  def_real("mask.gamma0", PCOFL_FIELD(mask.gamma0));
  def_real("mask.gamma_growth", PCOFL_FIELD(mask.gamma_growth));
  def_real("mask.gamma_max", PCOFL_FIELD(mask.gamma_max));
  def_real("train.client_lr", PCOFL_FIELD(train.client_lr));
  def_real("train.momentum", PCOFL_FIELD(train.momentum));
  def_int("train.batch_size", PCOFL_FIELD(train.batch_size));
  def_int("train.local_epochs", PCOFL_FIELD(train.local_epochs));
  def_real("train.server_lr", PCOFL_FIELD(train.server_lr));
  def_bool("train.robbins_monro", PCOFL_FIELD(train.robbins_monro));
  def_real("train.sample_fraction", PCOFL_FIELD(train.sample_fraction));
  def_int("train.pretrain_epochs", PCOFL_FIELD(train.pretrain_epochs));
  def_real("train.pretrain_lr", PCOFL_FIELD(train.pretrain_lr));
  def_int("train.eval_every", PCOFL_FIELD(train.eval_every));
  def_bool("replay.enabled", PCOFL_FIELD(replay.enabled));
  def_real("replay.beta_bn", PCOFL_FIELD(replay.hp.beta_bn));
  def_real("replay.beta_tv", PCOFL_FIELD(replay.hp.beta_tv));
  def_real("replay.beta_l2", PCOFL_FIELD(replay.hp.beta_l2));
  def_real("replay.beta_feature", PCOFL_FIELD(replay.hp.beta_feature));
  def_real("replay.label_weight", PCOFL_FIELD(replay.hp.label_weight));
  def_int("replay.iterations", PCOFL_FIELD(replay.hp.iterations));
  def_real("replay.step_size", PCOFL_FIELD(replay.hp.step_size));
  def_real("replay.clamp", PCOFL_FIELD(replay.hp.clamp));
  def_int("replay.images_per_class", PCOFL_FIELD(replay.hp.images_per_class));
  def_int("replay.finetune_epochs", PCOFL_FIELD(replay.hp.finetune_epochs));
  def_real("replay.finetune_lr", PCOFL_FIELD(replay.hp.finetune_lr));
  def_int("replay.finetune_batch", PCOFL_FIELD(replay.hp.finetune_batch));
#undef PCOFL_FIELD

  std::sort(keys.begin(), keys.end(),
            [](const KeyDef& a, const KeyDef& b) { return a.name < b.name; });
  return keys;
}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> keys = build_registry();
  return keys;
}

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const KeyDef& k : registry()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value) {
  const KeyDef* def = find_key(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  def->set(cfg, value);
}

std::string get_config_value(const ExperimentConfig& cfg,
                             const std::string& key) {
  const KeyDef* def = find_key(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  return def->get(cfg);
}

ExperimentConfig parse_config_text(const std::string& text,
                                   ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + trim(line) + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return base;
}

ExperimentConfig load_config_file(const std::string& path,
                                  ExperimentConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

std::string env_var_name(const std::string& key) {
  std::string out = "PCOFL_";
  for (char c : key)
    out += (c == '.') ? '_' : char(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void apply_env_overrides(ExperimentConfig& cfg) {
  for (const std::string& key : config_keys()) {
    const std::string name = env_var_name(key);
    const char* v = std::getenv(name.c_str());
    if (!v) continue;
    try {
      set_config_value(cfg, key, v);
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const std::string& key : config_keys()) {
    out += key;
    out += " = ";
    out += get_config_value(cfg, key);
    out += '\n';
  }
  return out;
}

}  // namespace pcofl
