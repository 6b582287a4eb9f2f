#include "pcofl/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pcofl/config.hpp"
#include "pcofl/textio.hpp"

namespace pcofl {

namespace {

namespace fs = std::filesystem;

constexpr char kMaskMagic[9] = "PCOFLMSK";
constexpr char kPoolMagic[9] = "PCOFLPOL";
constexpr char kSnapMagic[9] = "PCOFLSNP";

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError("truncated blob file " + path);
  return v;
}

void put_vector(std::ofstream& f, const Vector& v) {
  put(f, std::uint64_t(v.size()));
  f.write(reinterpret_cast<const char*>(v.data()),
          std::streamsize(sizeof(Scalar)) * v.size());
}

Vector get_vector(std::ifstream& f, const std::string& path) {
  const auto n = get<std::uint64_t>(f, path);
  if (n > (std::uint64_t(1) << 32))
    throw DataError("implausible vector length in " + path);
  Vector v = Vector::Zero(Eigen::Index(n));
  f.read(reinterpret_cast<char*>(v.data()),
         std::streamsize(sizeof(Scalar) * n));
  if (!f) throw DataError("truncated blob file " + path);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  return f;
}

std::ifstream open_in(const std::string& path, const char* magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char tag[8] = {};
  f.read(tag, 8);
  if (!f || std::string(tag, 8) != std::string(magic, 8))
    throw DataError("bad magic in " + path);
  return f;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw DataError("failed writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace

std::string render_manifest(const RunResult& run) {
  std::string out;
  out += "version ";
  out += kVersion;
  out += '\n';
  out += "ledger ledger.csv\n";
  out += "config_begin\n";
  out += canonical_config_text(run.config);
  out += "config_end\n";
  out += "capacity params " + std::to_string(run.capacity.params_union_active) +
         "/" + std::to_string(run.capacity.params_total) + " neurons " +
         std::to_string(run.capacity.neurons_union_active) + "/" +
         std::to_string(run.capacity.neurons_total) + "\n";
  out += "rounds_begin\n";
  for (const RoundEvent& r : run.rounds) {
    out += "batch=" + std::to_string(r.batch) +
           " round=" + std::to_string(r.round) +
           " global=" + std::to_string(r.global_round) +
           " client_lr=" + format_double(r.client_lr) +
           " server_lr=" + format_double(r.server_lr) +
           " loss=" + format_double(r.mean_loss) +
           " grad_phi_sq=" + format_double(r.grad_phi_sq) +
           " l1=" + format_double(r.l1_term) + " sampled=";
    for (std::size_t i = 0; i < r.sampled.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(r.sampled[i]);
    }
    out += '\n';
  }
  out += "rounds_end\n";
  out += "events_begin\n";
  for (const std::string& e : run.events) {
    out += e;
    out += '\n';
  }
  out += "events_end\n";
  for (const auto& [phase, seconds] : run.phase_seconds)
    out += "phase " + phase + " " + format_double(seconds) + "\n";
  return out;
}

std::string render_capacity_csv(const CapacityReport& report) {
  std::string out =
      "batch,total,active,newly_activated,reused,active_fraction,"
      "reuse_fraction,neurons_total,neurons_active\n";
  for (const BatchCapacity& b : report.batches) {
    out += std::to_string(b.batch_index) + "," + std::to_string(b.total) +
           "," + std::to_string(b.active) + "," +
           std::to_string(b.newly_activated) + "," + std::to_string(b.reused) +
           "," + format_double(b.active_fraction) + "," +
           format_double(b.reuse_fraction) + "," +
           std::to_string(b.neurons_total) + "," +
           std::to_string(b.neurons_active) + "\n";
  }
  return out;
}

void save_masks(const std::string& path, const std::vector<MaskState>& masks) {
  std::ofstream f = open_out(path);
  f.write(kMaskMagic, 8);
  put(f, std::uint64_t(masks.size()));
  for (const MaskState& m : masks) {
    put(f, std::uint32_t(m.batch_index));
    put(f, std::uint8_t(m.frozen ? 1 : 0));
    put(f, double(m.gamma));
    put_vector(f, m.logits);
    put(f, std::uint64_t(m.hard_cache.size()));
    f.write(reinterpret_cast<const char*>(m.hard_cache.data()),
            std::streamsize(m.hard_cache.size()));
  }
  if (!f) throw DataError("failed writing " + path);
}

std::vector<MaskState> load_masks(const std::string& path) {
  std::ifstream f = open_in(path, kMaskMagic);
  const auto count = get<std::uint64_t>(f, path);
  std::vector<MaskState> masks;
  masks.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MaskState m;
    m.batch_index = int(get<std::uint32_t>(f, path));
    m.frozen = get<std::uint8_t>(f, path) != 0;
    m.gamma = get<double>(f, path);
    m.logits = get_vector(f, path);
    const auto cache = get<std::uint64_t>(f, path);
    if (cache > (std::uint64_t(1) << 32))
      throw DataError("implausible cache length in " + path);
    m.hard_cache.resize(cache);
    f.read(reinterpret_cast<char*>(m.hard_cache.data()),
           std::streamsize(cache));
    if (!f) throw DataError("truncated blob file " + path);
    masks.push_back(std::move(m));
  }
  return masks;
}

void save_pools(const std::string& path,
                const std::vector<SyntheticPool>& pools) {
  std::ofstream f = open_out(path);
  f.write(kPoolMagic, 8);
  put(f, std::uint64_t(pools.size()));
  for (const SyntheticPool& p : pools) {
    put(f, std::uint32_t(p.source_batch));
    put(f, std::uint64_t(p.inputs.rows()));
    put(f, std::uint64_t(p.inputs.cols()));
    for (Eigen::Index r = 0; r < p.inputs.rows(); ++r)
      for (Eigen::Index c = 0; c < p.inputs.cols(); ++c)
        put(f, double(p.inputs(r, c)));
    put(f, std::uint64_t(p.labels.size()));
    for (Eigen::Index r = 0; r < p.labels.size(); ++r)
      put(f, std::int32_t(p.labels[r]));
  }
  if (!f) throw DataError("failed writing " + path);
}

std::vector<SyntheticPool> load_pools(const std::string& path) {
  std::ifstream f = open_in(path, kPoolMagic);
  const auto count = get<std::uint64_t>(f, path);
  std::vector<SyntheticPool> pools;
  pools.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SyntheticPool p;
    p.source_batch = int(get<std::uint32_t>(f, path));
    const auto rows = get<std::uint64_t>(f, path);
    const auto cols = get<std::uint64_t>(f, path);
    if (rows > (std::uint64_t(1) << 32) || cols > (std::uint64_t(1) << 20))
      throw DataError("implausible pool shape in " + path);
    p.inputs.resize(Eigen::Index(rows), Eigen::Index(cols));
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < cols; ++c)
        p.inputs(Eigen::Index(r), Eigen::Index(c)) = get<double>(f, path);
    const auto nlabels = get<std::uint64_t>(f, path);
    if (nlabels != rows) throw DataError("pool label count mismatch in " + path);
    p.labels.resize(Eigen::Index(nlabels));
    for (std::uint64_t r = 0; r < nlabels; ++r)
      p.labels[Eigen::Index(r)] = int(get<std::int32_t>(f, path));
    pools.push_back(std::move(p));
  }
  return pools;
}

void save_snapshots(const std::string& path,
                    const std::map<int, Snapshot>& snapshots) {
  std::ofstream f = open_out(path);
  f.write(kSnapMagic, 8);
  put(f, std::uint64_t(snapshots.size()));
  for (const auto& [client, snap] : snapshots) {
    put(f, std::uint32_t(client));
    put_vector(f, snap.params);
    put(f, std::uint64_t(snap.stats.layers.size()));
    for (const BnLayerStats& s : snap.stats.layers) {
      put_vector(f, s.mean);
      put_vector(f, s.var);
      put(f, std::int64_t(s.count));
    }
  }
  if (!f) throw DataError("failed writing " + path);
}

std::map<int, Snapshot> load_snapshots(const std::string& path) {
  std::ifstream f = open_in(path, kSnapMagic);
  const auto count = get<std::uint64_t>(f, path);
  std::map<int, Snapshot> snapshots;
  for (std::uint64_t i = 0; i < count; ++i) {
    const int client = int(get<std::uint32_t>(f, path));
    Snapshot snap;
    snap.params = get_vector(f, path);
    const auto nlayers = get<std::uint64_t>(f, path);
    if (nlayers > 1024) throw DataError("implausible layer count in " + path);
    snap.stats.layers.resize(nlayers);
    for (auto& s : snap.stats.layers) {
      s.mean = get_vector(f, path);
      s.var = get_vector(f, path);
      s.count = get<std::int64_t>(f, path);
    }
    snapshots.emplace(client, std::move(snap));
  }
  return snapshots;
}

void write_run_dir(const std::string& dir, const RunResult& run, bool force) {
  const fs::path root(dir);
  if (fs::exists(root)) {
    if (!force)
      throw ConfigError("output directory " + dir +
                        " already exists (pass --force to overwrite)");
  } else {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw DataError("cannot create directory " + dir);
  }
  write_text_file((root / "config.cfg").string(),
                  canonical_config_text(run.config));
  write_text_file((root / "ledger.csv").string(),
                  render_ledger_csv(run.ledger));
  write_text_file((root / "report.csv").string(),
                  render_report_csv(build_report(run.config.method,
                                                 run.ledger)));
  write_text_file((root / "capacity.csv").string(),
                  render_capacity_csv(run.capacity));
  save_masks((root / "masks.blob").string(), run.masks);
  save_pools((root / "pools.blob").string(), run.pools);
  save_snapshots((root / "snapshots.blob").string(), run.snapshots);
  write_text_file((root / "manifest.txt").string(), render_manifest(run));
}

VerifyResult verify_run(const std::string& manifest_path) {
  VerifyResult result;
  const std::string text = read_text_file(manifest_path);
  std::istringstream in(text);
  std::string line;

  if (!std::getline(in, line) || line.rfind("version ", 0) != 0) {
    result.message = "manifest has no version line";
    return result;
  }
  const std::string version = line.substr(8);
  if (version != kVersion) {
    result.message = "version mismatch: manifest says '" + version +
                     "', this build is '" + std::string(kVersion) + "'";
    return result;
  }

  std::string ledger_name;
  std::string config_text;
  bool in_config = false;
  while (std::getline(in, line)) {
    if (line == "config_begin") {
      in_config = true;
    } else if (line == "config_end") {
      in_config = false;
    } else if (in_config) {
      config_text += line;
      config_text += '\n';
    } else if (line.rfind("ledger ", 0) == 0) {
      ledger_name = trim(line.substr(7));
    }
  }
  if (ledger_name.empty()) {
    result.message = "manifest has no ledger line";
    return result;
  }
  if (config_text.empty()) {
    result.message = "manifest has no config block";
    return result;
  }

  const fs::path ledger_path =
      fs::path(manifest_path).parent_path() / ledger_name;
  const std::string stored = read_text_file(ledger_path.string());

  const ExperimentConfig config = parse_config_text(config_text);
  const RunResult rerun = run_experiment(config);
  const std::string fresh = render_ledger_csv(rerun.ledger);
  result.entries_checked = int(rerun.ledger.entries().size());

  if (fresh == stored) {
    result.ok = true;
    result.message = "verified: " + std::to_string(result.entries_checked) +
                     " ledger entries reproduced byte-for-byte";
    return result;
  }

  const std::vector<std::string> fresh_lines = split(fresh, '\n');
  const std::vector<std::string> stored_lines = split(stored, '\n');
  const std::size_t n = std::min(fresh_lines.size(), stored_lines.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (fresh_lines[i] != stored_lines[i]) {
      result.message = "ledger mismatch at line " + std::to_string(i + 1) +
                       ": stored '" + stored_lines[i] + "' vs reproduced '" +
                       fresh_lines[i] + "'";
      return result;
    }
  }
  result.message =
      "ledger length mismatch: stored " + std::to_string(stored_lines.size()) +
      " lines vs reproduced " + std::to_string(fresh_lines.size());
  return result;
}

}  // namespace pcofl
