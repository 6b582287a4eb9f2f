#pragma once

// Run-directory persistence and verification. A completed experiment is
// written as a directory of plain-text tables (manifest, config, ledger,
// report, capacity) plus binary blobs for masks, synthetic pools, and
// serving snapshots. verify_run() re-executes the manifest's embedded
// config and byte-compares the reproduced ledger against the stored one.

#include <map>
#include <string>
#include <vector>

#include "pcofl/federation.hpp"

namespace pcofl {

// Plain-text summary: version line, ledger filename, embedded config
// block, one line per federated round, and the free-form event log.
std::string render_manifest(const RunResult& run);

// "batch,total,active,newly_activated,reused,active_fraction,
//  reuse_fraction,neurons_total,neurons_active" — one row per batch.
std::string render_capacity_csv(const CapacityReport& report);

// Binary blobs (native little-endian, magic-tagged). Loaders throw
// DataError on bad magic or truncation.
void save_masks(const std::string& path, const std::vector<MaskState>& masks);
std::vector<MaskState> load_masks(const std::string& path);

void save_pools(const std::string& path,
                const std::vector<SyntheticPool>& pools);
std::vector<SyntheticPool> load_pools(const std::string& path);

void save_snapshots(const std::string& path,
                    const std::map<int, Snapshot>& snapshots);
std::map<int, Snapshot> load_snapshots(const std::string& path);

// Writes manifest.txt, config.cfg, ledger.csv, report.csv, capacity.csv,
// masks.blob, pools.blob, snapshots.blob. Refuses an existing directory
// unless force is set.
void write_run_dir(const std::string& dir, const RunResult& run, bool force);

struct VerifyResult {
  bool ok = false;
  std::string message;
  int entries_checked = 0;
};

// Re-runs the experiment recorded at manifest_path and compares the
// reproduced ledger CSV byte-for-byte with the stored file. Version
// mismatches, malformed manifests, and any ledger divergence fail.
VerifyResult verify_run(const std::string& manifest_path);

}  // namespace pcofl
