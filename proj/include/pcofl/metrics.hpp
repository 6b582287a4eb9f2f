#pragma once

// Accuracy ledger plus the onboarding metrics computed from it: adaptation
// gain of newly joined clients (PA), retro-active improvement of earlier
// clients (RI), and their mutual-benefit mean.

#include <string>
#include <vector>

#include "pcofl/types.hpp"

namespace pcofl {

enum class Check { LocalPretrain, AtJoin, PostBatch, PostReplay };

std::string check_label(Check kind);
Check parse_check(const std::string& label);

struct LedgerEntry {
  int client = 0;
  Check kind = Check::LocalPretrain;
  int batch = 0;       // 0 for local_pretrain, onboarding batch otherwise
  Scalar accuracy = 0; // fraction in [0, 1]
};

// Append-only accuracy record with at most one entry per
// (client, checkpoint, batch). Accuracies are stored as fractions; the
// compute_* functions perform the single conversion to percentage points.
class MetricsLedger {
 public:
  void add(int client, Check kind, int batch, Scalar accuracy);
  const LedgerEntry* find(int client, Check kind, int batch) const;
  const std::vector<LedgerEntry>& entries() const { return entries_; }

  // Clients holding an at_join entry for the batch, ascending ids.
  std::vector<int> batch_members(int batch) const;
  int max_batch() const;

 private:
  std::vector<LedgerEntry> entries_;
};

// Mean over batch-t clients of post_batch(t) - local_pretrain, in
// percentage points. Throws DataError naming the first client with a
// missing entry.
Scalar compute_pa(const MetricsLedger& ledger, int t);

// Mean over clients of batches earlier than t of V(t) - V(t-1) in
// percentage points, where V(s) is the post_replay(s) entry when present
// and the post_batch(s) entry otherwise.
Scalar compute_ri(const MetricsLedger& ledger, int t);

inline Scalar mutual(Scalar pa, Scalar ri) { return (pa + ri) / 2; }

// Mean accuracy (fraction) of the first onboarding batch's clients at its
// serving checkpoint after each batch 1..max_batch, post-replay when
// available.
std::vector<Scalar> first_batch_trajectory(const MetricsLedger& ledger);

// Ledger file image: header "client,checkpoint,batch,accuracy", one row
// per entry in insertion order, accuracies printed with %.17g.
std::string render_ledger_csv(const MetricsLedger& ledger);
MetricsLedger parse_ledger_csv(const std::string& text);

struct ReportRow {
  std::string method;
  int batch = 0;
  std::string checkpoint;
  std::string metric;
  Scalar value = 0;  // percentage points
};

// Per-batch mean accuracies for every recorded checkpoint, PA for every
// batch, RI and mutual benefit for every transition, and the first-batch
// trajectory. All values in percentage points.
std::vector<ReportRow> build_report(const std::string& method,
                                    const MetricsLedger& ledger);

// Header "method,batch,checkpoint,metric,value"; values with %.17g.
std::string render_report_csv(const std::vector<ReportRow>& rows);

}  // namespace pcofl
