#include "pcofl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pcofl/textio.hpp"

namespace pcofl {

std::string check_label(Check kind) {
  switch (kind) {
    case Check::LocalPretrain:
      return "local_pretrain";
    case Check::AtJoin:
      return "at_join";
    case Check::PostBatch:
      return "post_batch";
    case Check::PostReplay:
      return "post_replay";
  }
  throw InputError("check_label: unknown checkpoint");
}

Check parse_check(const std::string& label) {
  if (label == "local_pretrain") return Check::LocalPretrain;
  if (label == "at_join") return Check::AtJoin;
  if (label == "post_batch") return Check::PostBatch;
  if (label == "post_replay") return Check::PostReplay;
  throw DataError("parse_check: unknown checkpoint '" + label + "'");
}

void MetricsLedger::add(int client, Check kind, int batch, Scalar accuracy) {
  if (client < 0) throw DataError("ledger: negative client id");
  if (!(accuracy >= 0 && accuracy <= 1))
    throw DataError("ledger: accuracy " + format_double(accuracy) +
                    " outside [0,1] for client " + std::to_string(client));
  if (kind == Check::LocalPretrain) {
    if (batch != 0)
      throw DataError("ledger: local_pretrain entries carry batch 0");
  } else if (batch < 1) {
    throw DataError("ledger: batch must be >= 1 for " + check_label(kind));
  }
  if (find(client, kind, batch))
    throw DataError("ledger: duplicate entry client " + std::to_string(client) +
                    " " + check_label(kind) + " batch " + std::to_string(batch));
  entries_.push_back({client, kind, batch, accuracy});
}

const LedgerEntry* MetricsLedger::find(int client, Check kind,
                                       int batch) const {
  for (const LedgerEntry& e : entries_)
    if (e.client == client && e.kind == kind && e.batch == batch) return &e;
  return nullptr;
}

std::vector<int> MetricsLedger::batch_members(int batch) const {
  std::vector<int> out;
  for (const LedgerEntry& e : entries_)
    if (e.kind == Check::AtJoin && e.batch == batch) out.push_back(e.client);
  std::sort(out.begin(), out.end());
  return out;
}

int MetricsLedger::max_batch() const {
  int mx = 0;
  for (const LedgerEntry& e : entries_) mx = std::max(mx, e.batch);
  return mx;
}

namespace {

Scalar require(const MetricsLedger& ledger, int client, Check kind, int batch,
               const char* caller) {
  const LedgerEntry* e = ledger.find(client, kind, batch);
  if (!e)
    throw DataError(std::string(caller) + ": client " + std::to_string(client) +
                    " missing " + check_label(kind) + " entry for batch " +
                    std::to_string(batch));
  return e->accuracy;
}

// Serving accuracy after batch t: post-replay refresh when one happened,
// the plain post-batch checkpoint otherwise.
Scalar serving_after(const MetricsLedger& ledger, int client, int t,
                     const char* caller) {
  if (const LedgerEntry* e = ledger.find(client, Check::PostReplay, t))
    return e->accuracy;
  return require(ledger, client, Check::PostBatch, t, caller);
}

}  // namespace

Scalar compute_pa(const MetricsLedger& ledger, int t) {
  if (t < 1) throw InputError("compute_pa: batch must be >= 1");
  const std::vector<int> members = ledger.batch_members(t);
  if (members.empty())
    throw DataError("compute_pa: no clients joined at batch " +
                    std::to_string(t));
  Scalar sum = 0;
  for (int c : members) {
    const Scalar before = require(ledger, c, Check::LocalPretrain, 0,
                                  "compute_pa");
    const Scalar after = require(ledger, c, Check::PostBatch, t, "compute_pa");
    sum += after - before;
  }
  return 100 * sum / Scalar(members.size());
}

Scalar compute_ri(const MetricsLedger& ledger, int t) {
  if (t < 2) throw InputError("compute_ri: transition must be >= 2");
  std::set<int> prior;
  for (int s = 1; s < t; ++s)
    for (int c : ledger.batch_members(s)) prior.insert(c);
  if (prior.empty())
    throw DataError("compute_ri: no clients onboarded before batch " +
                    std::to_string(t));
  Scalar sum = 0;
  for (int c : prior) {
    const Scalar after = serving_after(ledger, c, t, "compute_ri");
    const Scalar before = serving_after(ledger, c, t - 1, "compute_ri");
    sum += after - before;
  }
  return 100 * sum / Scalar(prior.size());
}

std::vector<Scalar> first_batch_trajectory(const MetricsLedger& ledger) {
  const std::vector<int> members = ledger.batch_members(1);
  if (members.empty())
    throw DataError("first_batch_trajectory: no completed first batch");
  std::vector<Scalar> out;
  for (int t = 1; t <= ledger.max_batch(); ++t) {
    Scalar sum = 0;
    for (int c : members)
      sum += serving_after(ledger, c, t, "first_batch_trajectory");
    out.push_back(sum / Scalar(members.size()));
  }
  return out;
}

std::string render_ledger_csv(const MetricsLedger& ledger) {
  std::string out = "client,checkpoint,batch,accuracy\n";
  for (const LedgerEntry& e : ledger.entries()) {
    out += std::to_string(e.client);
    out += ',';
    out += check_label(e.kind);
    out += ',';
    out += std::to_string(e.batch);
    out += ',';
    out += format_double(e.accuracy);
    out += '\n';
  }
  return out;
}

MetricsLedger parse_ledger_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "client,checkpoint,batch,accuracy")
    throw DataError("ledger csv: missing or unexpected header");
  MetricsLedger ledger;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    const std::string where = "ledger csv line " + std::to_string(lineno);
    if (f.size() != 4) throw DataError(where + ": expected 4 fields");
    ledger.add(int(parse_int(f[0], where)), parse_check(trim(f[1])),
               int(parse_int(f[2], where)), parse_double(f[3], where));
  }
  return ledger;
}

std::vector<ReportRow> build_report(const std::string& method,
                                    const MetricsLedger& ledger) {
  std::vector<ReportRow> rows;
  const int last = ledger.max_batch();

  auto mean_accuracy = [&](Check kind, int batch) -> std::pair<bool, Scalar> {
    Scalar sum = 0;
    int n = 0;
    for (const LedgerEntry& e : ledger.entries())
      if (e.kind == kind && e.batch == batch) {
        sum += e.accuracy;
        ++n;
      }
    if (n == 0) return {false, 0};
    return {true, 100 * sum / Scalar(n)};
  };

  if (auto [any, v] = mean_accuracy(Check::LocalPretrain, 0); any)
    rows.push_back({method, 0, "local_pretrain", "mean_accuracy", v});
  for (int t = 1; t <= last; ++t)
    for (Check kind : {Check::AtJoin, Check::PostBatch, Check::PostReplay})
      if (auto [any, v] = mean_accuracy(kind, t); any)
        rows.push_back({method, t, check_label(kind), "mean_accuracy", v});

  for (int t = 1; t <= last; ++t)
    if (!ledger.batch_members(t).empty())
      rows.push_back({method, t, "summary", "pa", compute_pa(ledger, t)});
  for (int t = 2; t <= last; ++t) {
    const Scalar ri = compute_ri(ledger, t);
    rows.push_back({method, t, "summary", "ri", ri});
    if (!ledger.batch_members(t).empty()) {
      const Scalar pa = compute_pa(ledger, t);
      rows.push_back({method, t, "summary", "mutual", mutual(pa, ri)});
    }
  }

  const std::vector<Scalar> traj = first_batch_trajectory(ledger);
  for (std::size_t i = 0; i < traj.size(); ++i)
    rows.push_back({method, int(i) + 1, "trajectory", "first_batch_accuracy",
                    100 * traj[i]});
  return rows;
}

std::string render_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,batch,checkpoint,metric,value\n";
  for (const ReportRow& r : rows) {
    out += r.method;
    out += ',';
    out += std::to_string(r.batch);
    out += ',';
    out += r.checkpoint;
    out += ',';
    out += r.metric;
    out += ',';
    out += format_double(r.value);
    out += '\n';
  }
  return out;
}

}  // namespace pcofl
