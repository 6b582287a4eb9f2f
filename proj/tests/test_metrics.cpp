/** Oracle tests for the accuracy ledger and onboarding metrics. */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "pcofl/metrics.hpp"
#include "support/benchmark_rows.hpp"

using namespace pcofl;
using namespace pcofl::testsupport;

TEST_CASE("ledger stores one entry per client/checkpoint/batch") {
  MetricsLedger ledger;
  ledger.add(3, Check::LocalPretrain, 0, 0.5);
  ledger.add(3, Check::AtJoin, 1, 0.52);
  CHECK_THROWS_AS(ledger.add(3, Check::LocalPretrain, 0, 0.6), DataError);

  const LedgerEntry* e = ledger.find(3, Check::AtJoin, 1);
  REQUIRE(e != nullptr);
  CHECK(e->accuracy == 0.52);
  CHECK(ledger.find(3, Check::PostBatch, 1) == nullptr);
  CHECK(ledger.entries().size() == 2);
}

TEST_CASE("batch membership comes from at_join entries, sorted") {
  MetricsLedger ledger;
  ledger.add(5, Check::AtJoin, 1, 0.1);
  ledger.add(2, Check::AtJoin, 1, 0.1);
  ledger.add(7, Check::AtJoin, 2, 0.1);
  ledger.add(2, Check::PostBatch, 2, 0.2);  // not a membership record
  CHECK(ledger.batch_members(1) == std::vector<int>{2, 5});
  CHECK(ledger.batch_members(2) == std::vector<int>{7});
  CHECK(ledger.batch_members(3).empty());
  CHECK(ledger.max_batch() == 2);
}

TEST_CASE("checkpoint labels round-trip") {
  for (Check c : {Check::LocalPretrain, Check::AtJoin, Check::PostBatch,
                  Check::PostReplay})
    CHECK(parse_check(check_label(c)) == c);
  CHECK_THROWS_AS(parse_check("nonsense"), DataError);
}

TEST_CASE("adaptation gain is the mean joiner improvement in points") {
  // One joiner: 70.01% before, 71.43% after its batch -> +1.42 points.
  MetricsLedger ledger;
  ledger.add(0, Check::LocalPretrain, 0, 0.7001);
  ledger.add(0, Check::AtJoin, 1, 0.7001);
  ledger.add(0, Check::PostBatch, 1, 0.7143);
  CHECK(compute_pa(ledger, 1) == doctest::Approx(1.42).epsilon(1e-9));

  SUBCASE("the mean runs over every batch member") {
    ledger.add(1, Check::LocalPretrain, 0, 0.50);
    ledger.add(1, Check::AtJoin, 1, 0.50);
    ledger.add(1, Check::PostBatch, 1, 0.60);
    CHECK(compute_pa(ledger, 1) == doctest::Approx((1.42 + 10.0) / 2));
  }

  SUBCASE("a missing entry names the client") {
    ledger.add(1, Check::AtJoin, 1, 0.5);  // no post_batch, no pretrain
    CHECK_THROWS_WITH_AS(compute_pa(ledger, 1),
                         doctest::Contains("client 1"), DataError);
  }
}

TEST_CASE("retro-improvement compares serving checkpoints across batches") {
  // One earlier client at 66.57% after batch 1, refreshed to 68.89% at the
  // batch-2 replay checkpoint -> +2.32 points.
  MetricsLedger ledger;
  ledger.add(0, Check::AtJoin, 1, 0.6);
  ledger.add(0, Check::PostBatch, 1, 0.6657);
  ledger.add(9, Check::AtJoin, 2, 0.5);  // batch-2 member, not averaged
  ledger.add(0, Check::PostReplay, 2, 0.6889);
  CHECK(compute_ri(ledger, 2) == doctest::Approx(2.32).epsilon(1e-9));

  SUBCASE("without a replay entry the post-batch value stands in") {
    ledger.add(1, Check::AtJoin, 1, 0.4);
    ledger.add(1, Check::PostBatch, 1, 0.40);
    ledger.add(1, Check::PostBatch, 2, 0.45);
    // Client 0: 2.32; client 1: +5.00 via the fallback.
    CHECK(compute_ri(ledger, 2) == doctest::Approx((2.32 + 5.0) / 2));
  }
}

TEST_CASE("mutual benefit averages the two gains") {
  CHECK(mutual(-18.56, -26.32) == doctest::Approx(-22.44));
  CHECK(mutual(2.32, 1.42) == doctest::Approx(1.87));
}

TEST_CASE("published two-batch rows are internally consistent") {
  // Every row's gains must match its own before/after accuracies to the
  // rounding of two decimals. Values printed with two decimals can sit a
  // full half-cent from the exact mean (e.g. -3.965 -> -3.97), so the
  // tolerance is 0.0051: barely past the rounding bound, far below the
  // next printable step. The mutual-benefit column disagrees with
  // (PA + RI)/2 beyond that in exactly two rows; those stay recorded
  // here as published, flagged inconsistent.
  constexpr double tol = 0.0051;
  int mutual_errata = 0;
  for (const BenchmarkRow& row : kBenchmarkRows) {
    const double ri = row.existing_after - row.existing_before;
    const double pa = row.new_after - row.before_join;
    CHECK(std::abs(ri - row.reported_ri) <= tol);
    CHECK(std::abs(pa - row.reported_pa) <= tol);
    const double mb = mutual(row.reported_pa, row.reported_ri);
    if (std::abs(mb - row.reported_mutual) > tol) {
      ++mutual_errata;
      const bool c10_per =
          row.dataset == std::string("c10") && row.method == std::string("per");
      const bool c100_dsh = row.dataset == std::string("c100") &&
                            row.method == std::string("dsh");
      CHECK((c10_per || c100_dsh));
      if (c10_per) CHECK(mb == doctest::Approx(-3.90).epsilon(1e-6));
      if (c100_dsh) CHECK(mb == doctest::Approx(5.27).epsilon(1e-6));
    }
  }
  CHECK(mutual_errata == 2);
}

TEST_CASE("first-batch trajectory tracks the earliest cohort") {
  MetricsLedger ledger;
  ledger.add(0, Check::AtJoin, 1, 0.5);
  ledger.add(1, Check::AtJoin, 1, 0.5);
  ledger.add(0, Check::PostBatch, 1, 0.60);
  ledger.add(1, Check::PostBatch, 1, 0.70);
  ledger.add(5, Check::AtJoin, 2, 0.5);
  ledger.add(0, Check::PostReplay, 2, 0.62);
  ledger.add(1, Check::PostBatch, 2, 0.66);  // no replay entry for client 1

  const std::vector<Scalar> traj = first_batch_trajectory(ledger);
  REQUIRE(traj.size() == 2);
  CHECK(traj[0] == doctest::Approx(0.65));
  CHECK(traj[1] == doctest::Approx(0.64));  // mean of 0.62 and 0.66
}

TEST_CASE("ledger CSV round-trips exactly") {
  MetricsLedger ledger;
  ledger.add(0, Check::LocalPretrain, 0, 1.0 / 3.0);
  ledger.add(0, Check::AtJoin, 1, 0.1234567890123456789);
  ledger.add(4, Check::PostReplay, 2, 1e-17);

  const std::string csv = render_ledger_csv(ledger);
  CHECK(csv.rfind("client,checkpoint,batch,accuracy\n", 0) == 0);

  const MetricsLedger back = parse_ledger_csv(csv);
  REQUIRE(back.entries().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries()[i].client == ledger.entries()[i].client);
    CHECK(back.entries()[i].kind == ledger.entries()[i].kind);
    CHECK(back.entries()[i].batch == ledger.entries()[i].batch);
    CHECK(back.entries()[i].accuracy == ledger.entries()[i].accuracy);
  }
  CHECK(render_ledger_csv(back) == csv);
}

TEST_CASE("reports carry checkpoint means, gains, and the trajectory") {
  MetricsLedger ledger;
  ledger.add(0, Check::LocalPretrain, 0, 0.7001);
  ledger.add(0, Check::AtJoin, 1, 0.7001);
  ledger.add(0, Check::PostBatch, 1, 0.6657);
  ledger.add(9, Check::LocalPretrain, 0, 0.7001);
  ledger.add(9, Check::AtJoin, 2, 0.7001);
  ledger.add(9, Check::PostBatch, 2, 0.7143);
  ledger.add(0, Check::PostReplay, 2, 0.6889);

  const auto rows = build_report("demo", ledger);
  auto value_of = [&](int batch, const std::string& checkpoint,
                      const std::string& metric) -> Scalar {
    for (const ReportRow& r : rows)
      if (r.batch == batch && r.checkpoint == checkpoint && r.metric == metric)
        return r.value;
    FAIL("missing report row ", checkpoint, "/", metric, " for batch ", batch);
    return std::nan("");
  };

  for (const ReportRow& r : rows) CHECK(r.method == "demo");
  CHECK(value_of(0, "local_pretrain", "mean_accuracy") ==
        doctest::Approx(70.01));
  CHECK(value_of(1, check_label(Check::PostBatch), "mean_accuracy") ==
        doctest::Approx(66.57));
  CHECK(value_of(2, check_label(Check::PostReplay), "mean_accuracy") ==
        doctest::Approx(68.89));
  CHECK(value_of(1, "summary", "pa") == doctest::Approx(-3.44));
  CHECK(value_of(2, "summary", "pa") == doctest::Approx(1.42));
  CHECK(value_of(2, "summary", "ri") == doctest::Approx(2.32));
  CHECK(value_of(2, "summary", "mutual") ==
        doctest::Approx(mutual(1.42, 2.32)));
  CHECK(value_of(1, "trajectory", "first_batch_accuracy") ==
        doctest::Approx(66.57));
  CHECK(value_of(2, "trajectory", "first_batch_accuracy") ==
        doctest::Approx(68.89));

  const std::string csv = render_report_csv(rows);
  CHECK(csv.rfind("method,batch,checkpoint,metric,value\n", 0) == 0);
  CHECK(csv.find("demo,2,summary,ri,") != std::string::npos);
}
