#pragma once

/**
 * Published benchmark table used as an arithmetic oracle for the onboarding
 * metrics. Each row records, for one method on one dataset, the mean
 * accuracy of existing clients before and after a new batch joined, the
 * accuracy of the new clients after onboarding against their solo
 * baseline, and the reported retro-improvement (RI), adaptation gain (PA),
 * and mutual-benefit figures, all in percentage points.
 */

#include <array>

#include "pcofl/types.hpp"

namespace pcofl::testsupport {

struct BenchmarkRow {
  const char* dataset;
  const char* method;
  Scalar before_join;     // cohort-wide baseline before the new batch
  Scalar existing_before; // existing clients just before the join
  Scalar existing_after;  // existing clients after onboarding (+ replay)
  Scalar reported_ri;
  Scalar new_after;       // new clients after onboarding
  Scalar reported_pa;
  Scalar reported_mutual;
};

inline constexpr std::array<BenchmarkRow, 24> kBenchmarkRows{{
    // 10-class image benchmark; cohort baseline 70.01.
    {"c10", "avg", 70.01, 51.15, 32.59, -18.56, 43.69, -26.32, -22.44},
    {"c10", "per", 70.01, 71.04, 63.95, -7.09, 69.30, -0.71, -13.51},
    {"c10", "rep", 70.01, 45.48, 33.23, -12.25, 40.11, -29.90, -21.08},
    {"c10", "hn", 70.01, 65.96, 56.23, -9.73, 70.06, 0.05, -4.84},
    {"c10", "weit", 70.01, 65.01, 58.75, -6.26, 67.40, -2.61, -4.43},
    {"c10", "class", 70.01, 65.82, 59.85, -5.97, 68.05, -1.96, -3.97},
    {"c10", "hr", 70.01, 66.19, 60.11, -6.08, 68.30, -1.71, -3.90},
    {"c10", "dsh", 70.01, 66.57, 68.89, 2.32, 71.43, 1.42, 1.87},
    // 100-class image benchmark; cohort baseline 33.39.
    {"c100", "avg", 33.39, 22.69, 12.70, -9.99, 17.33, -16.06, -13.03},
    {"c100", "per", 33.39, 35.50, 29.33, -6.17, 36.89, 3.50, -1.34},
    {"c100", "rep", 33.39, 17.18, 7.40, -9.78, 12.95, -20.44, -15.11},
    {"c100", "hn", 33.39, 36.44, 13.96, -22.48, 41.24, 7.85, -7.32},
    {"c100", "weit", 33.39, 36.88, 32.45, -4.43, 34.95, 1.56, -1.44},
    {"c100", "class", 33.39, 37.22, 33.15, -4.07, 35.20, 1.81, -1.13},
    {"c100", "hr", 33.39, 37.45, 33.51, -3.94, 35.35, 1.96, -0.99},
    {"c100", "dsh", 33.39, 37.23, 39.40, 2.17, 41.76, 8.37, 5.37},
    // 200-class image benchmark; cohort baseline 10.40.
    {"t200", "avg", 10.40, 0.43, 0.34, -0.09, 1.09, -9.31, -4.70},
    {"t200", "per", 10.40, 11.49, 8.18, -3.31, 9.57, -0.83, -2.07},
    {"t200", "rep", 10.40, 0.53, 0.53, 0.00, 0.54, -9.86, -4.93},
    {"t200", "hn", 10.40, 10.34, 0.53, -9.81, 9.32, -1.08, -5.45},
    {"t200", "weit", 10.40, 10.15, 8.65, -1.50, 9.83, -0.57, -1.04},
    {"t200", "class", 10.40, 10.51, 9.23, -1.28, 10.01, -0.39, -0.84},
    {"t200", "hr", 10.40, 10.45, 8.90, -1.55, 9.92, -0.48, -1.02},
    {"t200", "dsh", 10.40, 10.11, 10.22, 0.11, 10.67, 0.27, 0.19},
}};

}  // namespace pcofl::testsupport
