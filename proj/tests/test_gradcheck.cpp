#include <gtest/gtest.h>

#include "gradcheck_util.hpp"

namespace searchtrace {
namespace {

TEST(GradCheck, AnalyticMatchesFiniteDifferences) {
  const auto report = testing::run_gradient_check(80, 2024);
  EXPECT_EQ(report.probes, 80);
  EXPECT_LE(report.max_rel_error, 1e-4) << report.max_rel_error;
}

}  // namespace
}  // namespace searchtrace
