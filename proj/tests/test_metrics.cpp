/*
 * Copyright 2026 The fedmvc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include "fedmvc/alignment.hpp"
#include "fedmvc/metrics.hpp"
#include "oracles.hpp"

namespace fedmvc {
namespace {

TEST(Acc, IdentityAndPermutation) {
  const std::vector<int> t = {0, 0, 1, 1, 2, 2};
  EXPECT_EQ(acc(t, t), 1.0);
  EXPECT_EQ(acc({2, 2, 0, 0, 1, 1}, t), 1.0);
  EXPECT_DOUBLE_EQ(acc({0, 0, 0, 0, 0, 0}, t), 1.0 / 3.0);
}

TEST(Acc, MatchesBruteForcePermutation) {
  RngStream r(1);
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(r.below(5));
    const std::size_t n = 5 + r.below(60);
    const auto a = oracle::random_labels(n, k, r), b = oracle::random_labels(n, k, r);
    EXPECT_DOUBLE_EQ(acc(a, b), oracle::acc(a, b, k));
  }
}

TEST(Acc, UnequalClusterCounts) {
  EXPECT_DOUBLE_EQ(acc({0, 1, 2, 3}, {0, 0, 1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(acc({0, 0, 1, 1}, {0, 1, 2, 3}), 0.5);
}

TEST(Nmi, Examples) {
  EXPECT_DOUBLE_EQ(nmi({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_EQ(nmi({0, 0, 0, 0}, {0, 1, 0, 1}), 0.0);
  EXPECT_EQ(nmi({3, 3, 3}, {1, 1, 1}), 1.0);
}

TEST(Nmi, MatchesEntropyFormula) {
  RngStream r(2);
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_labels(50, 2 + static_cast<int>(r.below(5)), r);
    const auto b = oracle::random_labels(50, 2 + static_cast<int>(r.below(5)), r);
    EXPECT_NEAR(nmi(a, b), oracle::nmi(a, b), 1e-10);
  }
}

TEST(Ari, Examples) {
  EXPECT_DOUBLE_EQ(ari({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(ari({1, 1, 0, 0}, {0, 0, 1, 1}), 1.0);
}

TEST(Ari, MatchesPairCounting) {
  RngStream r(3);
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_labels(40, 2 + static_cast<int>(r.below(5)), r);
    const auto b = oracle::random_labels(40, 2 + static_cast<int>(r.below(5)), r);
    EXPECT_NEAR(ari(a, b), oracle::ari(a, b), 1e-10);
  }
}

TEST(Metrics, InvariantUnderRelabeling) {
  RngStream r(4);
  for (int t = 0; t < 50; ++t) {
    const int k = 2 + static_cast<int>(r.below(5));
    const auto a = oracle::random_labels(60, k, r), b = oracle::random_labels(60, k, r);
    Permutation p = Permutation::identity(k), q = Permutation::identity(k);
    r.shuffle(std::span<int>(p.target));
    r.shuffle(std::span<int>(q.target));
    const auto pa = p.apply_labels(a), qb = q.apply_labels(b);
    EXPECT_DOUBLE_EQ(acc(pa, qb), acc(a, b));
    EXPECT_NEAR(nmi(pa, qb), nmi(a, b), 1e-12);
    EXPECT_NEAR(ari(pa, qb), ari(a, b), 1e-12);
  }
}

TEST(Metrics, ArbitraryLabelValues) {
  EXPECT_EQ(acc({-5, -5, 100, 100}, {7, 7, 9, 9}), 1.0);
  EXPECT_DOUBLE_EQ(nmi({-5, -5, 100, 100}, {7, 7, 9, 9}), 1.0);
}

TEST(Metrics, RangesAndErrors) {
  RngStream r(5);
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_labels(30, 4, r), b = oracle::random_labels(30, 3, r);
    const ClusterScores s = score(a, b);
    EXPECT_GE(s.acc, 0.0);
    EXPECT_LE(s.acc, 1.0);
    EXPECT_GE(s.nmi, 0.0);
    EXPECT_LE(s.nmi, 1.0);
    EXPECT_GE(s.ari, -1.0);
    EXPECT_LE(s.ari, 1.0);
  }
  EXPECT_THROW(acc({0, 1}, {0}), ContractViolation);
  EXPECT_THROW(nmi({}, {}), ContractViolation);
  EXPECT_THROW(ari({0}, {0, 1}), ContractViolation);
}

}  // namespace
}  // namespace fedmvc
