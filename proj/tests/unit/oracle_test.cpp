#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "swvm/oracle.hpp"

using swvm::OracleAcquire;
using swvm::OracleRelease;
using swvm::OracleSet;
using swvm::ProtocolViolation;
using Oracle = swvm::SequentialVersionMaintenance<int>;

TEST(Oracle, AcquireReturnsInitialData) {
  Oracle o(2, 7);
  EXPECT_EQ(o.acquire(0), 7);
  EXPECT_FALSE(o.release(0));
  EXPECT_EQ(o.live_count(), 1u);
}

TEST(Oracle, WriterReleaseOfSupersededVersionIsTrue) {
  Oracle o(2, 0);
  o.acquire(0);
  o.set(0, 1);
  EXPECT_EQ(o.live_count(), 2u);
  EXPECT_TRUE(o.release(0));
  EXPECT_EQ(o.live_count(), 1u);
  EXPECT_EQ(o.acquire(1), 1);
}

TEST(Oracle, OnlyLastHolderGetsTrue) {
  Oracle o(3, 0);
  o.acquire(1);
  o.acquire(0);
  o.set(0, 1);
  EXPECT_FALSE(o.release(0));
  EXPECT_TRUE(o.release(1));
}

TEST(Oracle, ReleaseOfCurrentIsFalse) {
  Oracle o(2, 0);
  o.acquire(0);
  o.acquire(1);
  EXPECT_FALSE(o.release(0));
  EXPECT_FALSE(o.release(1));
}

TEST(Oracle, ProtocolViolationsThrow) {
  Oracle o(2, 0);
  EXPECT_THROW(o.release(0), ProtocolViolation);
  EXPECT_THROW(o.set(0, 1), ProtocolViolation);
  o.acquire(0);
  EXPECT_THROW(o.acquire(0), ProtocolViolation);
  o.acquire(1);
  o.set(0, 1);
  EXPECT_THROW(o.set(1, 2), ProtocolViolation);  // 1 holds a superseded version
  EXPECT_THROW(o.acquire(5), ProtocolViolation);
}

TEST(Oracle, SecondWriterRejectedWhileFirstInFlight) {
  Oracle o(2, 0);
  o.acquire(0);
  o.set(0, 1);
  o.acquire(1);  // holds the new current version
  EXPECT_THROW(o.set(1, 2), ProtocolViolation);
  o.release(0);
  EXPECT_NO_THROW(o.set(1, 2));
}

TEST(Oracle, ApplyDispatchesEveryKind) {
  Oracle o(1, 3);
  auto a = swvm::oracle_apply(o, swvm::OracleOp<int>{OracleAcquire{0}});
  EXPECT_EQ(std::get<int>(a), 3);
  auto s = swvm::oracle_apply(o, swvm::OracleOp<int>{OracleSet<int>{0, 4}});
  EXPECT_TRUE(std::holds_alternative<std::monostate>(s));
  auto r = swvm::oracle_apply(o, swvm::OracleOp<int>{OracleRelease{0}});
  EXPECT_TRUE(std::get<bool>(r));
  EXPECT_EQ(o.current_data(), 4);
}

// Random legal schedules: live versions never exceed P+1, every superseded
// version gets exactly one true release, and slot indices stay below P+2.
TEST(Oracle, RandomSchedulesKeepInvariants) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const std::size_t P = 1 + seed % 6;
    Oracle o(P, 0);
    std::mt19937_64 rng(seed);
    std::vector<std::optional<swvm::VersionId>> held(P);
    std::map<swvm::VersionId, int> true_releases;
    std::vector<swvm::VersionId> superseded;
    for (int step = 0; step < 2000; ++step) {
      const std::size_t k = rng() % P;
      if (!held[k]) {
        o.acquire(k);
        held[k] = o.held_by(k);
      } else if (*held[k] == o.current() && (!o.writer() || *o.writer() == k) && rng() % 2) {
        superseded.push_back(o.current());
        o.set(k, step);
      } else {
        if (o.release(k)) ++true_releases[*held[k]];
        held[k].reset();
      }
      ASSERT_LE(o.live_count(), P + 1);
      for (auto v : o.live_versions()) ASSERT_LT(v.index, P + 2);
    }
    for (std::size_t k = 0; k < P; ++k)
      if (held[k] && o.release(k)) ++true_releases[*held[k]];
    for (auto v : superseded) EXPECT_EQ(true_releases[v], 1) << "seed " << seed;
    EXPECT_EQ(true_releases.count(o.current()), 0u);
    EXPECT_EQ(o.live_count(), 1u);
  }
}
