#include <gtest/gtest.h>

#include <set>

#include "rccr/membank.hpp"
#include "rccr/selftest.hpp"

using namespace rccr;

namespace {

BankEntry unit_entry(RngHandle& rng, int k, Label cat) {
  auto g = selftest::random_unit_grid(rng, 1, 1, k);
  return {g.data, cat, 0};
}

std::vector<BankEntry> slab(RngHandle& rng, int n, int k = 4) {
  std::vector<BankEntry> out;
  for (int i = 0; i < n; ++i) out.push_back(unit_entry(rng, k, static_cast<Label>(i % 3)));
  return out;
}

std::vector<long> stamps(const MemoryBank& b) {
  std::vector<long> out;
  for (const auto& s : b.slabs()) out.push_back(s.stamp);
  return out;
}

}  // namespace

TEST(MemoryBank, FifoEvictsOldestSlab) {
  RngHandle rng(1, 0);
  MemoryBank bank(3, 256);
  for (long t = 1; t <= 4; ++t) bank.push_batch(slab(rng, 5), t, rng);
  EXPECT_EQ(stamps(bank), (std::vector<long>{2, 3, 4}));
  for (const auto& s : bank.slabs())
    for (const auto& e : s.entries) EXPECT_EQ(e.stamp, s.stamp);
}

TEST(MemoryBank, DepthZeroStaysEmpty) {
  RngHandle rng(2, 0);
  MemoryBank bank(0, 256);
  EXPECT_FALSE(bank.enabled());
  for (long t = 0; t < 5; ++t) bank.push_batch(slab(rng, 7), t, rng);
  EXPECT_EQ(bank.size(), 0u);
  EXPECT_TRUE(bank.snapshot_negatives(0, true).empty());
}

TEST(MemoryBank, SnapshotCardinality) {
  RngHandle rng(3, 0);
  MemoryBank bank(3, 256);
  bank.push_batch(slab(rng, 10), 0, rng);
  bank.push_batch(slab(rng, 20), 1, rng);
  bank.push_batch(slab(rng, 30), 2, rng);
  EXPECT_EQ(bank.snapshot_negatives(0, false).size(), 60u);
}

TEST(MemoryBank, EmptyBankGivesEmptySnapshot) {
  MemoryBank bank(3, 256);
  EXPECT_TRUE(bank.snapshot_negatives(1, false).empty());
  EXPECT_TRUE(bank.snapshot_negatives(1, true).empty());
}

TEST(MemoryBank, CategoryFilter) {
  RngHandle rng(4, 0);
  MemoryBank bank(3, 256);
  std::vector<BankEntry> entries;
  for (Label c : {1, 1, 2, 3}) entries.push_back(unit_entry(rng, 4, c));
  bank.push_batch(entries, 0, rng);
  auto kept = bank.snapshot_negatives(1, true);
  ASSERT_EQ(kept.size(), 2u);
  for (const auto& e : kept) EXPECT_NE(e.category, 1);
  EXPECT_EQ(bank.snapshot_negatives(1, false).size(), 4u);
}

TEST(MemoryBank, NonMonotonicStampRaises) {
  RngHandle rng(5, 0);
  MemoryBank bank(3, 256);
  bank.push_batch(slab(rng, 2), 5, rng);
  EXPECT_THROW(bank.push_batch(slab(rng, 2), 5, rng), Error);
  EXPECT_THROW(bank.push_batch(slab(rng, 2), 4, rng), Error);
  EXPECT_NO_THROW(bank.push_batch(slab(rng, 2), 6, rng));
}

TEST(MemoryBank, RejectsInvalidEmbeddings) {
  RngHandle rng(6, 0);
  MemoryBank bank(3, 256);
  EXPECT_THROW(bank.push_batch({{{0.5, 0.5}, 0, 0}}, 0, rng), Error);
  EXPECT_THROW(bank.push_batch({{{std::nan(""), 1.0}, 0, 0}}, 1, rng), Error);
  MemoryBank raw(3, 256, false);
  EXPECT_NO_THROW(raw.push_batch({{{0.5, 0.5}, 0, 0}}, 0, rng));
}

TEST(MemoryBank, CapacitySubsamplesWithoutDuplicates) {
  RngHandle rng(7, 0);
  MemoryBank bank(2, 8);
  auto entries = slab(rng, 50);
  bank.push_batch(entries, 0, rng);
  ASSERT_EQ(bank.size(), 8u);
  std::set<std::vector<double>> seen;
  for (const auto& e : bank.all_entries()) {
    bool found = false;
    for (const auto& src : entries) found |= src.embedding == e.embedding && src.category == e.category;
    EXPECT_TRUE(found);
    seen.insert(e.embedding);
  }
  EXPECT_EQ(seen.size(), 8u);
}

// Properties over random push sequences.

TEST(MemoryBankProperty, RetentionWindowAndBoundedness) {
  RngHandle rng(8, 0);
  for (int trial = 0; trial < 200; ++trial) {
    int depth = rng.uniform_int(0, 5), capacity = rng.uniform_int(1, 12), pushes = rng.uniform_int(0, 12);
    MemoryBank bank(depth, capacity);
    long stamp = rng.uniform_int(-5, 5);
    std::vector<long> pushed;
    for (int i = 0; i < pushes; ++i) {
      stamp += rng.uniform_int(1, 3);
      bank.push_batch(slab(rng, rng.uniform_int(0, 20), 3), stamp, rng);
      pushed.push_back(stamp);
    }
    std::size_t keep = std::min<std::size_t>(depth, pushed.size());
    std::vector<long> expected(pushed.end() - keep, pushed.end());
    ASSERT_EQ(stamps(bank), expected);
    ASSERT_LE(bank.size(), static_cast<std::size_t>(depth) * capacity);
  }
}

TEST(MemoryBankProperty, StoredEmbeddingsAreIsolatedCopies) {
  RngHandle rng(9, 0);
  MemoryBank bank(3, 256);
  auto entries = slab(rng, 6);
  auto original = entries;
  bank.push_batch(entries, 0, rng);
  for (auto& e : entries) std::fill(e.embedding.begin(), e.embedding.end(), 9.0);
  auto snap = bank.snapshot_negatives(0, false);
  for (auto& e : snap) e.embedding[0] = -3.0;
  auto again = bank.all_entries();
  ASSERT_EQ(again.size(), original.size());
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i].embedding, original[i].embedding);
}

TEST(MemoryBankProperty, SnapshotIsReadOnly) {
  RngHandle rng(10, 0);
  MemoryBank bank(2, 256);
  bank.push_batch(slab(rng, 4), 0, rng);
  bank.push_batch(slab(rng, 4), 1, rng);
  auto before = stamps(bank);
  for (int i = 0; i < 5; ++i) (void)bank.snapshot_negatives(static_cast<Label>(i % 3), i % 2 == 0);
  EXPECT_EQ(stamps(bank), before);
  EXPECT_EQ(bank.size(), 8u);
}
