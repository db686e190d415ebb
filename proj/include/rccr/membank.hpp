#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "rccr/core.hpp"

namespace rccr {

struct BankEntry {
  std::vector<double> embedding;  // detached copy
  Label category = kIgnore;
  long stamp = 0;

  bool operator==(const BankEntry&) const = default;
};

struct BankSlab {
  long stamp = 0;
  std::vector<BankEntry> entries;
};

// FIFO store of the last `depth` batches of categorized negatives.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int depth, int capacity, bool normalized = true)
      : depth_(depth), capacity_(capacity), normalized_(normalized) {
    require(depth >= 0 && capacity >= 0, "memory bank: depth and capacity must be >= 0");
  }

  int depth() const { return depth_; }
  int capacity() const { return capacity_; }
  bool enabled() const { return depth_ > 0; }
  const std::deque<BankSlab>& slabs() const { return slabs_; }
  long last_stamp() const { return last_stamp_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& s : slabs_) n += s.entries.size();
    return n;
  }

  // Appends one slab (uniformly subsampled to `capacity`) and evicts the
  // oldest slab past `depth`.
  void push_batch(std::vector<BankEntry> entries, long stamp, RngHandle& rng) {
    ++call_counts().bank_push;
    if (has_stamp_ && stamp <= last_stamp_)
      throw Error("memory bank: stamps must be strictly increasing (got " + std::to_string(stamp) +
                  " after " + std::to_string(last_stamp_) + ")");
    has_stamp_ = true;
    last_stamp_ = stamp;
    if (depth_ == 0) return;
    for (auto& e : entries) {
      for (double v : e.embedding)
        require(std::isfinite(v), "memory bank: non-finite embedding");
      if (normalized_) {
        double n2 = 0.0;
        for (double v : e.embedding) n2 += v * v;
        require(std::abs(std::sqrt(n2) - 1.0) <= 1e-5, "memory bank: embedding is not unit norm");
      }
      e.stamp = stamp;
    }
    if (entries.size() > static_cast<std::size_t>(capacity_)) {
      std::vector<BankEntry> kept;
      kept.reserve(capacity_);
      std::sample(std::make_move_iterator(entries.begin()), std::make_move_iterator(entries.end()),
                  std::back_inserter(kept), capacity_, rng.engine());
      entries = std::move(kept);
    }
    slabs_.push_back({stamp, std::move(entries)});
    while (slabs_.size() > static_cast<std::size_t>(depth_)) slabs_.pop_front();
  }

  // All retained entries oldest-first; same-category entries dropped when
  // `category_filter` is set.
  std::vector<BankEntry> snapshot_negatives(Label anchor_category, bool category_filter) const {
    ++call_counts().bank_snapshot;
    std::vector<BankEntry> out;
    for (const auto& s : slabs_)
      for (const auto& e : s.entries)
        if (!category_filter || e.category != anchor_category) out.push_back(e);
    return out;
  }

  std::vector<BankEntry> all_entries() const { return snapshot_negatives(kIgnore, false); }

  // Checkpoint restore.
  void restore(std::deque<BankSlab> slabs, bool has_stamp, long last_stamp) {
    slabs_ = std::move(slabs);
    has_stamp_ = has_stamp;
    last_stamp_ = last_stamp;
  }
  bool has_stamp() const { return has_stamp_; }

 private:
  int depth_ = 0;
  int capacity_ = 0;
  bool normalized_ = true;
  std::deque<BankSlab> slabs_;
  bool has_stamp_ = false;
  long last_stamp_ = 0;
};

}  // namespace rccr
