#pragma once
// Training batches of (premise, k candidate alternatives).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mico/ckg.hpp"
#include "mico/errors.hpp"

namespace mico {

using Rng = std::mt19937_64;

struct TrainExample {
  std::string premise;
  std::vector<std::string> candidates;  // exactly k, drawn from the group's alternatives
};

struct Batch {
  std::vector<TrainExample> examples;
  std::size_t size() const { return examples.size(); }
};

// Independent stream per epoch so that a run resumed at epoch e sees the same
// batches as an uninterrupted one.
inline Rng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x6d69636fu};
  return Rng(seq);
}

// Without replacement when the group has at least k alternatives; otherwise
// every alternative once, padded with uniform resamples up to k.
inline TrainExample sample_candidates(const PremiseGroup& group, int k, Rng& rng) {
  if (k < 1) throw ConfigError("k must be >= 1, got " + std::to_string(k));
  const auto& alts = group.alternatives;
  if (alts.empty()) throw InputError("premise group '" + group.premise + "' has no alternatives");
  const auto n = alts.size();
  const auto want = static_cast<std::size_t>(k);
  TrainExample ex{group.premise, {}};
  ex.candidates.reserve(want);
  if (n >= want) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // partial Fisher-Yates
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      ex.candidates.push_back(alts[idx[i]]);
    }
  } else {
    ex.candidates = alts;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (ex.candidates.size() < want) ex.candidates.push_back(alts[pick(rng)]);
  }
  return ex;
}

// One epoch: shuffle the groups, take one example per group, cut into full
// batches of `batch_size` and drop the short tail.
inline std::vector<Batch> make_batches(std::span<const PremiseGroup> groups, int batch_size, int k, Rng& rng) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2, got " + std::to_string(batch_size));
  if (k < 1) throw ConfigError("k must be >= 1, got " + std::to_string(k));
  {
    std::unordered_set<std::string_view> premises;
    for (const auto& g : groups)
      if (!premises.insert(g.premise).second)
        throw InputError("premise '" + g.premise + "' appears in more than one group");
  }
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const auto per_batch = static_cast<std::size_t>(batch_size);
  std::vector<Batch> batches;
  batches.reserve(groups.size() / per_batch);
  for (std::size_t start = 0; start + per_batch <= order.size(); start += per_batch) {
    Batch b;
    b.examples.reserve(per_batch);
    for (std::size_t i = start; i < start + per_batch; ++i) b.examples.push_back(sample_candidates(groups[order[i]], k, rng));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace mico
