#pragma once

#include <cstdint>
#include <random>

namespace fedobp {

using RngSeed = std::uint64_t;
using Engine = std::mt19937_64;

// Purpose tags for stream derivation. Values are part of the reproducibility
// contract: changing one changes every downstream result.
enum class StreamTag : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kSplit = 3,
  kInit = 4,
  kSampling = 5,
  kTraining = 6,
  kVerify = 7,
};

// Derives an independent seed from (base, tag, client_id, round) by chained
// splitmix64 finalization.
RngSeed derive_seed(RngSeed base, StreamTag tag, std::uint64_t client_id = 0,
                    std::uint64_t round = 0);

inline Engine make_engine(RngSeed seed) { return Engine(seed); }

inline Engine make_engine(RngSeed base, StreamTag tag, std::uint64_t client_id = 0,
                          std::uint64_t round = 0) {
  return Engine(derive_seed(base, tag, client_id, round));
}

}  // namespace fedobp
