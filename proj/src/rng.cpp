#include "fedobp/rng.hpp"

namespace fedobp {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

RngSeed derive_seed(RngSeed base, StreamTag tag, std::uint64_t client_id,
                    std::uint64_t round) {
  std::uint64_t h = mix(base);
  h = mix(h ^ static_cast<std::uint64_t>(tag));
  h = mix(h ^ client_id);
  h = mix(h ^ round);
  return h;
}

}  // namespace fedobp
