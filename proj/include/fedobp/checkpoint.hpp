#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>

#include "fedobp/model.hpp"

namespace fedobp {

// Resumable server snapshot: round, global model and every stored local model.
struct Checkpoint {
  std::uint64_t round = 0;
  ParamVector global_model;
  std::map<int, ParamVector> stored_locals;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "FOBPCKPT", u32 version, u32 reserved, u64 round, u64 n_params,
// u64 n_clients, f64 global[n_params], then per client u64 id + f64[n_params].
// All integers and floats little-endian.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is, const LayoutPtr& layout);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, const LayoutPtr& layout);

}  // namespace fedobp
