#include "fedobp/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace fedobp {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'O', 'B', 'P', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& os, std::uint64_t v, int bytes = 8) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(buf, bytes);
}

std::uint64_t get_u64(std::istream& is, int bytes = 8) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_values(std::ostream& os, const ParamVector& p) {
  for (double x : p.values()) put_u64(os, std::bit_cast<std::uint64_t>(x));
}

ParamVector get_values(std::istream& is, const LayoutPtr& layout) {
  ParamVector p(layout);
  for (double& x : p.values()) x = std::bit_cast<double>(get_u64(is));
  return p;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const std::size_t n = ckpt.global_model.size();
  os.write(kMagic.data(), kMagic.size());
  put_u64(os, kCheckpointVersion, 4);
  put_u64(os, 0, 4);
  put_u64(os, ckpt.round);
  put_u64(os, n);
  put_u64(os, ckpt.stored_locals.size());
  put_values(os, ckpt.global_model);
  for (const auto& [id, p] : ckpt.stored_locals) {
    if (p.size() != n) throw std::invalid_argument("checkpoint: stored model size mismatch");
    put_u64(os, static_cast<std::uint64_t>(id));
    put_values(os, p);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& is, const LayoutPtr& layout) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = static_cast<std::uint32_t>(get_u64(is, 4));
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  get_u64(is, 4);
  Checkpoint ckpt;
  ckpt.round = get_u64(is);
  const std::uint64_t n = get_u64(is);
  if (n != layout->total_params()) {
    throw std::runtime_error("checkpoint: parameter count " + std::to_string(n) +
                             " does not match model (" +
                             std::to_string(layout->total_params()) + ")");
  }
  const std::uint64_t clients = get_u64(is);
  ckpt.global_model = get_values(is, layout);
  for (std::uint64_t c = 0; c < clients; ++c) {
    const auto id = static_cast<int>(get_u64(is));
    if (!ckpt.stored_locals.emplace(id, get_values(is, layout)).second) {
      throw std::runtime_error("checkpoint: duplicate client " + std::to_string(id));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint: trailing bytes");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const LayoutPtr& layout) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(is, layout);
}

}  // namespace fedobp
