#include "fedobp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fedobp {

void Dataset::validate() const {
  if (images.rank() != 4) throw std::invalid_argument("dataset: images must be (N, C, H, W)");
  if (images.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset: image count does not match label count");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("dataset: label out of range");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset: pixel outside [0, 1]");
  }
}

std::size_t PartitionPlan::total_assigned() const {
  std::size_t n = 0;
  for (const ClientDataset& c : clients) n += c.train_indices.size() + c.test_indices.size();
  return n;
}

namespace {

// Integer apportionment of `total` items by real-valued quotas summing to
// `total`: floors first, then +1 to the largest fractional parts (ties to the
// lowest position).
std::vector<std::size_t> largest_remainder(std::span<const double> quotas, std::size_t total) {
  std::vector<std::size_t> counts(quotas.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(quotas[i]));
    assigned += counts[i];
  }
  // Floors of quotas that sum to `total` can overshoot only through rounding
  // noise; trim from the smallest remainders in that case.
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a] - std::floor(quotas[a]) > quotas[b] - std::floor(quotas[b]);
  });
  for (std::size_t j = 0; assigned < total; j = (j + 1) % order.size()) {
    ++counts[order[j]];
    ++assigned;
  }
  for (std::size_t j = order.size(); assigned > total;) {
    j = (j == 0 ? order.size() : j) - 1;
    if (counts[order[j]] > 0) {
      --counts[order[j]];
      --assigned;
    }
  }
  return counts;
}

std::map<int, std::vector<std::size_t>> by_class(const Dataset& dataset,
                                                 std::span<const std::size_t> indices) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i : indices) groups[dataset.labels.at(i)].push_back(i);
  return groups;
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off) {
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

void write_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(bytes, 4);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct IdxPayload {
  std::vector<std::size_t> dims;
  std::size_t offset = 0;
};

IdxPayload parse_idx_header(const std::vector<unsigned char>& buf, std::uint32_t magic,
                            const std::filesystem::path& path) {
  if (buf.size() < 4) throw std::runtime_error("idx: truncated header in " + path.string());
  const std::uint32_t got = read_be32(buf, 0);
  if (got != magic) {
    std::ostringstream msg;
    msg << "idx: bad magic number 0x" << std::hex << std::setw(8) << std::setfill('0') << got
        << " in " << path.string();
    throw std::runtime_error(msg.str());
  }
  const std::size_t ndim = got & 0xffu;
  IdxPayload p;
  p.offset = 4 + 4 * ndim;
  if (buf.size() < p.offset) throw std::runtime_error("idx: truncated header in " + path.string());
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    p.dims.push_back(read_be32(buf, 4 + 4 * d));
    count *= p.dims.back();
  }
  if (buf.size() - p.offset < count) {
    throw std::runtime_error("idx: truncated payload in " + path.string());
  }
  return p;
}

}  // namespace

PartitionPlan dirichlet_partition(const Dataset& dataset, std::size_t n_clients, double alpha,
                                  RngSeed seed, std::size_t min_per_client) {
  if (n_clients == 0) throw std::invalid_argument("partition: n_clients must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("partition: alpha must be positive");
  }
  min_per_client = std::max<std::size_t>(min_per_client, 1);
  if (dataset.size() < n_clients * min_per_client) {
    throw std::invalid_argument("partition: dataset has fewer samples than clients require");
  }

  Engine eng = make_engine(seed, StreamTag::kPartition);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<std::vector<std::size_t>> assigned(n_clients);

  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  for (auto& [label, members] : by_class(dataset, all)) {
    std::vector<double> p(n_clients);
    double sum = 0.0;
    for (double& v : p) {
      v = gamma(eng);
      sum += v;
    }
    if (!(sum > 0.0)) {
      // Every gamma draw underflowed; fall back to uniform proportions.
      std::fill(p.begin(), p.end(), 1.0);
      sum = static_cast<double>(n_clients);
    }
    const auto n_c = static_cast<double>(members.size());
    for (double& v : p) v = v / sum * n_c;
    const std::vector<std::size_t> counts = largest_remainder(p, members.size());

    std::shuffle(members.begin(), members.end(), eng);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_clients; ++i) {
      assigned[i].insert(assigned[i].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                         members.begin() + static_cast<std::ptrdiff_t>(pos + counts[i]));
      pos += counts[i];
    }
  }
  for (auto& a : assigned) std::sort(a.begin(), a.end());

  // Repair under-filled clients from the current largest client.
  for (std::size_t i = 0; i < n_clients; ++i) {
    while (assigned[i].size() < min_per_client) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < n_clients; ++j) {
        if (assigned[j].size() > assigned[donor].size()) donor = j;
      }
      const std::size_t moved = assigned[donor].back();
      assigned[donor].pop_back();
      assigned[i].insert(std::upper_bound(assigned[i].begin(), assigned[i].end(), moved), moved);
    }
  }

  PartitionPlan plan;
  plan.alpha = alpha;
  plan.seed = seed;
  for (std::size_t i = 0; i < n_clients; ++i) {
    plan.clients.push_back({static_cast<int>(i), std::move(assigned[i]), {}});
  }
  return plan;
}

PartitionPlan split_train_test(const PartitionPlan& plan, const Dataset& dataset,
                               double test_fraction, RngSeed seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test_fraction must be in (0, 1)");
  }
  PartitionPlan out;
  out.alpha = plan.alpha;
  out.seed = plan.seed;
  for (const ClientDataset& c : plan.clients) {
    std::vector<std::size_t> pool = c.train_indices;
    pool.insert(pool.end(), c.test_indices.begin(), c.test_indices.end());
    std::sort(pool.begin(), pool.end());
    const std::size_t n = pool.size();
    if (n < 2) {
      throw std::invalid_argument("split: client " + std::to_string(c.client_id) +
                                  " has fewer than 2 samples");
    }
    const auto target = static_cast<std::size_t>(std::clamp<long long>(
        std::llround(test_fraction * static_cast<double>(n)), 1, static_cast<long long>(n) - 1));

    auto groups = by_class(dataset, pool);
    std::vector<double> quotas;
    for (const auto& [label, members] : groups) {
      quotas.push_back(static_cast<double>(target) * static_cast<double>(members.size()) /
                       static_cast<double>(n));
    }
    const std::vector<std::size_t> counts = largest_remainder(quotas, target);

    Engine eng = make_engine(seed, StreamTag::kSplit, static_cast<std::uint64_t>(c.client_id));
    ClientDataset split{c.client_id, {}, {}};
    std::size_t g = 0;
    for (auto& [label, members] : groups) {
      std::shuffle(members.begin(), members.end(), eng);
      split.test_indices.insert(split.test_indices.end(), members.begin(),
                                members.begin() + static_cast<std::ptrdiff_t>(counts[g]));
      split.train_indices.insert(split.train_indices.end(),
                                 members.begin() + static_cast<std::ptrdiff_t>(counts[g]),
                                 members.end());
      ++g;
    }
    std::sort(split.train_indices.begin(), split.train_indices.end());
    std::sort(split.test_indices.begin(), split.test_indices.end());
    out.clients.push_back(std::move(split));
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const std::vector<unsigned char> ibuf = read_file(images_path);
  const std::vector<unsigned char> lbuf = read_file(labels_path);

  // Accept 3-d (N, H, W) and 4-d (N, C, H, W) unsigned-byte image files.
  const bool four_d = ibuf.size() >= 4 && read_be32(ibuf, 0) == 0x00000804u;
  const IdxPayload img =
      parse_idx_header(ibuf, four_d ? 0x00000804u : 0x00000803u, images_path);
  const IdxPayload lab = parse_idx_header(lbuf, 0x00000801u, labels_path);

  const std::size_t n = img.dims[0];
  if (lab.dims[0] != n) {
    throw std::runtime_error("idx: label count " + std::to_string(lab.dims[0]) +
                             " does not match image count " + std::to_string(n));
  }
  const std::size_t c = img.dims.size() == 4 ? img.dims[1] : 1;
  const std::size_t h = img.dims[img.dims.size() - 2];
  const std::size_t w = img.dims[img.dims.size() - 1];

  Dataset ds;
  std::vector<double> pixels(n * c * h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(ibuf[img.offset + i]) / 255.0;
  }
  ds.images = Tensor({n, c, h, w}, std::move(pixels));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lbuf[lab.offset + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return ds;
}

void save_idx(const Dataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("idx: cannot open output files");
  const bool mono = dataset.channels() == 1;
  write_be32(img, mono ? 0x00000803u : 0x00000804u);
  write_be32(img, static_cast<std::uint32_t>(dataset.size()));
  if (!mono) write_be32(img, static_cast<std::uint32_t>(dataset.channels()));
  write_be32(img, static_cast<std::uint32_t>(dataset.height()));
  write_be32(img, static_cast<std::uint32_t>(dataset.width()));
  for (double v : dataset.images.data()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  write_be32(lab, 0x00000801u);
  write_be32(lab, static_cast<std::uint32_t>(dataset.size()));
  for (int y : dataset.labels) {
    if (y < 0 || y > 255) throw std::invalid_argument("idx: label does not fit in a byte");
    lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  }
}

Dataset synth_dataset(std::size_t num_classes, std::size_t per_class, std::size_t channels,
                      std::size_t height, std::size_t width, double noise_sigma, RngSeed seed) {
  if (num_classes < 2) throw std::invalid_argument("synth: num_classes must be >= 2");
  if (per_class < 1) throw std::invalid_argument("synth: per_class must be >= 1");
  if (channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("synth: image dimensions must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");

  const std::size_t dim = channels * height * width;
  Engine tmpl_eng = make_engine(seed, StreamTag::kData, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> templates(num_classes * dim);
  for (double& v : templates) v = unif(tmpl_eng);

  Engine noise_eng = make_engine(seed, StreamTag::kData, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = num_classes * per_class;
  std::vector<double> pixels(n * dim);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.labels.resize(n);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t i = c * per_class + j;
      ds.labels[i] = static_cast<int>(c);
      for (std::size_t d = 0; d < dim; ++d) {
        const double eps = noise_sigma > 0.0 ? noise_sigma * noise(noise_eng) : 0.0;
        pixels[i * dim + d] = std::clamp(templates[c * dim + d] + eps, 0.0, 1.0);
      }
    }
  }
  ds.images = Tensor({n, channels, height, width}, std::move(pixels));
  return ds;
}

Tensor gather_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t dim = dataset.images.row_size();
  std::vector<double> data(indices.size() * dim);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto src = dataset.sample(indices[b]);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(b * dim));
  }
  return Tensor({indices.size(), dataset.channels(), dataset.height(), dataset.width()},
                std::move(data));
}

std::vector<int> gather_labels(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.labels.at(i));
  return out;
}

void write_partition_plan(std::ostream& os, const PartitionPlan& plan) {
  os << "# alpha=" << std::setprecision(17) << plan.alpha << " seed=" << plan.seed
     << " clients=" << plan.clients.size() << "\n";
  os << "client_id,split,index\n";
  for (const ClientDataset& c : plan.clients) {
    for (std::size_t i : c.train_indices) os << c.client_id << ",train," << i << "\n";
    for (std::size_t i : c.test_indices) os << c.client_id << ",test," << i << "\n";
  }
}

PartitionPlan read_partition_plan(std::istream& is) {
  PartitionPlan plan;
  std::map<int, ClientDataset> clients;
  std::size_t declared_clients = 0;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "alpha") plan.alpha = std::stod(val);
        if (key == "seed") plan.seed = std::stoull(val);
        if (key == "clients") declared_clients = std::stoull(val);
      }
      continue;
    }
    if (!header_seen) {
      if (line != "client_id,split,index") {
        throw std::runtime_error("plan: missing header line");
      }
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string id, split, index;
    if (!std::getline(row, id, ',') || !std::getline(row, split, ',') ||
        !std::getline(row, index)) {
      throw std::runtime_error("plan: malformed row at line " + std::to_string(line_no));
    }
    const int cid = std::stoi(id);
    ClientDataset& c = clients[cid];
    c.client_id = cid;
    if (split == "train") {
      c.train_indices.push_back(std::stoull(index));
    } else if (split == "test") {
      c.test_indices.push_back(std::stoull(index));
    } else {
      throw std::runtime_error("plan: unknown split '" + split + "' at line " +
                               std::to_string(line_no));
    }
  }
  for (std::size_t i = 0; i < declared_clients; ++i) {
    clients.try_emplace(static_cast<int>(i), ClientDataset{static_cast<int>(i), {}, {}});
  }
  for (auto& [id, c] : clients) plan.clients.push_back(std::move(c));
  return plan;
}

}  // namespace fedobp
