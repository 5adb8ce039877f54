#include "fedobp/checkpoint.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <stdexcept>

#include "test_util.hpp"

namespace fedobp {
namespace {

Checkpoint sample_checkpoint() {
  const ModelSpec spec = testing::tiny_cnn();
  Checkpoint c;
  c.round = 17;
  c.global_model = testing::random_params(spec, 1);
  for (int id : {0, 3, 5}) c.stored_locals.emplace(id, testing::random_params(spec, 10u + id));
  return c;
}

TEST(Checkpoint, RoundTripsBitwise) {
  const Checkpoint c = sample_checkpoint();
  std::stringstream ss;
  write_checkpoint(ss, c);
  EXPECT_EQ(read_checkpoint(ss, c.global_model.layout()), c);
}

TEST(Checkpoint, HeaderIsLittleEndian) {
  const Checkpoint c = sample_checkpoint();
  std::stringstream ss;
  write_checkpoint(ss, c);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "FOBPCKPT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // version
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 17u);  // round
  const std::size_t n = c.global_model.size();
  EXPECT_EQ(bytes.size(), 40u + 8u * n + 3u * (8u + 8u * n));
}

TEST(Checkpoint, RejectsCorruption) {
  const Checkpoint c = sample_checkpoint();
  std::stringstream ss;
  write_checkpoint(ss, c);
  const std::string good = ss.str();

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_checkpoint(s1, c.global_model.layout()), std::runtime_error);

  std::string bad_version = good;
  bad_version[8] = 9;
  std::stringstream s2(bad_version);
  EXPECT_THROW(read_checkpoint(s2, c.global_model.layout()), std::runtime_error);

  std::stringstream s3(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_checkpoint(s3, c.global_model.layout()), std::runtime_error);

  std::stringstream s4(good);
  EXPECT_THROW(read_checkpoint(s4, testing::logistic(3, 2).make_layout()), std::runtime_error);
}

}  // namespace
}  // namespace fedobp
