#include "fedobp/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedobp {
namespace {

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, ZeroInitialized) {
  Tensor t({2, 2});
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, RowsAreContiguous) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.row_size(), 3u);
  EXPECT_EQ(t.row(1)[0], 4.0);
  EXPECT_EQ(t.row(1)[2], 6.0);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, {1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  t.data()[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, ShapeProduct) {
  EXPECT_EQ(shape_product({2, 3, 4}), 24u);
}

}  // namespace
}  // namespace fedobp
