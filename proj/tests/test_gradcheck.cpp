#include <gtest/gtest.h>

#include "lesion/gradcheck_suite.hpp"
#include "lesion/models.hpp"
#include "lesion/tensor.hpp"
#include "test_util.hpp"

using namespace lesion;

TEST(GradCheckSuite, EveryOpWithinTolerance) {
  for (const CheckOutcome& c : check_all_ops(0, 20)) {
    EXPECT_EQ(c.draws, 20u);
    EXPECT_LT(c.max_relative_error, 1e-5) << c.name << " at " << c.worst;
  }
}

TEST(GradCheckSuite, CoversEveryTapeOp) {
  const auto& names = gradcheck_op_names();
  for (const char* op : {"add", "sub", "mul", "scale", "matmul", "reshape", "permute", "concat", "gather", "sum",
                         "sum_axis", "conv2d", "conv1d", "global_avg_pool", "global_max_pool", "channel_avg_pool",
                         "channel_max_pool", "avg_pool2", "sigmoid", "relu", "gelu", "softmax", "layer_norm",
                         "dropout", "cross_entropy"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), op), names.end()) << op;
  }
}

TEST(GradCheckSuite, VitCbamTinyModel) {
  CheckOutcome c = check_model("vit-cbam", 0, 10);
  EXPECT_LT(c.max_relative_error, 1e-4) << c.worst;
}

TEST(GradCheckSuite, OtherVariantsTinyModel) {
  for (const std::string& variant : model_variants()) {
    if (variant == "vit-cbam") continue;
    CheckOutcome c = check_model(variant, 0, 3);
    EXPECT_LT(c.max_relative_error, 1e-4) << variant << " at " << c.worst;
  }
}

TEST(GradCheckSuite, CorruptedBackwardIsCaught) {
  for (const char* op : {"sigmoid", "matmul", "softmax", "conv2d", "layer_norm", "global_max_pool"}) {
    lesion::testing::ScopedBackwardFault fault(op);
    EXPECT_FALSE(check_op(op, 0, 3).passed()) << op;
  }
  lesion::testing::ScopedBackwardFault fault("conv2d");
  EXPECT_FALSE(check_model("vit-cbam", 0, 1).passed());
}

TEST(GradCheckSuite, UnknownOpRejected) {
  EXPECT_EQ(lesion::test::error_kind([] { check_op("tanh", 0, 1); }), ErrorKind::InvalidConfig);
}
