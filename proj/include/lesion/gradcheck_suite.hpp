#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lesion {

struct CheckOutcome {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  std::size_t draws = 0;
  std::string worst;        // where the largest error occurred
  std::size_t redraws = 0;  // model draws skipped as below the roundoff floor
  bool passed() const { return max_relative_error < tolerance; }
};

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

/// Names accepted by check_op, one per differentiable op.
const std::vector<std::string>& gradcheck_op_names();

/// grad_check of a randomly weighted sum of the op's output over `draws`
/// random inputs in [-2,2] (shapes up to 4x4x4), kept away from relu kinks and
/// max ties.
CheckOutcome check_op(const std::string& op, std::uint64_t seed, std::size_t draws = 20);
std::vector<CheckOutcome> check_all_ops(std::uint64_t seed, std::size_t draws = 20);

/// grad_check of the cross-entropy loss of a freshly initialized tiny model
/// (image 8; ViT: P=4, D=8, L=1, h=2; CNN: widths 4,8; K=3) over every
/// parameter, one model, image and label per draw. Zero-initialized biases and
/// shifts get random values. A draw with a nonzero gradient component smaller
/// than eps_mach*max(1,|loss|)/(eps*tolerance) is redrawn and counted.
CheckOutcome check_model(const std::string& variant, std::uint64_t seed, std::size_t draws = 10);

}  // namespace lesion
