#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

namespace tbad {

/// logits: (K, D, H, W) or (N, K, D, H, W). target: integer classes with the
/// logits' shape minus the class axis. All sums run over batch and space.
struct LossInputs {
  torch::Tensor logits;
  torch::Tensor target;
  /// K weights; scales per-class Dice terms and CE voxels. For gdl they
  /// replace the inverse-squared-volume weights.
  std::optional<torch::Tensor> class_weights;
  double epsilon = 1e-5;
  /// When false, class 0 is left out of the Dice and GDL class sums.
  bool include_background = true;
};

enum class LossKind { dcel, gdl };

std::string to_string(LossKind k);
LossKind loss_kind_from(const std::string& s);

torch::Tensor dice_loss(const LossInputs& in);
torch::Tensor cross_entropy_loss(const LossInputs& in);
torch::Tensor dcel(const LossInputs& in);
torch::Tensor gdl(const LossInputs& in);

torch::Tensor compute_loss(LossKind kind, const LossInputs& in);

}  // namespace tbad
