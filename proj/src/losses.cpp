#include "tbad/losses.hpp"

#include "tbad/error.hpp"

namespace tbad {

std::string to_string(LossKind k) { return k == LossKind::dcel ? "dcel" : "gdl"; }

LossKind loss_kind_from(const std::string& s) {
  if (s == "dcel") return LossKind::dcel;
  if (s == "gdl") return LossKind::gdl;
  fail(ErrorCode::config, "unknown loss '" + s + "'");
}

namespace {

struct Prepared {
  torch::Tensor logits;  // (N, K, ...)
  torch::Tensor target;  // (N, ...) int64
  std::int64_t classes;
};

Prepared prepare(const LossInputs& in) {
  require(in.logits.defined() && in.target.defined(), ErrorCode::contract, "loss inputs are undefined");
  require(in.epsilon > 0.0, ErrorCode::contract, "epsilon must be positive");
  torch::Tensor logits = in.logits;
  torch::Tensor target = in.target;
  if (logits.dim() == 4) {
    logits = logits.unsqueeze(0);
    target = target.unsqueeze(0);
  }
  require(logits.dim() == target.dim() + 1 && logits.dim() >= 3, ErrorCode::contract,
          "logits must have exactly one more axis than the target");
  require(logits.size(0) == target.size(0), ErrorCode::contract, "batch size mismatch between logits and target");
  for (std::int64_t d = 2; d < logits.dim(); ++d)
    require(logits.size(d) == target.size(d - 1), ErrorCode::contract, "spatial shape mismatch between logits and target");
  const auto k = logits.size(1);
  target = target.to(torch::kInt64);
  if (target.numel() > 0) {
    require(target.min().item<std::int64_t>() >= 0 && target.max().item<std::int64_t>() < k, ErrorCode::contract,
            "target values must lie in [0, K)");
  }
  if (in.class_weights) {
    require(in.class_weights->dim() == 1 && in.class_weights->size(0) == k, ErrorCode::contract,
            "class_weights must be a K-vector");
  }
  return {logits, target, k};
}

torch::Tensor one_hot(const Prepared& p) {
  // (N, ...) -> (N, K, ...)
  auto oh = torch::one_hot(p.target, p.classes).to(p.logits.dtype());
  std::vector<std::int64_t> perm{0, oh.dim() - 1};
  for (std::int64_t d = 1; d < oh.dim() - 1; ++d) perm.push_back(d);
  return oh.permute(perm);
}

std::vector<std::int64_t> reduce_dims(const torch::Tensor& t) {
  std::vector<std::int64_t> dims{0};
  for (std::int64_t d = 2; d < t.dim(); ++d) dims.push_back(d);
  return dims;
}

torch::Tensor class_slice(const torch::Tensor& per_class, bool include_background) {
  return include_background ? per_class : per_class.slice(0, 1);
}

}  // namespace

torch::Tensor dice_loss(const LossInputs& in) {
  const Prepared p = prepare(in);
  const auto probs = torch::softmax(p.logits, 1);
  const auto g = one_hot(p);
  const auto dims = reduce_dims(probs);
  const auto inter = (probs * g).sum(dims);
  const auto denom = probs.sum(dims) + g.sum(dims);
  auto per_class = class_slice((2.0 * inter + in.epsilon) / (denom + in.epsilon), in.include_background);
  if (in.class_weights) {
    auto w = class_slice(in.class_weights->to(per_class.dtype()), in.include_background);
    return 1.0 - (w * per_class).sum() / w.sum();
  }
  return 1.0 - per_class.mean();
}

torch::Tensor cross_entropy_loss(const LossInputs& in) {
  const Prepared p = prepare(in);
  const auto logp = torch::log_softmax(p.logits, 1);
  const auto picked = -logp.gather(1, p.target.unsqueeze(1)).squeeze(1);
  if (in.class_weights) {
    const auto w = in.class_weights->to(logp.dtype()).index_select(0, p.target.reshape({-1})).view_as(picked);
    return (w * picked).sum() / w.sum();
  }
  return picked.mean();
}

torch::Tensor dcel(const LossInputs& in) { return dice_loss(in) + cross_entropy_loss(in); }

torch::Tensor gdl(const LossInputs& in) {
  const Prepared p = prepare(in);
  const auto probs = torch::softmax(p.logits, 1);
  const auto g = one_hot(p);
  const auto dims = reduce_dims(probs);
  const auto volume = class_slice(g.sum(dims), in.include_background);
  const auto inter = class_slice((probs * g).sum(dims), in.include_background);
  const auto denom = class_slice(probs.sum(dims) + g.sum(dims), in.include_background);
  torch::Tensor w;
  if (in.class_weights) {
    w = class_slice(in.class_weights->to(probs.dtype()), in.include_background);
  } else {
    require((volume > 0).any().item<bool>(), ErrorCode::degenerate_target, "every class is absent from the target");
    w = torch::where(volume > 0, 1.0 / (volume * volume).clamp_min(1.0), torch::zeros_like(volume));
  }
  return 1.0 - 2.0 * (w * inter).sum() / (w * denom).sum();
}

torch::Tensor compute_loss(LossKind kind, const LossInputs& in) {
  return kind == LossKind::dcel ? dcel(in) : gdl(in);
}

}  // namespace tbad
