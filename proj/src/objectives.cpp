#include "metsk/objectives.hpp"

#include <cmath>
#include <string>

namespace metsk {

Var cosine_sim(Var u, Var v) {
  if (u.shape().size() != 1 || u.shape() != v.shape()) {
    throw ValidationError("cosine_sim: expected two vectors of equal length, got " + shape_string(u.shape()) +
                          " and " + shape_string(v.shape()));
  }
  return sum(mul(normalize_rows(u), normalize_rows(v)));
}

double cosine_sim(const Tensor& u, const Tensor& v) {
  Tape t;
  return cosine_sim(t.constant(u), t.constant(v)).value().item();
}

Var contrastive_loss(Var view1, Var view2, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("contrastive_loss: temperature must be positive");
  if (view1.shape().size() != 2 || view1.shape() != view2.shape()) {
    throw ValidationError("contrastive_loss: views must be [N, E] of equal shape, got " +
                          shape_string(view1.shape()) + " and " + shape_string(view2.shape()));
  }
  const std::size_t n = view1.shape()[0];
  if (n < 2) throw ValidationError("contrastive_loss: needs at least 2 subjects, got " + std::to_string(n));
  Var sim = scale(matmul_nt(normalize_rows(view1), normalize_rows(view2)), 1.0 / tau);
  Tensor others({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) others[i * n + i] = 0.0;
  return mean(sub(logsumexp_rows(sim, others), diagonal(sim)));
}

double contrastive_loss(const Tensor& view1, const Tensor& view2, double tau) {
  Tape t;
  return contrastive_loss(t.constant(view1), t.constant(view2), tau).value().item();
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size() || labels.empty()) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                          shape_string(logits.shape()));
  }
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= logits.shape()[1])
      throw ValidationError("cross_entropy: label " + std::to_string(l) + " out of range");
  return scale(mean(gather_rows(log_softmax_rows(logits), labels)), -1.0);
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  Tape t;
  return cross_entropy(t.constant(logits), labels).value().item();
}

Var meta_loss(Var source_loss, Var target_loss, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("meta_loss: lambda must be nonnegative");
  return add(source_loss, scale(target_loss, lambda));
}

double meta_loss(double source_loss, double target_loss, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("meta_loss: lambda must be nonnegative");
  return source_loss + lambda * target_loss;
}

}  // namespace metsk
