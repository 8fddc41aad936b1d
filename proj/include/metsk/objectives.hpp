#pragma once

#include <span>

#include "metsk/autodiff.hpp"

namespace metsk {

// u.v / (|u| |v|); zero-norm inputs are rejected.
double cosine_sim(const Tensor& u, const Tensor& v);
Var cosine_sim(Var u, Var v);

/// Graph contrastive loss over N subjects with two views each (rows of
/// view1, view2: [N, E]):
///   (1/N) sum_n -log( exp(s(n,n)/tau) / sum_{m != n} exp(s(n,m)/tau) ),
/// s(n,m) = cosine(view1_n, view2_m). The positive pair is not part of the
/// denominator, so the loss can be negative.
Var contrastive_loss(Var view1, Var view2, double tau);
double contrastive_loss(const Tensor& view1, const Tensor& view2, double tau);

// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);
double cross_entropy(const Tensor& logits, std::span<const int> labels);

// L_S + lambda * L_T
Var meta_loss(Var source_loss, Var target_loss, double lambda);
double meta_loss(double source_loss, double target_loss, double lambda);

}  // namespace metsk
