#pragma once

#include "stonefuse/tensor.hpp"

namespace stonefuse {

/// Per-epoch loss weights. The scheduler keeps w_dice + w_bce + w_focal == 1
/// and w_bce / (w_bce + w_focal) == lambda.
struct LossWeights {
    double w_dice = 0.8;
    double w_bce = 0.02;
    double w_focal = 0.18;
    double lambda = 0.1;
    double gamma = 2.0;
    double alpha = 0.25;
};

/// 1 - 2*sum(p*g) / (sum(p) + sum(g) + eps), differentiable in p.
/// The eps smoothing keeps empty ground-truth masks finite.
Tensor dice_loss(const Tensor& p, const Tensor& g, double eps = 1e-7);

/// Mean binary cross entropy; probabilities are clamped to [1e-7, 1-1e-7].
Tensor bce_loss(const Tensor& p, const Tensor& g);

/// Balanced focal loss:
/// -(1/N) sum[ alpha*g*(1-p)^gamma*log(p) + (1-alpha)*(1-g)*p^gamma*log(1-p) ].
Tensor focal_loss(const Tensor& p, const Tensor& g, double gamma = 2.0, double alpha = 0.25);

/// w_dice*l_dice + w_bce*l_bce + w_focal*l_focal. By the LossWeights
/// invariants this equals the two-level form
/// w_dice*l_dice + w_class*(lambda*l_bce + (1-lambda)*l_focal).
Tensor total_loss(const Tensor& l_dice, const Tensor& l_bce, const Tensor& l_focal,
                  const LossWeights& w);

/// Dynamic weight adjustment driven by the validation Dice score:
///   s <= threshold: w_dice = 1-s,  w_bce = lambda*s,   w_focal = s - w_bce
///   s >  threshold: w_dice = 1-th, w_bce = lambda*th,  w_focal = th - w_bce
/// with threshold 0.8. gamma/alpha are carried through unchanged.
LossWeights update_weights(double s_dice, double lambda = 0.1, double threshold = 0.8,
                           double gamma = 2.0, double alpha = 0.25);

}  // namespace stonefuse
