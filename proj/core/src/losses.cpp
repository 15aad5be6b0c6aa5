#include "stonefuse/losses.hpp"

#include <stdexcept>
#include <string>

namespace stonefuse {

namespace {

void require_same_shape(const Tensor& p, const Tensor& g, const char* op) {
    if (p.shape() != g.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(p.shape()) +
                                    " vs " + shape_str(g.shape()));
    }
}

constexpr double kProbClamp = 1e-7;

}  // namespace

Tensor dice_loss(const Tensor& p, const Tensor& g, double eps) {
    require_same_shape(p, g, "dice_loss");
    Tensor numer = scale(sum(mul(p, g)), 2.0);
    Tensor denom = add_scalar(add(sum(p), sum(g)), eps);
    return add_scalar(neg(div(numer, denom)), 1.0);
}

Tensor bce_loss(const Tensor& p, const Tensor& g) {
    require_same_shape(p, g, "bce_loss");
    Tensor pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
    Tensor pos = mul(g, log(pc));
    Tensor negv = mul(add_scalar(neg(g), 1.0), log(add_scalar(neg(pc), 1.0)));
    return neg(mean(add(pos, negv)));
}

Tensor focal_loss(const Tensor& p, const Tensor& g, double gamma, double alpha) {
    require_same_shape(p, g, "focal_loss");
    Tensor pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
    Tensor one_minus_p = add_scalar(neg(pc), 1.0);
    Tensor pos = scale(mul(mul(g, pow(one_minus_p, gamma)), log(pc)), alpha);
    Tensor negv = scale(mul(mul(add_scalar(neg(g), 1.0), pow(pc, gamma)), log(one_minus_p)),
                        1.0 - alpha);
    return neg(mean(add(pos, negv)));
}

Tensor total_loss(const Tensor& l_dice, const Tensor& l_bce, const Tensor& l_focal,
                  const LossWeights& w) {
    return add(add(scale(l_dice, w.w_dice), scale(l_bce, w.w_bce)), scale(l_focal, w.w_focal));
}

LossWeights update_weights(double s_dice, double lambda, double threshold, double gamma,
                           double alpha) {
    if (!(s_dice >= 0.0 && s_dice <= 1.0)) {
        throw std::invalid_argument("update_weights: dice score " + std::to_string(s_dice) +
                                    " outside [0, 1]");
    }
    LossWeights w;
    w.lambda = lambda;
    w.gamma = gamma;
    w.alpha = alpha;
    // Both branches share one closed form: above the threshold the score is
    // pinned to it.
    const double s = (s_dice <= threshold) ? s_dice : threshold;
    w.w_dice = 1.0 - s;
    w.w_bce = lambda * s;
    w.w_focal = s - w.w_bce;
    return w;
}

}  // namespace stonefuse
