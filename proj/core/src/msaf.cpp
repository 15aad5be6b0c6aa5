#include "stonefuse/msaf.hpp"

#include <cmath>
#include <stdexcept>

namespace stonefuse {

Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src, const AttentionParams& params,
                       AttentionTrace* trace) {
    if (q_src.rank() != 2 || kv_src.rank() != 2 || q_src.shape()[1] != kv_src.shape()[1]) {
        throw std::invalid_argument("cross_attention: token widths differ, " +
                                    shape_str(q_src.shape()) + " vs " + shape_str(kv_src.shape()));
    }
    const std::size_t width = q_src.shape()[1];
    if (params.heads == 0 || width % params.heads != 0) {
        throw std::invalid_argument("cross_attention: width not divisible by head count");
    }
    const std::size_t dk = width / params.heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor q = linear(q_src, params.q);
    Tensor k = linear(kv_src, params.k);
    Tensor v = linear(kv_src, params.v);

    std::vector<Tensor> heads;
    heads.reserve(params.heads);
    for (std::size_t h = 0; h < params.heads; ++h) {
        Tensor qh = slice(q, 1, h * dk, (h + 1) * dk);
        Tensor kh = slice(k, 1, h * dk, (h + 1) * dk);
        Tensor vh = slice(v, 1, h * dk, (h + 1) * dk);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
        Tensor weights = softmax(scores, 1);
        if (trace) trace->head_weights.push_back(weights);
        heads.push_back(matmul(weights, vh));
    }
    return linear(concat(heads, 1), params.o);
}

Tensor cea(const TokenSequence& vision, const TokenSequence& ehr, const FusionStageParams& params) {
    if (ehr.count() != 7) {
        throw std::invalid_argument("cea: expected 7 clinical tokens, got " +
                                    std::to_string(ehr.count()));
    }
    Tensor fused = cross_attention(vision.tokens, ehr.tokens, params.attn);
    return layer_norm(add(vision.tokens, fused), params.ln_gain, params.ln_bias);
}

Tensor sma(const TokenSequence& seg, const Tensor& cefr, const FusionStageParams& params) {
    Tensor fused = cross_attention(seg.tokens, cefr, params.attn);
    return layer_norm(add(seg.tokens, fused), params.ln_gain, params.ln_bias);
}

Tensor concat_fuse(const Tensor& q_rows, const Tensor& context, const LinearParams& proj) {
    Tensor ctx = context;
    if (ctx.rank() == 1) {
        // broadcast one context row to every query row
        ctx = add(Tensor::zeros(q_rows.shape()), reshape(ctx, {1, ctx.size()}));
    }
    if (ctx.shape() != q_rows.shape()) {
        throw std::invalid_argument("concat_fuse: context shape " + shape_str(ctx.shape()) +
                                    " does not match queries " + shape_str(q_rows.shape()));
    }
    return linear(concat({q_rows, ctx}, 1), proj);
}

Tensor classify(const Tensor& tokens, const HeadParams& head) {
    if (tokens.rank() != 2) throw std::invalid_argument("classify: expected [N, E] tokens");
    Tensor pooled = reshape(mean(tokens, 0), {1, tokens.shape()[1]});
    Tensor logit = linear(pooled, head.fc);
    return sigmoid(reshape(logit, {}));
}

}  // namespace stonefuse
