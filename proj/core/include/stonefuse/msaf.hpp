#pragma once

#include <vector>

#include "stonefuse/nn.hpp"
#include "stonefuse/tensor.hpp"
#include "stonefuse/vtt.hpp"

namespace stonefuse {

struct AttentionParams {
    LinearParams q, k, v, o;  // all [E, E] with [E] biases
    std::size_t heads = 1;
};

/// Per-head post-softmax attention weights, for inspection in tests.
struct AttentionTrace {
    std::vector<Tensor> head_weights;  // each [Nq, Nkv]
};

/// Multi-head scaled dot-product cross attention. Queries come from q_src,
/// keys and values from kv_src; heads are column slices of width E/heads,
/// concatenated and output-projected. Output is [|q_src|, E].
Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src, const AttentionParams& params,
                       AttentionTrace* trace = nullptr);

struct FusionStageParams {
    AttentionParams attn;
    Tensor ln_gain, ln_bias;   // [E]
    LinearParams concat_proj;  // [2E, E]; only used by the concatenation ablation
};

struct FusionState {
    Tensor cefr;         // [N, E]
    Tensor msfr;         // [N, E]
    Tensor class_logit;  // scalar
};

/// Clinical-attention fusion: vision tokens query the seven clinical tokens,
/// followed by a residual add of the vision tokens and a layer norm.
Tensor cea(const TokenSequence& vision, const TokenSequence& ehr, const FusionStageParams& params);

/// Segmentation-attention fusion: segmentation tokens query the fused
/// representation, followed by a residual add and a layer norm.
Tensor sma(const TokenSequence& seg, const Tensor& cefr, const FusionStageParams& params);

/// Ablation alternative to either attention stage: each query row is
/// concatenated with a context row and linearly projected back to width E.
/// For the first stage the context is the mean-pooled clinical token; for the
/// second it is the per-row fused representation.
Tensor concat_fuse(const Tensor& q_rows, const Tensor& context, const LinearParams& proj);

struct HeadParams {
    LinearParams fc;  // [E, 1]
};

/// Mean-pool over tokens, project to one logit, squash. Returns p in (0, 1).
Tensor classify(const Tensor& tokens, const HeadParams& head);

}  // namespace stonefuse
