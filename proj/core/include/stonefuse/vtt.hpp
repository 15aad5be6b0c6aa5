#pragma once

#include <array>
#include <string>
#include <vector>

#include "stonefuse/tensor.hpp"

namespace stonefuse {

/// Architecture hyperparameters. validate() enforces the divisibility and
/// tap-ordering rules; every consumer assumes a validated config.
struct ModelConfig {
    std::size_t volume_side = 16;   // cube side fed to the model
    std::size_t patch_side = 4;     // P; must divide volume_side, power of 2
    std::size_t embed_dim = 48;     // E; divisible by heads
    std::size_t encoder_layers = 8; // L
    std::array<std::size_t, 4> tap_indices{2, 4, 6, 8};  // 1-based, ascending, last == L
    std::size_t heads = 4;
    std::vector<std::size_t> decoder_channels{12, 6};  // one per upsampling stage, descending
    std::size_t ehr_token_count = 7;

    std::size_t token_count() const;  // volume_side^3 / patch_side^3
    std::size_t grid_side() const { return volume_side / patch_side; }
    std::size_t decoder_stages() const;  // log2(patch_side)
    void validate() const;
};

enum class Gender { male, female };

/// The eight anatomical sites a stone can occupy.
extern const std::array<std::string, 8> kStoneLocations;

struct EhrRecord {
    double age = 0.0;
    Gender gender = Gender::male;
    double blood_leukocyte = 0.0;   // 10^9 / L
    double serum_creatinine = 0.0;  // umol / L
    double urine_leukocyte = 0.0;   // per uL
    double urine_ph = 7.0;          // in [4, 9]
    std::size_t stone_location = 0; // index into kStoneLocations

    void validate() const;
};

/// Training-split standardization statistics for the five continuous fields,
/// in record order: age, blood_leukocyte, serum_creatinine, urine_leukocyte,
/// urine_ph. Construction fails on a zero standard deviation.
struct EhrStats {
    std::array<double, 5> mean{};
    std::array<double, 5> stddev{};
};

EhrStats compute_ehr_stats(const std::vector<EhrRecord>& records);

enum class TokenKind { vision, ehr, segmentation };

struct TokenSequence {
    Tensor tokens;  // [count, E]
    TokenKind kind = TokenKind::vision;

    std::size_t count() const { return tokens.shape()[0]; }
    std::size_t width() const { return tokens.shape()[1]; }
};

/// Per-feature projection matrices for the clinical record:
/// [1,E] for each continuous field, [2,E] for gender, [8,E] for location.
struct EhrEmbeddings {
    Tensor age;               // [1, E]
    Tensor gender;            // [2, E]
    Tensor blood_leukocyte;   // [1, E]
    Tensor serum_creatinine;  // [1, E]
    Tensor urine_leukocyte;   // [1, E]
    Tensor urine_ph;          // [1, E]
    Tensor stone_location;    // [8, E]
};

/// Cuts a cubic volume [S,S,S] into N = (S/P)^3 flattened patches [N, P^3].
/// Rows follow lexicographic patch-grid order; within a row, voxels follow
/// lexicographic order too, so unpatchify is an exact inverse.
Tensor patchify(const Tensor& volume, std::size_t patch_side);
Tensor unpatchify(const Tensor& patches, std::size_t volume_side, std::size_t patch_side);

/// tokens = patches * projection + pos.
TokenSequence embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& pos);

/// Seven tokens, one per clinical variable: standardized continuous values
/// scale their projection row; categorical values select a row one-hot.
TokenSequence encode_ehr(const EhrRecord& record, const EhrStats& stats,
                         const EhrEmbeddings& embeddings);

}  // namespace stonefuse
