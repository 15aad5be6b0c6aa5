#include "stonefuse/vtt.hpp"

#include <cmath>
#include <stdexcept>

namespace stonefuse {

const std::array<std::string, 8> kStoneLocations = {
    "left_ureter", "right_ureter", "ureter",  "left_kidney",
    "right_kidney", "kidney",      "bladder", "urethra",
};

std::size_t ModelConfig::token_count() const {
    const std::size_t g = volume_side / patch_side;
    return g * g * g;
}

std::size_t ModelConfig::decoder_stages() const {
    std::size_t stages = 0;
    std::size_t p = patch_side;
    while (p > 1) {
        p /= 2;
        ++stages;
    }
    return stages;
}

void ModelConfig::validate() const {
    if (volume_side == 0 || patch_side == 0 || embed_dim == 0 || encoder_layers == 0 || heads == 0) {
        throw std::invalid_argument("config: zero-valued architecture field");
    }
    if (volume_side % patch_side != 0) {
        throw std::invalid_argument("config: volume_side " + std::to_string(volume_side) +
                                    " not divisible by patch_side " + std::to_string(patch_side));
    }
    if ((patch_side & (patch_side - 1)) != 0) {
        throw std::invalid_argument("config: patch_side must be a power of 2 for the decoder");
    }
    if (embed_dim % heads != 0) {
        throw std::invalid_argument("config: embed_dim " + std::to_string(embed_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        if (tap_indices[i] < 1 || tap_indices[i] > encoder_layers) {
            throw std::invalid_argument("config: tap index out of [1, layers]");
        }
        if (i > 0 && tap_indices[i] <= tap_indices[i - 1]) {
            throw std::invalid_argument("config: tap indices must be strictly ascending");
        }
    }
    if (tap_indices[3] != encoder_layers) {
        throw std::invalid_argument("config: last tap must be the final encoder layer");
    }
    const std::size_t stages = decoder_stages();
    if (stages == 0) throw std::invalid_argument("config: patch_side must be >= 2");
    if (decoder_channels.size() != stages) {
        throw std::invalid_argument("config: decoder_channels needs " + std::to_string(stages) +
                                    " entries (log2 of patch_side), got " +
                                    std::to_string(decoder_channels.size()));
    }
    for (std::size_t i = 0; i < decoder_channels.size(); ++i) {
        if (decoder_channels[i] == 0) throw std::invalid_argument("config: zero decoder channel");
        if (i > 0 && decoder_channels[i] > decoder_channels[i - 1]) {
            throw std::invalid_argument("config: decoder_channels must be non-increasing");
        }
    }
    if (stages > 1 && stages - 1 > 3) {
        throw std::invalid_argument("config: more decoder stages than available encoder taps");
    }
    if (ehr_token_count != 7) {
        throw std::invalid_argument("config: ehr_token_count must be 7");
    }
}

void EhrRecord::validate() const {
    if (!(urine_ph >= 4.0 && urine_ph <= 9.0)) {
        throw std::invalid_argument("ehr: urine_ph outside [4, 9]");
    }
    if (blood_leukocyte < 0.0 || urine_leukocyte < 0.0 || serum_creatinine < 0.0) {
        throw std::invalid_argument("ehr: negative count or concentration");
    }
    if (stone_location >= kStoneLocations.size()) {
        throw std::invalid_argument("ehr: unknown stone location index");
    }
}

namespace {

std::array<double, 5> continuous_fields(const EhrRecord& r) {
    return {r.age, r.blood_leukocyte, r.serum_creatinine, r.urine_leukocyte, r.urine_ph};
}

}  // namespace

EhrStats compute_ehr_stats(const std::vector<EhrRecord>& records) {
    if (records.empty()) throw std::invalid_argument("ehr stats: no records");
    EhrStats s{};
    for (const EhrRecord& r : records) {
        const auto f = continuous_fields(r);
        for (std::size_t i = 0; i < 5; ++i) s.mean[i] += f[i];
    }
    const double n = static_cast<double>(records.size());
    for (double& m : s.mean) m /= n;
    for (const EhrRecord& r : records) {
        const auto f = continuous_fields(r);
        for (std::size_t i = 0; i < 5; ++i) {
            const double d = f[i] - s.mean[i];
            s.stddev[i] += d * d;
        }
    }
    for (std::size_t i = 0; i < 5; ++i) {
        s.stddev[i] = std::sqrt(s.stddev[i] / n);
        if (s.stddev[i] == 0.0) {
            throw std::invalid_argument("ehr stats: zero standard deviation in continuous field " +
                                        std::to_string(i));
        }
    }
    return s;
}

Tensor patchify(const Tensor& volume, std::size_t patch_side) {
    if (volume.rank() != 3 || volume.shape()[0] != volume.shape()[1] ||
        volume.shape()[1] != volume.shape()[2]) {
        throw std::invalid_argument("patchify: expected cubic volume, got " +
                                    shape_str(volume.shape()));
    }
    const std::size_t S = volume.shape()[0];
    const std::size_t P = patch_side;
    if (P == 0 || S % P != 0) {
        throw std::invalid_argument("patchify: side " + std::to_string(S) +
                                    " not divisible by patch side " + std::to_string(P));
    }
    const std::size_t G = S / P;
    const std::size_t N = G * G * G;
    const auto& v = volume.values();
    std::vector<double> out(N * P * P * P);
    std::size_t row = 0;
    for (std::size_t gz = 0; gz < G; ++gz)
        for (std::size_t gy = 0; gy < G; ++gy)
            for (std::size_t gx = 0; gx < G; ++gx, ++row) {
                double* dst = out.data() + row * P * P * P;
                for (std::size_t dz = 0; dz < P; ++dz)
                    for (std::size_t dy = 0; dy < P; ++dy)
                        for (std::size_t dx = 0; dx < P; ++dx) {
                            const std::size_t z = gz * P + dz, y = gy * P + dy, x = gx * P + dx;
                            dst[(dz * P + dy) * P + dx] = v[(z * S + y) * S + x];
                        }
            }
    return Tensor({N, P * P * P}, std::move(out));
}

Tensor unpatchify(const Tensor& patches, std::size_t volume_side, std::size_t patch_side) {
    const std::size_t S = volume_side, P = patch_side, G = S / P;
    if (patches.rank() != 2 || patches.shape()[0] != G * G * G || patches.shape()[1] != P * P * P) {
        throw std::invalid_argument("unpatchify: patches shape " + shape_str(patches.shape()) +
                                    " does not match sides");
    }
    const auto& v = patches.values();
    std::vector<double> out(S * S * S);
    std::size_t row = 0;
    for (std::size_t gz = 0; gz < G; ++gz)
        for (std::size_t gy = 0; gy < G; ++gy)
            for (std::size_t gx = 0; gx < G; ++gx, ++row) {
                const double* src = v.data() + row * P * P * P;
                for (std::size_t dz = 0; dz < P; ++dz)
                    for (std::size_t dy = 0; dy < P; ++dy)
                        for (std::size_t dx = 0; dx < P; ++dx) {
                            const std::size_t z = gz * P + dz, y = gy * P + dy, x = gx * P + dx;
                            out[(z * S + y) * S + x] = src[(dz * P + dy) * P + dx];
                        }
            }
    return Tensor({S, S, S}, std::move(out));
}

TokenSequence embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& pos) {
    Tensor tokens = add(matmul(patches, projection), pos);
    return TokenSequence{tokens, TokenKind::vision};
}

TokenSequence encode_ehr(const EhrRecord& record, const EhrStats& stats,
                         const EhrEmbeddings& embeddings) {
    record.validate();
    const auto f = continuous_fields(record);
    auto standardized = [&](std::size_t i) { return (f[i] - stats.mean[i]) / stats.stddev[i]; };

    auto continuous_token = [&](const Tensor& proj, std::size_t i) {
        return scale(proj, standardized(i));
    };
    auto onehot_token = [&](const Tensor& proj, std::size_t index, std::size_t cardinality) {
        std::vector<double> hot(cardinality, 0.0);
        hot[index] = 1.0;
        return matmul(Tensor({1, cardinality}, std::move(hot)), proj);
    };

    std::vector<Tensor> tokens;
    tokens.push_back(continuous_token(embeddings.age, 0));
    tokens.push_back(onehot_token(embeddings.gender, record.gender == Gender::male ? 0 : 1, 2));
    tokens.push_back(continuous_token(embeddings.blood_leukocyte, 1));
    tokens.push_back(continuous_token(embeddings.serum_creatinine, 2));
    tokens.push_back(continuous_token(embeddings.urine_leukocyte, 3));
    tokens.push_back(continuous_token(embeddings.urine_ph, 4));
    tokens.push_back(onehot_token(embeddings.stone_location, record.stone_location, 8));

    return TokenSequence{concat(tokens, 0), TokenKind::ehr};
}

}  // namespace stonefuse
