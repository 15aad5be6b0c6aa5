#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stonefuse/mask.hpp"
#include "stonefuse/tensor.hpp"
#include "stonefuse/vtt.hpp"

namespace stonefuse {

/// Everything the generator needs; identical configs produce byte-identical
/// datasets on any IEEE-754 platform (the generator avoids transcendental
/// libm calls entirely).
struct GeneratorConfig {
    std::size_t sample_count = 200;
    std::size_t volume_side = 24;
    double class_balance = 0.5;     // fraction of infectious (label 1) cases
    double signal_strength = 0.9;   // 0 = classes indistinguishable, 1 = max separation
    std::uint64_t seed = 1;
    std::size_t min_volume = 30;    // minimum stone voxels; smaller stones are resampled

    void validate() const;
};

struct PatientSample {
    std::string sample_id;
    Tensor volume;    // [S,S,S], synthetic-HU units
    BinaryMask mask;  // stone voxels
    EhrRecord ehr;
    int label = 0;  // 1 = infectious
};

/// Deterministic procedural cohort: soft-tissue noise plus one ellipsoidal
/// stone per volume. Non-infectious stones get a dense uniform interior,
/// infectious ones a dimmer laminated interior; the clinical record is drawn
/// class-conditionally. All class separation scales with signal_strength.
std::vector<PatientSample> generate_dataset(const GeneratorConfig& config);

/// Clamp to [lo, hi] then map linearly onto [0, 1].
Tensor window_normalize(const Tensor& volume, double lo = -400.0, double hi = 2000.0);

/// Cube of the given side centered on the mask centroid, clamped to stay
/// inside the volume; both channels are cropped identically.
std::pair<Tensor, BinaryMask> crop_stone_cube(const Tensor& volume, const BinaryMask& mask,
                                              std::size_t side);

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Stratified k-fold partition of sample indices: shuffled per class, dealt
/// round-robin, so per-fold class counts differ by at most one.
std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, std::size_t k,
                                        std::uint64_t seed);

/// On-disk layout: manifest.json plus volume_<id>.f32raw / mask_<id>.u8raw.
void save_dataset(const std::vector<PatientSample>& samples, const GeneratorConfig& config,
                  const std::filesystem::path& dir);

struct LoadedDataset {
    GeneratorConfig config;
    std::vector<PatientSample> samples;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace stonefuse
