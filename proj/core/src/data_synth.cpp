#include "stonefuse/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "stonefuse/io.hpp"
#include "stonefuse/rng.hpp"

namespace stonefuse {

void GeneratorConfig::validate() const {
    if (sample_count == 0) throw std::invalid_argument("generator: sample_count must be > 0");
    if (volume_side < 16) throw std::invalid_argument("generator: volume_side must be >= 16");
    if (!(class_balance >= 0.0 && class_balance <= 1.0)) {
        throw std::invalid_argument("generator: class_balance outside [0, 1]");
    }
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
        throw std::invalid_argument("generator: signal_strength outside [0, 1]");
    }
    if (min_volume == 0) throw std::invalid_argument("generator: min_volume must be > 0");
}

namespace {

constexpr double kHuMin = -1000.0;
constexpr double kHuMax = 2000.0;
constexpr int kStoneRetries = 200;

struct Ellipsoid {
    double cz, cy, cx;
    double rz, ry, rx;

    // normalized radius of a voxel center; <= 1 means inside
    double norm_radius(std::size_t z, std::size_t y, std::size_t x) const {
        const double dz = (static_cast<double>(z) - cz) / rz;
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};

// Triangle wave in [-1, 1] with the given number of periods over [0, 1];
// pure arithmetic so it is bit-stable across platforms.
double lamination(double r, double periods) {
    const double t = r * periods - std::floor(r * periods);
    return 2.0 * (1.0 - 2.0 * std::abs(t - 0.5)) - 1.0;
}

PatientSample generate_sample(const GeneratorConfig& cfg, std::size_t index) {
    PatientSample s;
    {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%05zu", index);
        s.sample_id = buf;
    }
    rng::Engine eng(rng::derive_seed(cfg.seed, s.sample_id));
    const std::size_t S = cfg.volume_side;
    const double sig = cfg.signal_strength;

    s.label = eng.uniform() < cfg.class_balance ? 1 : 0;

    // geometry, resampled until the stone is big enough
    Ellipsoid e{};
    std::size_t stone_voxels = 0;
    const double margin = 6.0;
    int attempt = 0;
    for (; attempt < kStoneRetries; ++attempt) {
        e.cz = eng.uniform(margin, static_cast<double>(S) - 1.0 - margin);
        e.cy = eng.uniform(margin, static_cast<double>(S) - 1.0 - margin);
        e.cx = eng.uniform(margin, static_cast<double>(S) - 1.0 - margin);
        e.rz = eng.uniform(2.4, 4.6);
        e.ry = eng.uniform(2.4, 4.6);
        e.rx = eng.uniform(2.4, 4.6);
        stone_voxels = 0;
        for (std::size_t z = 0; z < S; ++z)
            for (std::size_t y = 0; y < S; ++y)
                for (std::size_t x = 0; x < S; ++x) stone_voxels += e.norm_radius(z, y, x) <= 1.0;
        if (stone_voxels >= cfg.min_volume) break;
    }
    if (attempt == kStoneRetries) {
        throw std::runtime_error("generator: exceeded stone resampling retry limit for " +
                                 s.sample_id);
    }

    // per-stone intensity jitter, then one noise draw per voxel
    const double jitter = eng.uniform(-50.0, 50.0);
    const double infectious_base = 1000.0 - 420.0 * sig;
    const double lam_amp = 260.0 * sig;

    s.mask = BinaryMask({S, S, S});
    std::vector<double> vol(S * S * S);
    std::size_t i = 0;
    for (std::size_t z = 0; z < S; ++z) {
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x, ++i) {
                const double noise = eng.normal();
                const double r = e.norm_radius(z, y, x);
                double v;
                if (r <= 1.0) {
                    s.mask.voxels[i] = 1;
                    if (s.label == 1) {
                        v = infectious_base + jitter + lam_amp * lamination(r, 3.0) + 40.0 * noise;
                    } else {
                        v = 1000.0 + jitter + 40.0 * noise;
                    }
                } else {
                    v = 40.0 + 12.0 * noise;
                }
                vol[i] = std::min(std::max(v, kHuMin), kHuMax);
            }
        }
    }
    s.volume = Tensor({S, S, S}, std::move(vol));

    // class-conditional clinical record; every shift scales with the signal
    auto clamp = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
    const double shift = sig * static_cast<double>(s.label);
    s.ehr.age = clamp(eng.normal(48.0, 14.0), 18.0, 90.0);
    s.ehr.gender = eng.bernoulli(0.6) ? Gender::male : Gender::female;
    s.ehr.blood_leukocyte = std::max(0.0, eng.normal(7.0 + 2.5 * shift, 1.6));
    s.ehr.serum_creatinine = std::max(0.0, eng.normal(85.0, 20.0));
    s.ehr.urine_leukocyte = std::max(0.0, eng.normal(30.0 + 70.0 * shift, 30.0));
    s.ehr.urine_ph = clamp(eng.normal(5.9 + 1.4 * shift, 0.45), 4.0, 9.0);
    s.ehr.stone_location = static_cast<std::size_t>(eng.below(8));
    return s;
}

}  // namespace

std::vector<PatientSample> generate_dataset(const GeneratorConfig& config) {
    config.validate();
    std::vector<PatientSample> out;
    out.reserve(config.sample_count);
    for (std::size_t i = 0; i < config.sample_count; ++i) {
        out.push_back(generate_sample(config, i));
    }
    return out;
}

Tensor window_normalize(const Tensor& volume, double lo, double hi) {
    if (lo >= hi) throw std::invalid_argument("window_normalize: lo >= hi");
    const double range = hi - lo;
    std::vector<double> out(volume.size());
    const auto& v = volume.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = (std::min(std::max(v[i], lo), hi) - lo) / range;
    }
    return Tensor(volume.shape(), std::move(out));
}

std::pair<Tensor, BinaryMask> crop_stone_cube(const Tensor& volume, const BinaryMask& mask,
                                              std::size_t side) {
    if (volume.rank() != 3) throw std::invalid_argument("crop: volume must be rank 3");
    const std::array<std::size_t, 3> dims{volume.shape()[0], volume.shape()[1], volume.shape()[2]};
    if (mask.dims != dims) throw std::invalid_argument("crop: volume/mask shape mismatch");
    for (std::size_t d : dims) {
        if (side > d) throw std::invalid_argument("crop: side exceeds volume extent");
    }
    if (mask.empty_mask()) throw std::invalid_argument("crop: empty mask");

    double cz = 0, cy = 0, cx = 0;
    std::size_t n = 0;
    for (std::size_t z = 0; z < dims[0]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[2]; ++x)
                if (mask.at(z, y, x)) {
                    cz += double(z);
                    cy += double(y);
                    cx += double(x);
                    ++n;
                }
    cz /= double(n);
    cy /= double(n);
    cx /= double(n);

    auto start = [&](double c, std::size_t extent) {
        long s = static_cast<long>(std::floor(c + 0.5)) - static_cast<long>(side) / 2;
        s = std::max(s, 0L);
        s = std::min(s, static_cast<long>(extent - side));
        return static_cast<std::size_t>(s);
    };
    const std::size_t z0 = start(cz, dims[0]), y0 = start(cy, dims[1]), x0 = start(cx, dims[2]);

    std::vector<double> vout(side * side * side);
    BinaryMask mout({side, side, side});
    const auto& v = volume.values();
    for (std::size_t z = 0; z < side; ++z)
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                const std::size_t src = ((z0 + z) * dims[1] + (y0 + y)) * dims[2] + (x0 + x);
                vout[(z * side + y) * side + x] = v[src];
                mout.at(z, y, x) = mask.voxels[src];
            }
    return {Tensor({side, side, side}, std::move(vout)), std::move(mout)};
}

std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, std::size_t k,
                                        std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("kfold: k must be >= 1");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
    if (pos.size() < k || neg.size() < k) {
        throw std::invalid_argument("kfold: every class needs at least k samples (have " +
                                    std::to_string(pos.size()) + " positive, " +
                                    std::to_string(neg.size()) + " negative, k=" +
                                    std::to_string(k) + ")");
    }
    rng::Engine eng(rng::derive_seed(seed, "stratified_kfold"));
    rng::shuffle(pos, eng);
    rng::shuffle(neg, eng);

    std::vector<FoldSplit> folds(k);
    auto deal = [&](const std::vector<std::size_t>& idx) {
        for (std::size_t j = 0; j < idx.size(); ++j) folds[j % k].val.push_back(idx[j]);
    };
    deal(pos);
    deal(neg);
    for (std::size_t f = 0; f < k; ++f) {
        std::sort(folds[f].val.begin(), folds[f].val.end());
        std::vector<bool> in_val(labels.size(), false);
        for (std::size_t i : folds[f].val) in_val[i] = true;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (!in_val[i]) folds[f].train.push_back(i);
    }
    return folds;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

namespace {

nlohmann::json ehr_to_json(const EhrRecord& r) {
    return {
        {"age", r.age},
        {"gender", r.gender == Gender::male ? "male" : "female"},
        {"blood_leukocyte", r.blood_leukocyte},
        {"serum_creatinine", r.serum_creatinine},
        {"urine_leukocyte", r.urine_leukocyte},
        {"urine_ph", r.urine_ph},
        {"stone_location", kStoneLocations[r.stone_location]},
    };
}

EhrRecord ehr_from_json(const nlohmann::json& j) {
    EhrRecord r;
    r.age = j.at("age").get<double>();
    const std::string g = j.at("gender").get<std::string>();
    if (g == "male") r.gender = Gender::male;
    else if (g == "female") r.gender = Gender::female;
    else throw std::invalid_argument("dataset: unknown gender value '" + g + "'");
    r.blood_leukocyte = j.at("blood_leukocyte").get<double>();
    r.serum_creatinine = j.at("serum_creatinine").get<double>();
    r.urine_leukocyte = j.at("urine_leukocyte").get<double>();
    r.urine_ph = j.at("urine_ph").get<double>();
    const std::string loc = j.at("stone_location").get<std::string>();
    const auto it = std::find(kStoneLocations.begin(), kStoneLocations.end(), loc);
    if (it == kStoneLocations.end()) {
        throw std::invalid_argument("dataset: unknown stone location '" + loc + "'");
    }
    r.stone_location = static_cast<std::size_t>(it - kStoneLocations.begin());
    return r;
}

}  // namespace

void save_dataset(const std::vector<PatientSample>& samples, const GeneratorConfig& config,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "stonefuse-dataset-v1";
    manifest["generator"] = {
        {"sample_count", config.sample_count}, {"volume_side", config.volume_side},
        {"class_balance", config.class_balance}, {"signal_strength", config.signal_strength},
        {"seed", config.seed}, {"min_volume", config.min_volume},
    };
    manifest["volume_dtype"] = "f32le";
    manifest["mask_dtype"] = "u8";
    auto& list = manifest["samples"] = nlohmann::json::array();
    for (const PatientSample& s : samples) {
        const std::string vfile = "volume_" + s.sample_id + ".f32raw";
        const std::string mfile = "mask_" + s.sample_id + ".u8raw";
        io::write_f32raw(dir / vfile, s.volume.values());
        io::write_u8raw(dir / mfile, s.mask.voxels);
        list.push_back({
            {"id", s.sample_id},
            {"label", s.label},
            {"shape", s.volume.shape()},
            {"volume_file", vfile},
            {"mask_file", mfile},
            {"ehr", ehr_to_json(s.ehr)},
        });
    }
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
    const nlohmann::json manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (manifest.at("format").get<std::string>() != "stonefuse-dataset-v1") {
        throw std::runtime_error("dataset: unsupported manifest format");
    }
    LoadedDataset ds;
    const auto& g = manifest.at("generator");
    ds.config.sample_count = g.at("sample_count").get<std::size_t>();
    ds.config.volume_side = g.at("volume_side").get<std::size_t>();
    ds.config.class_balance = g.at("class_balance").get<double>();
    ds.config.signal_strength = g.at("signal_strength").get<double>();
    ds.config.seed = g.at("seed").get<std::uint64_t>();
    ds.config.min_volume = g.at("min_volume").get<std::size_t>();

    for (const auto& j : manifest.at("samples")) {
        PatientSample s;
        s.sample_id = j.at("id").get<std::string>();
        s.label = j.at("label").get<int>();
        const auto shape = j.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3) throw std::runtime_error("dataset: bad sample shape");
        const std::size_t count = shape[0] * shape[1] * shape[2];
        s.volume = Tensor({shape[0], shape[1], shape[2]},
                          io::read_f32raw(dir / j.at("volume_file").get<std::string>(), count));
        s.mask = BinaryMask({shape[0], shape[1], shape[2]});
        s.mask.voxels = io::read_u8raw(dir / j.at("mask_file").get<std::string>(), count);
        s.ehr = ehr_from_json(j.at("ehr"));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace stonefuse
