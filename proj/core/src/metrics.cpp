#include "stonefuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace stonefuse {

ClassificationMetrics classification_metrics(const std::vector<double>& probs,
                                             const std::vector<int>& labels, double threshold) {
    if (probs.empty()) throw std::invalid_argument("classification_metrics: empty input");
    if (probs.size() != labels.size()) {
        throw std::invalid_argument("classification_metrics: length mismatch");
    }
    ClassificationMetrics m;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] > threshold;
        const bool pos = labels[i] != 0;
        if (pred && pos) ++m.counts.tp;
        else if (pred && !pos) ++m.counts.fp;
        else if (!pred && pos) ++m.counts.fn;
        else ++m.counts.tn;
    }
    const auto& c = m.counts;
    m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    m.precision = (c.tp + c.fp) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    m.recall = (c.tp + c.fn) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    m.f1 = (m.precision + m.recall > 0.0)
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

double roc_auc(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw std::invalid_argument("roc_auc: bad input lengths");
    }
    std::size_t pos = 0;
    for (int l : labels) pos += (l != 0);
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("roc_auc: needs at least one positive and one negative label");
    }
    // Rank-sum with average ranks for ties; equal to pair counting.
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && probs[order[j + 1]] == probs[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

std::pair<double, double> dice_iou(const BinaryMask& pred, const BinaryMask& truth) {
    if (pred.dims != truth.dims) throw std::invalid_argument("dice_iou: shape mismatch");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        const bool pa = pred.voxels[i] != 0;
        const bool pb = truth.voxels[i] != 0;
        a += pa;
        b += pb;
        inter += (pa && pb);
    }
    if (a == 0 && b == 0) return {1.0, 1.0};
    const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
    const double uni = static_cast<double>(a + b - inter);
    const double iou = static_cast<double>(inter) / uni;
    return {dice, iou};
}

namespace {

std::vector<std::array<std::size_t, 3>> surface_voxels(const BinaryMask& m) {
    std::vector<std::array<std::size_t, 3>> out;
    const auto [D, H, W] = m.dims;
    for (std::size_t z = 0; z < D; ++z) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                if (!m.at(z, y, x)) continue;
                const bool border = z == 0 || z + 1 == D || y == 0 || y + 1 == H || x == 0 ||
                                    x + 1 == W;
                if (border || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) ||
                    !m.at(z, y + 1, x) || !m.at(z, y, x - 1) || !m.at(z, y, x + 1)) {
                    out.push_back({z, y, x});
                }
            }
        }
    }
    return out;
}

constexpr double kEdtInf = 1e20;

// 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* out, std::size_t n, std::vector<int>& v,
            std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < static_cast<int>(n); ++q) {
        double s;
        while (true) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
        const int p = v[static_cast<std::size_t>(k)];
        const double d = q - p;
        out[q] = d * d + f[p];
    }
}

// Exact squared euclidean distance to the nearest seed voxel, for every voxel.
std::vector<double> edt_squared(const std::vector<std::array<std::size_t, 3>>& seeds,
                                std::array<std::size_t, 3> dims) {
    const auto [D, H, W] = dims;
    std::vector<double> dist(D * H * W, kEdtInf);
    for (const auto& s : seeds) dist[(s[0] * H + s[1]) * W + s[2]] = 0.0;

    std::vector<int> v;
    std::vector<double> z, f, g;
    const std::size_t maxn = std::max({D, H, W});
    f.resize(maxn);
    g.resize(maxn);

    // along x
    for (std::size_t zz = 0; zz < D; ++zz)
        for (std::size_t y = 0; y < H; ++y) {
            double* row = dist.data() + (zz * H + y) * W;
            edt_1d(row, g.data(), W, v, z);
            std::copy(g.begin(), g.begin() + static_cast<long>(W), row);
        }
    // along y
    for (std::size_t zz = 0; zz < D; ++zz)
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t y = 0; y < H; ++y) f[y] = dist[(zz * H + y) * W + x];
            edt_1d(f.data(), g.data(), H, v, z);
            for (std::size_t y = 0; y < H; ++y) dist[(zz * H + y) * W + x] = g[y];
        }
    // along z
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t zz = 0; zz < D; ++zz) f[zz] = dist[(zz * H + y) * W + x];
            edt_1d(f.data(), g.data(), D, v, z);
            for (std::size_t zz = 0; zz < D; ++zz) dist[(zz * H + y) * W + x] = g[zz];
        }
    return dist;
}

double percentile_linear(std::vector<double>& values, double q) {
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double h = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace

double hd95(const BinaryMask& pred, const BinaryMask& truth, double spacing_mm) {
    if (pred.dims != truth.dims) throw std::invalid_argument("hd95: shape mismatch");
    if (pred.empty_mask()) throw std::invalid_argument("hd95: predicted mask is empty");
    if (truth.empty_mask()) throw std::invalid_argument("hd95: truth mask is empty");

    const auto sp = surface_voxels(pred);
    const auto st = surface_voxels(truth);
    const auto dist_to_truth = edt_squared(st, pred.dims);
    const auto dist_to_pred = edt_squared(sp, pred.dims);

    const std::size_t H = pred.dims[1], W = pred.dims[2];
    std::vector<double> pooled;
    pooled.reserve(sp.size() + st.size());
    for (const auto& s : sp) pooled.push_back(std::sqrt(dist_to_truth[(s[0] * H + s[1]) * W + s[2]]));
    for (const auto& s : st) pooled.push_back(std::sqrt(dist_to_pred[(s[0] * H + s[1]) * W + s[2]]));
    return percentile_linear(pooled, 0.95) * spacing_mm;
}

}  // namespace stonefuse
