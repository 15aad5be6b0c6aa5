#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "stonefuse/mask.hpp"

namespace stonefuse {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

struct ClassificationMetrics {
    ConfusionCounts counts;
    double acc = 0.0;
    double f1 = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

/// Per-fold evaluation results. Segmentation fields are meaningful only when
/// has_segmentation is set; hd95 is NaN when undefined for every sample
/// (e.g. a predicted mask was empty on all of them).
struct MetricsReport {
    double acc = 0.0, f1 = 0.0, recall = 0.0, precision = 0.0, auc = 0.0;
    bool has_segmentation = false;
    double dice = 0.0, iou = 0.0, hd95 = 0.0;
};

/// Thresholded confusion counts plus derived metrics. A probability counts as
/// a positive prediction when strictly above the threshold. Precision, recall
/// and F1 are 0 when their denominator is 0.
ClassificationMetrics classification_metrics(const std::vector<double>& probs,
                                             const std::vector<int>& labels,
                                             double threshold = 0.5);

/// AUC as the Mann-Whitney statistic: (concordant + 0.5*tied) / (P*N).
/// Requires at least one positive and one negative label.
double roc_auc(const std::vector<double>& probs, const std::vector<int>& labels);

/// (dice, iou) overlap of two equal-shape binary masks; (1, 1) when both are
/// empty by convention.
std::pair<double, double> dice_iou(const BinaryMask& pred, const BinaryMask& truth);

/// 95th percentile of the pooled bidirectional surface distances, scaled by
/// the isotropic voxel spacing. Surface voxels are mask voxels with at least
/// one six-connected background neighbor; the volume border counts as
/// background. The percentile interpolates linearly between order statistics.
/// Throws if either mask is empty, naming the offending side.
double hd95(const BinaryMask& pred, const BinaryMask& truth, double spacing_mm = 1.0);

}  // namespace stonefuse
