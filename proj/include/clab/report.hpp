#pragma once

// Evaluation tables over test slices: per-slice MAE / rMAE / SSIM, the
// stddev-vs-error correlations for generative ensembles, and the
// percentile-threshold segmentation scores. Everything is computed in the
// pairs' normalized units; SSIM additionally divides both images by the
// maximum of the pre-contrast stack so that its data range is 1.

#include <string>
#include <vector>

#include "clab/dataset.hpp"
#include "clab/metrics.hpp"

namespace clab::report {

struct SliceScore {
    std::string model;
    std::size_t volume = 0;
    std::size_t slice = 0;
    double mae = 0.0;
    double rmae = 0.0;
    double ssim = 0.0;
};

struct Summary {
    std::string model;
    std::size_t slices = 0;
    double mae = 0.0;
    double rmae = 0.0;
    double ssim = 0.0;
};

struct UncertaintyRow {
    std::string model;
    std::string error;  // "abs" or "rel"
    metrics::Correlation corr;
};

struct SegmentationRow {
    std::string model;
    int threshold = 0;
    double dice = 0.0;
    double jaccard = 0.0;
};

// One model's prediction of the post-contrast central slice for each pair,
// in normalized units.
struct Predictions {
    std::string model;
    std::vector<Tensor> post;    // [H,W] each
    std::vector<Tensor> stddev;  // empty for deterministic models
};

// "pre" predictions: the pre-contrast central slice itself.
Predictions pre_contrast(const std::vector<SlicePair> &pairs);

// pre-central + difference for each pair.
Predictions from_differences(std::string model, const std::vector<SlicePair> &pairs, const std::vector<Tensor> &diffs,
                             std::vector<Tensor> stddev = {});

std::vector<SliceScore> score_slices(const std::vector<SlicePair> &pairs, const Predictions &pred);
Summary summarize(const std::vector<SliceScore> &scores);

// Pools all voxels of all slices. The relative-error variant skips voxels
// where pre == post.
UncertaintyRow uncertainty(const std::vector<SlicePair> &pairs, const Predictions &pred, bool relative);

// Mean Dice and Jaccard over slices of the top-p% segmentation of
// |pred - pre| against that of |post - pre| inside the ROI, p = thresholds.
std::vector<SegmentationRow> segmentation(const std::vector<SlicePair> &pairs, const Predictions &pred,
                                          const std::vector<int> &thresholds);

// Ground-truth segmentations of paired slices in two modalities against
// each other (same phantoms, same slice order).
std::vector<SegmentationRow> cross_modality(const std::vector<SlicePair> &a, const std::vector<SlicePair> &b,
                                            const std::vector<int> &thresholds);

std::string csv(const std::vector<SliceScore> &rows);
std::string csv(const std::vector<Summary> &rows);
std::string csv(const std::vector<UncertaintyRow> &rows);
std::string csv(const std::vector<SegmentationRow> &rows);

// Nine significant digits (%.9g), used in every report.
std::string fmt(double v);

}  // namespace clab::report
