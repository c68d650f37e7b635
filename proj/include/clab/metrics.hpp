#pragma once

// Evaluation metrics for enhancement predictions. All functions work on flat
// row-major fields of equal length; masks are 0/1 valued (nonzero = set).
// Accumulation is in double.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clab::metrics {

class MetricError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Mean |pred - target| over all voxels, or over the mask when given.
double mae(std::span<const float> pred, std::span<const float> target);
double mae(std::span<const float> pred, std::span<const float> target, std::span<const float> mask);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

// Mean of the local SSIM map over all window positions fully inside the
// image, with a normalized Gaussian window.
double ssim(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width,
            const SsimOptions &opt = {});

struct Correlation {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

// Pearson correlation over voxels where skip is zero (skip may be empty).
// Two-sided p-value from Student's t with n - 2 degrees of freedom.
Correlation pearson(std::span<const float> u, std::span<const float> v, std::span<const float> skip = {});

// Two-sided p-value of a sample correlation r over n points.
double pearson_p_value(double r, std::size_t n);

struct RelativeError {
    std::vector<float> value;  // 0 on skipped voxels
    std::vector<float> skip;   // 1 where pre == post
};

// |mean - post| / |pre - post|, skipping voxels where pre == post.
RelativeError relative_error(std::span<const float> mean, std::span<const float> post, std::span<const float> pre);

// Selects the k = round(p/100 * |ROI|) ROI voxels with the largest
// |field|; ties go to the earlier voxel in raster order. p in (0, 30].
std::vector<float> threshold_segment(std::span<const float> field, std::span<const float> roi, double percent);

struct Overlap {
    double dice = 0.0;
    double jaccard = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
};

// Dice and Jaccard; two empty masks score 1.
Overlap dice_jaccard(std::span<const float> pred, std::span<const float> truth);

}  // namespace clab::metrics
