#pragma once

// Posterior ensembles: N generated difference images for one condition,
// reduced to a per-voxel mean (the prediction) and population standard
// deviation (the uncertainty map).

#include <string>
#include <vector>

#include "clab/dataset.hpp"
#include "clab/tensor.hpp"

namespace clab {

struct PosteriorEnsemble {
    Tensor samples;  // [N,H,W]
    Tensor mean;     // [H,W]
    Tensor stddev;   // [H,W]
    std::string model;
    std::string condition;

    std::size_t size() const { return samples.dim(0); }
};

namespace posterior {

// samples [N,H,W] (or [N,1,H,W]), N >= 2.
PosteriorEnsemble aggregate(const Tensor &samples, std::string model = {}, std::string condition = {});
PosteriorEnsemble aggregate(const std::vector<Tensor> &samples, std::string model = {}, std::string condition = {});

// Post-contrast estimate from a predicted difference in the pair's units:
// pre-central + diff, mapped back to scanner units when the pair is normalized.
Tensor reconstruct(const SlicePair &pair, const Tensor &diff);

}  // namespace posterior

}  // namespace clab
