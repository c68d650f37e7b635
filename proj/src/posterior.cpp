#include "clab/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clab::posterior {

PosteriorEnsemble aggregate(const Tensor &samples, std::string model, std::string condition) {
    Shape s = samples.shape();
    if (s.size() == 4 && s[1] == 1) s.erase(s.begin() + 1);
    if (s.size() != 3) throw ShapeError("aggregate: expected [N,H,W] samples, got " + shape_str(samples.shape()));
    const std::size_t n = s[0], plane = s[1] * s[2];
    if (n < 2) throw std::invalid_argument("aggregate: need at least 2 samples for a standard deviation, got " + std::to_string(n));

    PosteriorEnsemble e;
    e.samples = Tensor(s, std::vector<float>(samples.data().begin(), samples.data().end()));
    e.mean = Tensor({s[1], s[2]});
    e.stddev = Tensor({s[1], s[2]});
    e.model = std::move(model);
    e.condition = std::move(condition);
    // Values are sorted per voxel so the reduction is independent of sample order.
    std::vector<float> v(n);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t k = 0; k < n; ++k) v[k] = samples[k * plane + i];
        std::sort(v.begin(), v.end());
        double m = 0.0;
        for (float x : v) m += x;
        m /= static_cast<double>(n);
        double var = 0.0;
        for (float x : v) var += (x - m) * (x - m);
        e.mean[i] = std::clamp(static_cast<float>(m), v.front(), v.back());
        e.stddev[i] = static_cast<float>(std::sqrt(var / static_cast<double>(n)));
    }
    return e;
}

PosteriorEnsemble aggregate(const std::vector<Tensor> &samples, std::string model, std::string condition) {
    if (samples.empty()) throw std::invalid_argument("aggregate: no samples");
    const Shape s = samples.front().shape();
    std::vector<float> flat;
    for (const auto &t : samples) {
        if (t.shape() != s) throw ShapeError("aggregate: sample shapes differ: " + shape_str(s) + " vs " + shape_str(t.shape()));
        flat.insert(flat.end(), t.data().begin(), t.data().end());
    }
    Shape all{samples.size()};
    all.insert(all.end(), s.begin(), s.end());
    return aggregate(Tensor(all, std::move(flat)), std::move(model), std::move(condition));
}

Tensor reconstruct(const SlicePair &pair, const Tensor &diff) {
    Tensor pre = pair.pre_central();
    if (diff.size() != pre.size()) throw ShapeError("reconstruct: diff " + shape_str(diff.shape()) + " vs pre " + shape_str(pre.shape()));
    const float f = pair.normalized ? pair.norm_factor : 1.0f;
    Tensor out(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = (pre[i] + diff[i]) * f;
    return out;
}

}  // namespace clab::posterior
