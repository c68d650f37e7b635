#include "clab/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace clab {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto &p : params_) {
        m_.emplace_back(p.size(), 0.0f);
        v_.emplace_back(p.size(), 0.0f);
    }
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) {
            throw std::logic_error("adam: parameter " + std::to_string(i) + " " + shape_str(params_[i].shape()) +
                                   " has no gradient");
        }
    }
    ++step_;
    double clip = 1.0;
    if (config_.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (const auto &p : params_)
            for (float g : p.grad()) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].data();
        auto g = params_[i].grad();
        auto &m = m_[i];
        auto &v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = clip * g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / c1;
            const double vhat = vj / c2;
            w[j] = static_cast<float>(w[j] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
        params_[i].zero_grad();
    }
}

void Adam::zero_grad() {
    for (auto &p : params_) p.zero_grad();
}

}  // namespace clab
