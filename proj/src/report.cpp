#include "clab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace clab::report {

namespace {

std::vector<float> difference_field(const Tensor &a, const Tensor &b) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

void check_sizes(const std::vector<SlicePair> &pairs, const Predictions &pred) {
    if (pred.post.size() != pairs.size()) {
        throw std::invalid_argument("report: " + pred.model + " has " + std::to_string(pred.post.size()) +
                                    " predictions for " + std::to_string(pairs.size()) + " slices");
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pred.post[i].size() != pairs[i].x.size()) throw ShapeError("report: prediction size mismatch for " + pred.model);
        if (!pred.stddev.empty() && pred.stddev[i].size() != pairs[i].x.size())
            throw ShapeError("report: stddev size mismatch for " + pred.model);
    }
}

SlicePair normalized(const SlicePair &p) { return p.normalized ? p : dataset::normalize(p); }

}  // namespace

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

Predictions pre_contrast(const std::vector<SlicePair> &pairs) {
    Predictions p{"pre", {}, {}};
    for (const auto &pair : pairs) p.post.push_back(normalized(pair).pre_central());
    return p;
}

Predictions from_differences(std::string model, const std::vector<SlicePair> &pairs, const std::vector<Tensor> &diffs,
                             std::vector<Tensor> stddev) {
    if (diffs.size() != pairs.size()) throw std::invalid_argument("report: one difference image per slice required");
    Predictions p{std::move(model), {}, std::move(stddev)};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Tensor pre = normalized(pairs[i]).pre_central();
        if (diffs[i].size() != pre.size()) throw ShapeError("report: difference image size mismatch");
        for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += diffs[i][k];
        p.post.push_back(pre);
    }
    return p;
}

std::vector<SliceScore> score_slices(const std::vector<SlicePair> &pairs, const Predictions &pred) {
    check_sizes(pairs, pred);
    std::vector<SliceScore> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const SlicePair p = normalized(pairs[i]);
        const Tensor &y = pred.post[i];
        float peak = *std::max_element(p.y.data().begin(), p.y.data().end());
        if (!(peak > 0.0f)) peak = 1.0f;
        std::vector<float> a(y.size()), b(y.size());
        for (std::size_t k = 0; k < y.size(); ++k) {
            a[k] = y[k] / peak;
            b[k] = p.x[k] / peak;
        }
        SliceScore s{pred.model, p.volume_id, p.slice_index, metrics::mae(y.data(), p.x.data()), 0.0,
                     metrics::ssim(a, b, p.height(), p.width())};
        s.rmae = metrics::mae(y.data(), p.x.data(), p.roi.data());
        out.push_back(s);
    }
    return out;
}

Summary summarize(const std::vector<SliceScore> &scores) {
    if (scores.empty()) throw std::invalid_argument("report: nothing to summarize");
    Summary s{scores.front().model, scores.size(), 0.0, 0.0, 0.0};
    for (const auto &r : scores) {
        s.mae += r.mae;
        s.rmae += r.rmae;
        s.ssim += r.ssim;
    }
    const auto n = static_cast<double>(scores.size());
    s.mae /= n;
    s.rmae /= n;
    s.ssim /= n;
    return s;
}

UncertaintyRow uncertainty(const std::vector<SlicePair> &pairs, const Predictions &pred, bool relative) {
    check_sizes(pairs, pred);
    if (pred.stddev.empty()) throw std::invalid_argument("report: " + pred.model + " has no uncertainty map");
    std::vector<float> u, v, skip;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const SlicePair p = normalized(pairs[i]);
        const Tensor &y = pred.post[i];
        u.insert(u.end(), pred.stddev[i].data().begin(), pred.stddev[i].data().end());
        if (relative) {
            auto re = metrics::relative_error(y.data(), p.x.data(), p.pre_central().data());
            v.insert(v.end(), re.value.begin(), re.value.end());
            skip.insert(skip.end(), re.skip.begin(), re.skip.end());
        } else {
            for (std::size_t k = 0; k < y.size(); ++k) v.push_back(std::abs(y[k] - p.x[k]));
        }
    }
    return UncertaintyRow{pred.model, relative ? "rel" : "abs", metrics::pearson(u, v, skip)};
}

std::vector<SegmentationRow> segmentation(const std::vector<SlicePair> &pairs, const Predictions &pred,
                                          const std::vector<int> &thresholds) {
    check_sizes(pairs, pred);
    std::vector<SegmentationRow> out;
    for (int t : thresholds) {
        SegmentationRow row{pred.model, t, 0.0, 0.0};
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const SlicePair p = normalized(pairs[i]);
            const Tensor pre = p.pre_central();
            auto truth = metrics::threshold_segment(difference_field(p.x, pre), p.roi.data(), t);
            auto mine = metrics::threshold_segment(difference_field(pred.post[i], pre), p.roi.data(), t);
            auto o = metrics::dice_jaccard(mine, truth);
            row.dice += o.dice;
            row.jaccard += o.jaccard;
        }
        row.dice /= static_cast<double>(pairs.size());
        row.jaccard /= static_cast<double>(pairs.size());
        out.push_back(row);
    }
    return out;
}

std::vector<SegmentationRow> cross_modality(const std::vector<SlicePair> &a, const std::vector<SlicePair> &b,
                                            const std::vector<int> &thresholds) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("report: paired slice lists differ in length");
    std::vector<SegmentationRow> out;
    for (int t : thresholds) {
        SegmentationRow row{"gt_" + to_string(a.front().modality) + "_vs_" + to_string(b.front().modality), t, 0.0, 0.0};
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].volume_id != b[i].volume_id || a[i].slice_index != b[i].slice_index)
                throw std::invalid_argument("report: slices are not paired");
            auto sa = metrics::threshold_segment(difference_field(a[i].x, a[i].pre_central()), a[i].roi.data(), t);
            auto sb = metrics::threshold_segment(difference_field(b[i].x, b[i].pre_central()), b[i].roi.data(), t);
            auto o = metrics::dice_jaccard(sa, sb);
            row.dice += o.dice;
            row.jaccard += o.jaccard;
        }
        row.dice /= static_cast<double>(a.size());
        row.jaccard /= static_cast<double>(a.size());
        out.push_back(row);
    }
    return out;
}

std::string csv(const std::vector<SliceScore> &rows) {
    std::ostringstream os;
    os << "model,volume,slice,mae,rmae,ssim\n";
    for (const auto &r : rows)
        os << r.model << ',' << r.volume << ',' << r.slice << ',' << fmt(r.mae) << ',' << fmt(r.rmae) << ',' << fmt(r.ssim) << '\n';
    return os.str();
}

std::string csv(const std::vector<Summary> &rows) {
    std::ostringstream os;
    os << "model,slices,mae,rmae,ssim\n";
    for (const auto &r : rows)
        os << r.model << ',' << r.slices << ',' << fmt(r.mae) << ',' << fmt(r.rmae) << ',' << fmt(r.ssim) << '\n';
    return os.str();
}

std::string csv(const std::vector<UncertaintyRow> &rows) {
    std::ostringstream os;
    os << "model,error,r,p_value,n\n";
    for (const auto &r : rows)
        os << r.model << ',' << r.error << ',' << fmt(r.corr.r) << ',' << fmt(r.corr.p_value) << ',' << r.corr.n << '\n';
    return os.str();
}

std::string csv(const std::vector<SegmentationRow> &rows) {
    std::ostringstream os;
    os << "model,threshold,dice,jaccard\n";
    for (const auto &r : rows) os << r.model << ',' << r.threshold << ',' << fmt(r.dice) << ',' << fmt(r.jaccard) << '\n';
    return os.str();
}

}  // namespace clab::report
