#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "segscan/distance.hpp"
#include "segscan/errors.hpp"

namespace segscan {

// Segmentation metrics: per-class Dice, IoU, HD95 and ASD. Surface distances
// use the pooled-symmetric definition: directed boundary distances both ways
// are concatenated before taking the 95th percentile (linear interpolation)
// and the mean. Distances are scaled by the per-axis spacing (mm-equivalent
// pixels by default).

struct LabelMask {
    std::size_t height = 0, width = 0;
    std::size_t num_classes = 0;
    double spacing_y = 1.0, spacing_x = 1.0;
    std::vector<std::uint16_t> labels;  // H*W class indices, < num_classes

    std::uint16_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

struct ClassMetrics {
    double dice = 0.0, iou = 0.0, hd95 = 0.0, asd = 0.0;
    bool surface_sentinel = false;  // one boundary set was empty
};

struct SegMetrics {
    std::vector<ClassMetrics> per_class;  // indexed by class id
    double mdice = 0.0, miou = 0.0;       // macro means over foreground classes
};

inline void validate_pair(const LabelMask& a, const LabelMask& b) {
    if (a.height != b.height || a.width != b.width)
        throw DimensionError("label masks must share a shape");
}

// dice = 2|P&G| / (|P|+|G|); iou = |P&G| / |P|G|; both-empty class -> 1, 1
inline std::pair<double, double> dice_iou(const LabelMask& pred, const LabelMask& gt,
                                          std::uint16_t cls) {
    validate_pair(pred, gt);
    std::size_t np = 0, ng = 0, ni = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] == cls;
        const bool g = gt.labels[i] == cls;
        np += p;
        ng += g;
        ni += p && g;
    }
    if (np + ng == 0) return {1.0, 1.0};
    const double dice = 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
    const std::size_t nu = np + ng - ni;
    const double iou = nu ? static_cast<double>(ni) / static_cast<double>(nu) : 1.0;
    return {dice, iou};
}

// boundary = foreground pixel with a 4-neighbour background or on the edge
inline std::vector<std::uint8_t> boundary_pixels(const LabelMask& m, std::uint16_t cls) {
    const std::size_t H = m.height, W = m.width;
    std::vector<std::uint8_t> b(H * W, 0);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (m.at(y, x) != cls) continue;
            if (y == 0 || x == 0 || y == H - 1 || x == W - 1) {
                b[y * W + x] = 1;
                continue;
            }
            if (m.at(y - 1, x) != cls || m.at(y + 1, x) != cls || m.at(y, x - 1) != cls ||
                m.at(y, x + 1) != cls)
                b[y * W + x] = 1;
        }
    return b;
}

inline double percentile_linear(std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double rank = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

// Pooled-symmetric HD95 / ASD over the two boundary sets. The directed
// distances come from one exact distance transform per direction.
inline ClassMetrics hd95_asd(const LabelMask& pred, const LabelMask& gt, std::uint16_t cls) {
    validate_pair(pred, gt);
    ClassMetrics out;
    const std::size_t H = pred.height, W = pred.width;
    const auto bp = boundary_pixels(pred, cls);
    const auto bg = boundary_pixels(gt, cls);
    const bool any_p = std::any_of(bp.begin(), bp.end(), [](std::uint8_t v) { return v != 0; });
    const bool any_g = std::any_of(bg.begin(), bg.end(), [](std::uint8_t v) { return v != 0; });
    if (!any_p && !any_g) return out;  // both empty: 0, 0
    if (!any_p || !any_g) {
        const double sy = pred.spacing_y, sx = pred.spacing_x;
        const double sentinel = std::sqrt(static_cast<double>(H) * sy * static_cast<double>(H) * sy +
                                          static_cast<double>(W) * sx * static_cast<double>(W) * sx);
        out.hd95 = out.asd = sentinel;
        out.surface_sentinel = true;
        return out;
    }
    auto dist_to_g = distance_transform<double>(bg, H, W, pred.spacing_y, pred.spacing_x);
    auto dist_to_p = distance_transform<double>(bp, H, W, pred.spacing_y, pred.spacing_x);
    std::vector<double> pooled;
    for (std::size_t i = 0; i < H * W; ++i) {
        if (bp[i]) pooled.push_back(dist_to_g.dist[i]);
        if (bg[i]) pooled.push_back(dist_to_p.dist[i]);
    }
    double s = 0.0;
    for (double d : pooled) s += d;
    out.asd = s / static_cast<double>(pooled.size());
    out.hd95 = percentile_linear(pooled, 0.95);
    return out;
}

// Per-class metrics plus macro means over the foreground classes (class 0 is
// background by convention).
inline SegMetrics evaluate_masks(const LabelMask& pred, const LabelMask& gt) {
    validate_pair(pred, gt);
    const std::size_t K = std::max<std::size_t>(pred.num_classes, 1);
    SegMetrics m;
    m.per_class.resize(K);
    double sd = 0.0, si = 0.0;
    std::size_t nfg = 0;
    for (std::size_t c = 0; c < K; ++c) {
        auto di = dice_iou(pred, gt, static_cast<std::uint16_t>(c));
        auto cm = hd95_asd(pred, gt, static_cast<std::uint16_t>(c));
        cm.dice = di.first;
        cm.iou = di.second;
        m.per_class[c] = cm;
        if (c > 0) {
            sd += cm.dice;
            si += cm.iou;
            ++nfg;
        }
    }
    if (nfg) {
        m.mdice = sd / static_cast<double>(nfg);
        m.miou = si / static_cast<double>(nfg);
    }
    return m;
}

}  // namespace segscan
