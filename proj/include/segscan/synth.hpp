#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "segscan/metrics.hpp"
#include "segscan/rng.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Synthetic hollow-organ proxy data: low-contrast greyscale images with up to
// three objects on a noisy background -- a filled ellipse (class 1), a thin
// ring with a 1-2 px wall (class 2) and an open C-shaped ring (class 3).
// Bit-deterministic for a given seed.

struct SynthSample {
    Tensor<float> image;  // (1, S, S), intensities in [0, 1]
    LabelMask mask;       // S x S labels in {0,1,2,3}
};

namespace detail {

struct Placement {
    double cy, cx, radius;
};

inline bool overlaps(const std::vector<Placement>& placed, double cy, double cx, double r) {
    for (const auto& p : placed) {
        const double dy = p.cy - cy, dx = p.cx - cx;
        if (std::sqrt(dy * dy + dx * dx) < p.radius + r + 2.0) return true;
    }
    return false;
}

}  // namespace detail

inline SynthSample synth_sample(Rng& rng, std::size_t size) {
    SynthSample s;
    s.image = Tensor<float>({1, size, size});
    s.mask.height = size;
    s.mask.width = size;
    s.mask.num_classes = 4;
    s.mask.labels.assign(size * size, 0);

    const double bg = rng.uniform(0.35, 0.55);
    std::vector<detail::Placement> placed;
    struct Obj {
        int cls;
        double cy, cx, ry, rx, wall, ang0, gap, gain;
    };
    std::vector<Obj> objs;

    for (int cls = 1; cls <= 3; ++cls) {
        if (rng.uniform() > 0.9) continue;  // object absent
        const double rmax = cls == 1 ? 11.0 : 14.0;
        const double rmin = cls == 1 ? 5.0 : 7.0;
        bool ok = false;
        Obj o{};
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            o.cls = cls;
            o.ry = rng.uniform(rmin, rmax);
            o.rx = cls == 1 ? rng.uniform(rmin, rmax) : o.ry;
            const double margin = std::max(o.ry, o.rx) + 3.0;
            o.cy = rng.uniform(margin, static_cast<double>(size) - margin);
            o.cx = rng.uniform(margin, static_cast<double>(size) - margin);
            if (!detail::overlaps(placed, o.cy, o.cx, std::max(o.ry, o.rx))) ok = true;
        }
        if (!ok) continue;
        o.wall = rng.uniform(1.0, 2.0);
        o.ang0 = rng.uniform(0.0, 6.2831853);
        o.gap = rng.uniform(0.9, 2.1);  // radians of missing arc for the C shape
        const double contrast = rng.uniform(0.1, 0.2);
        o.gain = cls == 2 ? -contrast : contrast;  // rings darker, blobs brighter
        placed.push_back({o.cy, o.cx, std::max(o.ry, o.rx)});
        objs.push_back(o);
    }

    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double v = bg;
            int label = 0;
            for (const auto& o : objs) {
                const double dy = static_cast<double>(y) - o.cy;
                const double dx = static_cast<double>(x) - o.cx;
                bool inside = false;
                if (o.cls == 1) {
                    const double e = (dy / o.ry) * (dy / o.ry) + (dx / o.rx) * (dx / o.rx);
                    inside = e <= 1.0;
                } else {
                    const double r = std::sqrt(dy * dy + dx * dx);
                    inside = std::abs(r - o.ry) <= o.wall * 0.5;
                    if (inside && o.cls == 3) {
                        double a = std::atan2(dy, dx) - o.ang0;
                        while (a < 0) a += 6.2831853;
                        while (a >= 6.2831853) a -= 6.2831853;
                        if (a < o.gap) inside = false;  // the opening of the C
                    }
                }
                if (inside) {
                    v = bg + o.gain;
                    label = o.cls;
                }
            }
            v += rng.normal(0.0, 0.02);
            s.image[y * size + x] = static_cast<float>(clip_scalar(v, 0.0, 1.0));
            s.mask.labels[y * size + x] = static_cast<std::uint16_t>(label);
        }
    }
    return s;
}

// Deterministic dataset: per-image substreams are derived from the seed, so
// the same (seed, n, size) always reproduces the same bytes.
inline std::vector<SynthSample> synth_dataset(std::uint64_t seed, std::size_t n_images,
                                              std::size_t size = 64) {
    std::vector<SynthSample> out;
    out.reserve(n_images);
    Rng root(seed);
    for (std::size_t i = 0; i < n_images; ++i) {
        Rng sub = root.fork(i + 1);
        out.push_back(synth_sample(sub, size));
    }
    return out;
}

}  // namespace segscan
