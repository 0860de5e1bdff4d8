#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

inline constexpr int kDefaultRho = 3;

enum class Distance { chebyshev, euclidean };

inline std::string to_string(Distance d) { return d == Distance::chebyshev ? "chebyshev" : "euclidean"; }

inline Distance parse_distance(const std::string& s) {
    if (s == "chebyshev") return Distance::chebyshev;
    if (s == "euclidean") return Distance::euclidean;
    throw InputError("distance must be chebyshev or euclidean, got '" + s + "'");
}

namespace detail {

inline void require_mask_plane(const Tensor<float>& m, const char* what) {
    if (m.shape().n != 1 || m.shape().c != 1) {
        throw ShapeError(std::string(what) + " must be (1,1,H,W), got " + m.shape().str());
    }
}

// One-dimensional running-window max over `len` values spaced `step` apart.
inline void window_any(const float* in, float* out, std::size_t len, std::size_t step, std::size_t rho) {
    std::vector<std::size_t> prefix(len + 1, 0);
    for (std::size_t i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + (in[i * step] != 0.f);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t lo = i >= rho ? i - rho : 0;
        const std::size_t hi = std::min(len, i + rho + 1);
        out[i * step] = prefix[hi] > prefix[lo] ? 1.f : 0.f;
    }
}

}  // namespace detail

/// Binary dilation: a pixel is set iff an input 1 lies within distance rho.
/// Chebyshev uses the (2 rho + 1)^2 square (separable, linear time);
/// Euclidean uses the disk dx^2 + dy^2 <= rho^2. Outside the image is 0.
inline Tensor<float> dilate(const Tensor<float>& mask, int rho, Distance distance = Distance::chebyshev) {
    detail::require_mask_plane(mask, "dilate input");
    if (rho < 0) throw InputError("rho must be non-negative");
    const std::size_t H = mask.shape().h, W = mask.shape().w, r = static_cast<std::size_t>(rho);
    if (rho == 0) return mask;
    Tensor<float> out(mask.shape());
    if (distance == Distance::chebyshev) {
        Tensor<float> rows(mask.shape());
        for (std::size_t y = 0; y < H; ++y) detail::window_any(mask.ptr() + y * W, rows.ptr() + y * W, W, 1, r);
        for (std::size_t x = 0; x < W; ++x) detail::window_any(rows.ptr() + x, out.ptr() + x, H, W, r);
        return out;
    }
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -rho; dy <= rho; ++dy)
        for (int dx = -rho; dx <= rho; ++dx)
            if (dx * dx + dy * dy <= rho * rho) offsets.emplace_back(dx, dy);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (mask[y * W + x] == 0.f) continue;
            for (auto [dx, dy] : offsets) {
                const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
                if (yy >= 0 && xx >= 0 && yy < std::ptrdiff_t(H) && xx < std::ptrdiff_t(W)) out[yy * W + xx] = 1.f;
            }
        }
    return out;
}

/// Pixel counts behind one precision/recall pair. Integer counts add across
/// images, which is how multi-image results are micro-averaged.
struct PRCounts {
    std::uint64_t pred = 0;          // |pred|
    std::uint64_t pred_matched = 0;  // |pred AND dilate(gt)|
    std::uint64_t gt = 0;            // |gt|
    std::uint64_t gt_matched = 0;    // |gt AND dilate(pred)|
    std::uint64_t strict_tp = 0;     // |pred AND gt|

    PRCounts& operator+=(const PRCounts& o) {
        pred += o.pred;
        pred_matched += o.pred_matched;
        gt += o.gt;
        gt_matched += o.gt_matched;
        strict_tp += o.strict_tp;
        return *this;
    }
    bool operator==(const PRCounts&) const = default;

    // Empty-set conventions: no predictions -> precision 1, no road -> recall 1.
    bool empty_pred() const { return pred == 0; }
    bool empty_gt() const { return gt == 0; }
    double precision() const { return empty_pred() ? 1.0 : double(pred_matched) / double(pred); }
    double recall() const { return empty_gt() ? 1.0 : double(gt_matched) / double(gt); }
    double strict_precision() const { return empty_pred() ? 1.0 : double(strict_tp) / double(pred); }
    double strict_recall() const { return empty_gt() ? 1.0 : double(strict_tp) / double(gt); }
};

inline void require_same_shape(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("prediction " + a.shape().str() + " and ground truth " + b.shape().str() + " differ in shape");
    }
}

/// Counts given precomputed dilations of both maps.
inline PRCounts pr_counts(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& pred_dilated,
                          const Tensor<float>& gt_dilated) {
    PRCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0.f, g = gt[i] != 0.f;
        c.pred += p;
        c.gt += g;
        c.pred_matched += p && gt_dilated[i] != 0.f;
        c.gt_matched += g && pred_dilated[i] != 0.f;
        c.strict_tp += p && g;
    }
    return c;
}

inline PRCounts pr_counts(const Tensor<float>& pred, const Tensor<float>& gt, int rho,
                          Distance distance = Distance::chebyshev) {
    require_same_shape(pred, gt);
    return pr_counts(pred, gt, dilate(pred, rho, distance), dilate(gt, rho, distance));
}

struct PR {
    double precision = 1.0;
    double recall = 1.0;
};

inline PR relaxed_pr(const Tensor<float>& pred, const Tensor<float>& gt, int rho,
                     Distance distance = Distance::chebyshev) {
    const PRCounts c = pr_counts(pred, gt, rho, distance);
    return {c.precision(), c.recall()};
}

struct PRPoint {
    double threshold = 0.0;
    double relaxed_precision = 1.0;
    double relaxed_recall = 1.0;
    double strict_precision = 1.0;
    double strict_recall = 1.0;
    bool empty_pred = false;
    bool empty_gt = false;
};

struct PRCurve {
    std::vector<PRPoint> points;
    double breakeven = 0.0;
    int rho = kDefaultRho;
    Distance distance = Distance::chebyshev;
};

/// 0.01, 0.02, ..., 0.99.
inline std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 99; ++i) t.push_back(i / 100.0);
    return t;
}

inline void validate_thresholds(const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw InputError("at least one threshold is required");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
            throw InputError("threshold " + std::to_string(thresholds[i]) + " is outside (0, 1)");
        }
        if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw InputError("thresholds must be strictly increasing");
    }
}

/// Where (precision - recall) changes sign between adjacent points, the
/// crossing with y = x is interpolated linearly; the first crossing in
/// threshold order wins. Without a crossing, the point with the smallest
/// |precision - recall| gives (precision + recall) / 2.
inline double breakeven(const std::vector<PRPoint>& points) {
    if (points.empty()) throw InputError("breakeven of an empty curve");
    for (std::size_t i = 0; i < points.size(); ++i) {
        const PRPoint& a = points[i];
        const double da = a.relaxed_precision - a.relaxed_recall;
        if (da == 0.0) return a.relaxed_precision;
        if (i + 1 == points.size()) break;
        const PRPoint& b = points[i + 1];
        const double db = b.relaxed_precision - b.relaxed_recall;
        if ((da > 0) != (db > 0) && db != 0.0) {
            const double t = da / (da - db);
            return a.relaxed_recall + t * (b.relaxed_recall - a.relaxed_recall);
        }
    }
    const auto best = std::min_element(points.begin(), points.end(), [](const PRPoint& a, const PRPoint& b) {
        return std::abs(a.relaxed_precision - a.relaxed_recall) < std::abs(b.relaxed_precision - b.relaxed_recall);
    });
    return (best->relaxed_precision + best->relaxed_recall) / 2.0;
}

/// Probability map and ground truth for one image.
struct EvalPair {
    const Tensor<float>* probs;
    const Tensor<float>* gt;
};

/// One point per threshold (binarization probs >= t), pixel counts pooled
/// over all pairs before dividing.
inline PRCurve pr_curve(const std::vector<EvalPair>& pairs, int rho,
                        const std::vector<double>& thresholds = default_thresholds(),
                        Distance distance = Distance::chebyshev) {
    validate_thresholds(thresholds);
    if (pairs.empty()) throw InputError("pr_curve needs at least one image");
    std::vector<Tensor<float>> gt_dilated;
    for (const auto& p : pairs) {
        detail::require_mask_plane(*p.probs, "probability map");
        require_same_shape(*p.probs, *p.gt);
        gt_dilated.push_back(dilate(*p.gt, rho, distance));
    }
    PRCurve curve{{}, 0.0, rho, distance};
    for (double t : thresholds) {
        PRCounts total;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const Tensor<float> pred = [&] {
                Tensor<float> b(pairs[k].probs->shape());
                for (std::size_t i = 0; i < b.size(); ++i) b[i] = (*pairs[k].probs)[i] >= t ? 1.f : 0.f;
                return b;
            }();
            total += pr_counts(pred, *pairs[k].gt, dilate(pred, rho, distance), gt_dilated[k]);
        }
        curve.points.push_back({t, total.precision(), total.recall(), total.strict_precision(), total.strict_recall(),
                                total.empty_pred(), total.empty_gt()});
    }
    curve.breakeven = breakeven(curve.points);
    return curve;
}

inline PRCurve pr_curve(const Tensor<float>& probs, const Tensor<float>& gt, int rho,
                        const std::vector<double>& thresholds = default_thresholds(),
                        Distance distance = Distance::chebyshev) {
    return pr_curve({EvalPair{&probs, &gt}}, rho, thresholds, distance);
}

inline std::string curve_csv(const PRCurve& curve) {
    std::ostringstream out;
    out << "threshold,relaxed_precision,relaxed_recall,strict_precision,strict_recall\n";
    out << std::setprecision(10);
    for (const auto& p : curve.points) {
        out << p.threshold << ',' << p.relaxed_precision << ',' << p.relaxed_recall << ',' << p.strict_precision << ','
            << p.strict_recall << '\n';
    }
    return out.str();
}

inline void write_curve_csv(const std::filesystem::path& path, const PRCurve& curve) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot create " + path.string());
    out << curve_csv(curve);
}

inline std::string summary_line(const PRCurve& curve) {
    std::ostringstream out;
    out << std::setprecision(6) << "breakeven=" << curve.breakeven << ", rho=" << curve.rho
        << ", distance=" << to_string(curve.distance);
    return out.str();
}

}  // namespace resunet
