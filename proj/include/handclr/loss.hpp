#pragma once

// Geometric augmentation, inverse feature correction, and the NT-Xent
// contrastive loss with its analytic gradient.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/error.hpp"
#include "handclr/rng.hpp"

namespace handclr {

/// p' = c + scale * R(rotation) * (p - c) + translation, with c the crop center.
struct AffineTransform {
    double rotation = 0.0;
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;

    static constexpr double kCenter = 0.5;

    AffineTransform inverse() const {
        const double c = std::cos(-rotation), s = std::sin(-rotation);
        const double inv = 1.0 / scale;
        return {-rotation, inv, -inv * (c * tx - s * ty), -inv * (s * tx + c * ty)};
    }

    friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

struct TransformRanges {
    double max_rotation = std::numbers::pi / 2.0;
    double min_scale = 0.8;
    double max_scale = 1.2;
    double max_translation = 0.1;

    void validate() const {
        if (!(max_rotation >= 0.0)) throw ConfigError("max_rotation must be >= 0");
        if (!(min_scale >= 0.5 && max_scale <= 2.0 && min_scale <= max_scale))
            throw ConfigError("augmentation scale range must lie inside [0.5, 2.0]");
        if (!(max_translation >= 0.0)) throw ConfigError("max_translation must be >= 0");
    }
};

inline AffineTransform sample_transform(Rng& rng, const TransformRanges& ranges = {}) {
    AffineTransform t;
    t.rotation = rng.uniform(-ranges.max_rotation, ranges.max_rotation);
    t.scale = rng.uniform(ranges.min_scale, ranges.max_scale);
    t.tx = rng.uniform(-ranges.max_translation, ranges.max_translation);
    t.ty = rng.uniform(-ranges.max_translation, ranges.max_translation);
    return t;
}

inline AffineTransform sample_transform(std::uint64_t seed, const TransformRanges& ranges = {}) {
    ranges.validate();
    Rng rng(seed);
    return sample_transform(rng, ranges);
}

inline Point2 apply_transform(const AffineTransform& t, Point2 p) {
    const double c = std::cos(t.rotation), s = std::sin(t.rotation);
    const double dx = p.x - AffineTransform::kCenter, dy = p.y - AffineTransform::kCenter;
    return {AffineTransform::kCenter + t.scale * (c * dx - s * dy) + t.tx,
            AffineTransform::kCenter + t.scale * (s * dx + c * dy) + t.ty};
}

inline std::vector<Point2> apply_transform(const AffineTransform& t, std::span<const Point2> points) {
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(apply_transform(t, p));
    return out;
}

/// Applies t to interleaved (x, y) coordinates stored in `xy` in place.
inline void apply_transform_inplace(const AffineTransform& t, std::span<double> xy) {
    for (std::size_t j = 0; j + 1 < xy.size(); j += 2) {
        const Point2 p = apply_transform(t, {xy[j], xy[j + 1]});
        xy[j] = p.x;
        xy[j + 1] = p.y;
    }
}

/// Treats a feature row as F/2 planar 2-vectors and applies the inverse of
/// t's rotation and scale to each: v' = R(-rotation) v / scale. With
/// `translate`, the feature translation is removed first: v' = R(-rotation)(v - t) / scale.
inline Eigen::VectorXd inverse_correct(const AffineTransform& t, const Eigen::Ref<const Eigen::VectorXd>& row,
                                       bool translate = false) {
    if (row.size() % 2 != 0) throw ShapeError("inverse_correct needs an even feature dimension");
    const double c = std::cos(t.rotation), s = std::sin(t.rotation);
    const double inv = 1.0 / t.scale;
    Eigen::VectorXd out(row.size());
    for (Eigen::Index k = 0; k < row.size(); k += 2) {
        double x = row(k), y = row(k + 1);
        if (translate) {
            x -= t.tx;
            y -= t.ty;
        }
        out(k) = inv * (c * x + s * y);
        out(k + 1) = inv * (-s * x + c * y);
    }
    return out;
}

/// Vector-Jacobian product of inverse_correct: (R(-rotation)/scale)^T g.
inline Eigen::VectorXd inverse_correct_backward(const AffineTransform& t, const Eigen::Ref<const Eigen::VectorXd>& grad) {
    if (grad.size() % 2 != 0) throw ShapeError("inverse_correct needs an even feature dimension");
    const double c = std::cos(t.rotation), s = std::sin(t.rotation);
    const double inv = 1.0 / t.scale;
    Eigen::VectorXd out(grad.size());
    for (Eigen::Index k = 0; k < grad.size(); k += 2) {
        out(k) = inv * (c * grad(k) - s * grad(k + 1));
        out(k + 1) = inv * (s * grad(k) + c * grad(k + 1));
    }
    return out;
}

struct NtXentConfig {
    double temperature = 0.5;
    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    }
};

struct NtXentResult {
    double loss = 0.0;
    Eigen::MatrixXd gradient;  // same shape as the batch
};

/// NT-Xent over a 2n x F batch where rows 2k and 2k+1 are positives.
///
/// Rows are L2-normalized; for anchor i with positive p(i),
///   l_i = -s_{i,p(i)}/tau + log sum_{k != i} exp(s_{i,k}/tau),
/// and the loss is the mean of l_i over all 2n anchors. The gradient is taken
/// with respect to the un-normalized rows.
inline NtXentResult nt_xent(const Eigen::MatrixXd& batch, const NtXentConfig& cfg = {}, bool want_gradient = true) {
    cfg.validate();
    const Eigen::Index m = batch.rows();
    if (m % 2 != 0) throw ShapeError("NT-Xent batch must have an even number of rows");
    if (m < 4) throw BatchTooSmall("NT-Xent needs at least 2 pairs so that negatives exist");
    if (!batch.allFinite()) throw DegenerateFeature("non-finite feature row");

    Eigen::VectorXd norms = batch.rowwise().norm();
    for (Eigen::Index i = 0; i < m; ++i)
        if (!(norms(i) > 0.0)) throw DegenerateFeature("zero-norm feature row " + std::to_string(i));
    const Eigen::MatrixXd u = norms.cwiseInverse().asDiagonal() * batch;
    const Eigen::MatrixXd sim = u * u.transpose();
    const double inv_tau = 1.0 / cfg.temperature;

    // prob(i, k): softmax over k != i of sim(i, k) / tau.
    Eigen::MatrixXd prob = Eigen::MatrixXd::Zero(m, m);
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index pos = i ^ 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i) mx = std::max(mx, sim(i, k) * inv_tau);
        double z = 0.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            if (k == i) continue;
            prob(i, k) = std::exp(sim(i, k) * inv_tau - mx);
            z += prob(i, k);
        }
        prob.row(i) /= z;
        total += -sim(i, pos) * inv_tau + mx + std::log(z);
    }
    NtXentResult out;
    out.loss = total / static_cast<double>(m);
    if (!want_gradient) return out;

    // dL/dsim(i,k) collected symmetrically: coef(i,k) = (P_ik - [k=p(i)]) + (P_ki - [i=p(k)]).
    Eigen::MatrixXd coef = prob;
    for (Eigen::Index i = 0; i < m; ++i) coef(i, i ^ 1) -= 1.0;
    const Eigen::MatrixXd sym = (coef + coef.transpose()) * (inv_tau / static_cast<double>(m));
    const Eigen::MatrixXd grad_u = sym * u;
    out.gradient.resize(m, batch.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::VectorXd ui = u.row(i).transpose();
        const Eigen::VectorXd gi = grad_u.row(i).transpose();
        out.gradient.row(i) = ((gi - ui * ui.dot(gi)) / norms(i)).transpose();
    }
    return out;
}

struct ScaleInvarianceReport {
    double loss = 0.0;
    double scaled_loss = 0.0;
    double difference = 0.0;
};

/// Loss difference between a batch and the same batch with row i scaled by
/// row_scales[i] (all positive). Cosine similarity makes this zero up to rounding.
inline ScaleInvarianceReport scalar_invariance_check(const Eigen::MatrixXd& batch, const NtXentConfig& cfg,
                                                     const Eigen::VectorXd& row_scales) {
    if (row_scales.size() != batch.rows()) throw ShapeError("one scale per row required");
    if ((row_scales.array() <= 0.0).any()) throw ConfigError("scales must be positive");
    ScaleInvarianceReport r;
    r.loss = nt_xent(batch, cfg, false).loss;
    r.scaled_loss = nt_xent(row_scales.asDiagonal() * batch, cfg, false).loss;
    r.difference = std::abs(r.loss - r.scaled_loss);
    return r;
}

inline ScaleInvarianceReport scalar_invariance_check(const Eigen::MatrixXd& batch, const NtXentConfig& cfg,
                                                     double scale) {
    return scalar_invariance_check(batch, cfg, Eigen::VectorXd::Constant(batch.rows(), scale));
}

}  // namespace handclr
