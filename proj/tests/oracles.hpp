#pragma once

// Independent reference computations used by the unit and acceptance tests.
// These are deliberately plain: no blocking, no shared code paths with the
// library beyond the data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/mine.hpp"
#include "handclr/rng.hpp"
#include "handclr/synth.hpp"

namespace oracle {

/// Planar hand chain written with complex numbers: a direction at angle a,
/// measured from +y toward -x, is i * e^{ia}.
inline std::vector<handclr::Point2> forward_kinematics(const handclr::PoseParams& p) {
    using C = std::complex<double>;
    const double base[5] = {0.96, 0.26, 0.0, -0.21, -0.44};
    const double len[5][4] = {{0.25, 0.20, 0.16, 0.13},
                              {0.45, 0.25, 0.15, 0.11},
                              {0.45, 0.28, 0.17, 0.12},
                              {0.42, 0.26, 0.16, 0.11},
                              {0.38, 0.20, 0.12, 0.10}};
    const C i(0.0, 1.0);
    std::vector<C> z{C(0.0, 0.0)};
    for (int f = 0; f < 5; ++f) {
        C tip(0.0, 0.0);
        for (int s = 0; s < 4; ++s) {
            tip += len[f][s] * i * std::exp(i * (base[f] + p.abduction[f] - s * p.flexion[f] / 3.0));
            z.push_back(tip);
        }
    }
    C centroid(0.0, 0.0);
    for (auto v : z) centroid += v;
    centroid /= 21.0;
    std::vector<handclr::Point2> out;
    for (auto v : z) {
        const C q = (v - centroid) * p.scale * std::exp(i * p.global_rotation);
        out.push_back({0.5 + 0.4 * q.real(), 0.5 + 0.4 * q.imag()});
    }
    return out;
}

struct Candidate {
    std::int64_t crop_id, video_id, frame_idx;
};

/// Linear scan over every row in input order: smallest squared distance,
/// then smallest (video_id, frame_idx), skipping the query's video.
inline std::optional<std::pair<std::int64_t, double>> brute_force_sim(const Eigen::MatrixXd& emb,
                                                                       const std::vector<Candidate>& meta,
                                                                       std::size_t q) {
    std::optional<std::tuple<double, std::int64_t, std::int64_t, std::int64_t>> best;
    for (std::size_t r = 0; r < meta.size(); ++r) {
        if (meta[r].video_id == meta[q].video_id) continue;
        double d2 = 0.0;
        for (Eigen::Index k = 0; k < emb.cols(); ++k) {
            const double t = emb(static_cast<Eigen::Index>(q), k) - emb(static_cast<Eigen::Index>(r), k);
            d2 += t * t;
        }
        const auto key = std::make_tuple(d2, meta[r].video_id, meta[r].frame_idx, meta[r].crop_id);
        if (!best || key < *best) best = key;
    }
    if (!best) return std::nullopt;
    return std::make_pair(std::get<3>(*best), std::get<0>(*best));
}

/// NT-Xent straight from the definition, without log-sum-exp.
inline double nt_xent(const Eigen::MatrixXd& z, double tau) {
    const Eigen::Index m = z.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index pos = (i % 2 == 0) ? i + 1 : i - 1;
        double denom = 0.0, numer = 0.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            if (k == i) continue;
            const double s = z.row(i).dot(z.row(k)) / (z.row(i).norm() * z.row(k).norm());
            denom += std::exp(s / tau);
            if (k == pos) numer = std::exp(s / tau);
        }
        total += -std::log(numer / denom);
    }
    return total / static_cast<double>(m);
}

/// Central finite-difference gradient of f over the entries of x.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x,
                                        double h = 1e-5) {
    Eigen::MatrixXd g(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double v = x(r, c);
            x(r, c) = v + h;
            const double up = f(x);
            x(r, c) = v - h;
            const double down = f(x);
            x(r, c) = v;
            g(r, c) = (up - down) / (2.0 * h);
        }
    return g;
}

/// Elementwise relative error |a - n| / max(|a|, |n|, floor), maximized.
/// The floor keeps entries whose true gradient is ~0 from dividing by round-off.
inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& n, double floor = 1e-3) {
    double worst = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
            const double scale = std::max({std::abs(a(r, c)), std::abs(n(r, c)), floor});
            worst = std::max(worst, std::abs(a(r, c) - n(r, c)) / scale);
        }
    return worst;
}

/// Random crop with 21 keypoints strictly inside the unit square.
inline handclr::HandCrop random_crop(handclr::Rng& rng, std::int64_t id, std::int64_t video, std::int64_t frame,
                                     handclr::Handedness h = handclr::Handedness::Right) {
    handclr::HandCrop c;
    c.crop_id = id;
    c.video_id = video;
    c.frame_idx = frame;
    c.handedness = h;
    c.confidence = rng.uniform();
    for (int j = 0; j < 21; ++j) c.keypoints.push_back({rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
    return c;
}

/// Spearman rank correlation (average ranks on ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
