#pragma once

// Synthetic hand corpora from a planar kinematic hand model with known pose
// parameters. Stands in for a detector + 2D pose estimator and provides the
// ground truth that mining quality and probe evaluation are scored against.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/error.hpp"
#include "handclr/io.hpp"
#include "handclr/rng.hpp"

namespace handclr {

inline constexpr std::size_t kNumFingers = 5;
inline constexpr std::size_t kPoseParamDim = 2 + 2 * kNumFingers;

inline constexpr double kMaxFlexion = std::numbers::pi / 2.0;
inline constexpr double kMaxAbduction = 0.3;
inline constexpr double kMinScale = 0.5;
inline constexpr double kMaxScale = 1.5;
/// Range of the per-video base rotation drawn by generate_corpus.
inline constexpr double kMaxBaseRotation = std::numbers::pi / 3.0;

struct PoseParams {
    double global_rotation = 0.0;
    std::array<double, kNumFingers> flexion{};
    std::array<double, kNumFingers> abduction{};
    double scale = 1.0;

    /// Flattened as (rotation, flexion x5, abduction x5, scale).
    std::array<double, kPoseParamDim> to_array() const {
        std::array<double, kPoseParamDim> v{};
        v[0] = global_rotation;
        for (std::size_t f = 0; f < kNumFingers; ++f) {
            v[1 + f] = flexion[f];
            v[1 + kNumFingers + f] = abduction[f];
        }
        v[kPoseParamDim - 1] = scale;
        return v;
    }

    static PoseParams from_array(const std::array<double, kPoseParamDim>& v) {
        PoseParams p;
        p.global_rotation = v[0];
        for (std::size_t f = 0; f < kNumFingers; ++f) {
            p.flexion[f] = v[1 + f];
            p.abduction[f] = v[1 + kNumFingers + f];
        }
        p.scale = v[kPoseParamDim - 1];
        return p;
    }

    bool valid() const {
        if (!std::isfinite(global_rotation)) return false;
        for (std::size_t f = 0; f < kNumFingers; ++f) {
            if (!(flexion[f] >= 0.0 && flexion[f] <= kMaxFlexion)) return false;
            if (!(abduction[f] >= -kMaxAbduction && abduction[f] <= kMaxAbduction)) return false;
        }
        return scale >= kMinScale && scale <= kMaxScale;
    }

    friend bool operator==(const PoseParams&, const PoseParams&) = default;
};

/// Hand model constants. Finger base directions are angles from the hand's
/// +y axis (positive toward -x); segment lengths run wrist->base, then the
/// three phalanges.
namespace hand_model {
inline constexpr std::array<double, kNumFingers> kBaseAngle = {0.96, 0.26, 0.0, -0.21, -0.44};
inline constexpr std::array<std::array<double, 4>, kNumFingers> kSegmentLength = {{
    {0.25, 0.20, 0.16, 0.13},  // thumb
    {0.45, 0.25, 0.15, 0.11},  // index
    {0.45, 0.28, 0.17, 0.12},  // middle
    {0.42, 0.26, 0.16, 0.11},  // ring
    {0.38, 0.20, 0.12, 0.10},  // pinky
}};
/// Half-extent of the hand frame mapped onto the unit crop.
inline constexpr double kCropScale = 0.4;
}  // namespace hand_model

/// Planar kinematic chain -> 21 keypoints in crop units.
///
/// The wrist sits at the hand-frame origin. Each finger is a chain of four
/// segments whose root direction is the finger's base angle plus abduction;
/// every subsequent segment bends by flexion/3. The keypoint set is then
/// centered on its centroid, rotated by global_rotation, scaled, and mapped
/// into the crop as 0.5 + kCropScale * p.
inline std::vector<Point2> forward_kinematics(const PoseParams& params) {
    std::vector<Point2> pts(kNumJoints);
    pts[0] = {0.0, 0.0};
    for (std::size_t f = 0; f < kNumFingers; ++f) {
        double x = 0.0, y = 0.0;
        const double root = hand_model::kBaseAngle[f] + params.abduction[f];
        for (std::size_t s = 0; s < 4; ++s) {
            const double angle = root - static_cast<double>(s) * params.flexion[f] / 3.0;
            x += -std::sin(angle) * hand_model::kSegmentLength[f][s];
            y += std::cos(angle) * hand_model::kSegmentLength[f][s];
            pts[1 + 4 * f + s] = {x, y};
        }
    }
    double cx = 0.0, cy = 0.0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(kNumJoints);
    cy /= static_cast<double>(kNumJoints);
    const double c = std::cos(params.global_rotation);
    const double s = std::sin(params.global_rotation);
    for (auto& p : pts) {
        const double dx = p.x - cx;
        const double dy = p.y - cy;
        const double rx = params.scale * (c * dx - s * dy);
        const double ry = params.scale * (s * dx + c * dy);
        p = {0.5 + hand_model::kCropScale * rx, 0.5 + hand_model::kCropScale * ry};
    }
    return pts;
}

/// Keypoint-space sensitivity of each pose parameter at the mid-range pose
/// (zero rotation and abduction, half flexion, unit scale): the norm of the
/// corresponding column of the keypoint Jacobian, by central differences.
inline const std::array<double, kPoseParamDim>& pose_metric_weights() {
    static const std::array<double, kPoseParamDim> w = [] {
        PoseParams mid;
        mid.flexion.fill(kMaxFlexion / 2.0);
        const auto base = mid.to_array();
        constexpr double h = 1e-6;
        std::array<double, kPoseParamDim> out{};
        for (std::size_t k = 0; k < kPoseParamDim; ++k) {
            auto up = base, down = base;
            up[k] += h;
            down[k] -= h;
            const auto pu = forward_kinematics(PoseParams::from_array(up));
            const auto pd = forward_kinematics(PoseParams::from_array(down));
            double s = 0.0;
            for (std::size_t j = 0; j < pu.size(); ++j) {
                const double dx = pu[j].x - pd[j].x, dy = pu[j].y - pd[j].y;
                s += dx * dx + dy * dy;
            }
            out[k] = std::sqrt(s) / (2.0 * h);
        }
        return out;
    }();
    return w;
}

/// Weighted Euclidean distance in parameter space. The weights make one unit
/// of each parameter count by how far it moves the keypoints, so abduction and
/// rotation are not swamped by the five wide flexion ranges.
inline double pose_distance(const PoseParams& a, const PoseParams& b) {
    const auto va = a.to_array();
    const auto vb = b.to_array();
    const auto& w = pose_metric_weights();
    double s = 0.0;
    for (std::size_t k = 0; k < kPoseParamDim; ++k) {
        const double d = w[k] * (va[k] - vb[k]);
        s += d * d;
    }
    return std::sqrt(s);
}

struct SynthConfig {
    std::int64_t n_videos = 50;
    std::int64_t crops_per_video = 100;
    double keypoint_noise_sigma = 0.01;
    double intra_video_drift = 0.05;
    std::uint64_t seed = 0;
    /// Probability that a crop is recorded as a left hand (stored mirrored).
    double left_fraction = 0.5;
    /// When > 0, video v takes its base pose from a shared pool entry v % pool;
    /// 0 gives every video an independent base pose.
    std::int64_t base_pose_pool = 0;
    /// Per-video perturbation (same law as intra-video drift) applied to a
    /// pooled base pose. Ignored when base_pose_pool == 0.
    double base_pose_jitter = 0.0;

    void validate() const {
        if (n_videos < 1) throw ConfigError("n_videos must be >= 1");
        if (crops_per_video < 1) throw ConfigError("crops_per_video must be >= 1");
        if (!(keypoint_noise_sigma >= 0.0)) throw ConfigError("keypoint_noise_sigma must be >= 0");
        if (!(intra_video_drift >= 0.0)) throw ConfigError("intra_video_drift must be >= 0");
        if (!(left_fraction >= 0.0 && left_fraction <= 1.0)) throw ConfigError("left_fraction must lie in [0,1]");
        if (base_pose_pool < 0) throw ConfigError("base_pose_pool must be >= 0");
        if (!(base_pose_jitter >= 0.0)) throw ConfigError("base_pose_jitter must be >= 0");
    }
};

/// Ground truth aligned with crop ids.
using GroundTruth = std::map<std::int64_t, PoseParams>;

struct SynthCorpus {
    Corpus corpus;
    std::vector<PoseParams> params;  // aligned with corpus.crops()
    GroundTruth ground_truth() const {
        GroundTruth gt;
        for (std::size_t i = 0; i < params.size(); ++i) gt.emplace(corpus.crops()[i].crop_id, params[i]);
        return gt;
    }
};

inline PoseParams sample_pose(Rng& rng) {
    PoseParams p;
    p.global_rotation = rng.uniform(-kMaxBaseRotation, kMaxBaseRotation);
    for (std::size_t f = 0; f < kNumFingers; ++f) {
        p.flexion[f] = rng.uniform(0.0, kMaxFlexion);
        p.abduction[f] = rng.uniform(-kMaxAbduction, kMaxAbduction);
    }
    p.scale = rng.uniform(0.8, 1.2);
    return p;
}

/// Perturbs every parameter by N(0, drift^2), clamped back into range.
inline PoseParams drift_pose(const PoseParams& base, double drift, Rng& rng) {
    if (drift == 0.0) return base;
    PoseParams p = base;
    p.global_rotation += drift * rng.normal();
    for (std::size_t f = 0; f < kNumFingers; ++f) {
        p.flexion[f] = std::clamp(p.flexion[f] + drift * rng.normal(), 0.0, kMaxFlexion);
        p.abduction[f] = std::clamp(p.abduction[f] + drift * rng.normal(), -kMaxAbduction, kMaxAbduction);
    }
    p.scale = std::clamp(p.scale + drift * rng.normal(), kMinScale, kMaxScale);
    return p;
}

/// Each video draws its own stream from derive_seed(seed, "video", v), so the
/// output depends only on the seed and not on generation order.
inline SynthCorpus generate_corpus(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<HandCrop> crops;
    std::vector<PoseParams> params;
    crops.reserve(static_cast<std::size_t>(cfg.n_videos * cfg.crops_per_video));
    params.reserve(crops.capacity());

    for (std::int64_t v = 0; v < cfg.n_videos; ++v) {
        PoseParams base;
        if (cfg.base_pose_pool > 0) {
            Rng pool_rng(derive_seed(cfg.seed, "pose-pool", static_cast<std::uint64_t>(v % cfg.base_pose_pool)));
            base = sample_pose(pool_rng);
            Rng jitter_rng(derive_seed(cfg.seed, "base-jitter", static_cast<std::uint64_t>(v)));
            base = drift_pose(base, cfg.base_pose_jitter, jitter_rng);
        } else {
            Rng base_rng(derive_seed(cfg.seed, "base-pose", static_cast<std::uint64_t>(v)));
            base = sample_pose(base_rng);
        }
        Rng rng(derive_seed(cfg.seed, "video", static_cast<std::uint64_t>(v)));
        for (std::int64_t j = 0; j < cfg.crops_per_video; ++j) {
            const PoseParams p = drift_pose(base, cfg.intra_video_drift, rng);
            HandCrop c;
            c.crop_id = v * cfg.crops_per_video + j;
            c.video_id = v;
            c.frame_idx = j;
            c.keypoints = forward_kinematics(p);
            for (auto& k : c.keypoints) {
                if (cfg.keypoint_noise_sigma > 0.0) {
                    k.x += cfg.keypoint_noise_sigma * rng.normal();
                    k.y += cfg.keypoint_noise_sigma * rng.normal();
                }
                k.x = std::clamp(k.x, 0.0, 1.0);
                k.y = std::clamp(k.y, 0.0, 1.0);
            }
            c.confidence = rng.uniform(0.6, 1.0);
            if (rng.uniform() < cfg.left_fraction) {
                // Recorded as seen by a detector: a left hand is the mirror image.
                for (auto& k : c.keypoints) k.x = 1.0 - k.x;
                c.handedness = Handedness::Left;
            }
            crops.push_back(std::move(c));
            params.push_back(p);
        }
    }
    return {Corpus::from_crops(std::move(crops), cfg.n_videos), std::move(params)};
}

// Ground-truth sidecar: `# handclr-groundtruth v1` then one line per crop,
// `crop_id rotation flex1..flex5 abd1..abd5 scale`.

inline std::string serialize_ground_truth(const GroundTruth& gt) {
    std::string s = "# handclr-groundtruth v1\n# fields: crop_id rotation flex1..5 abd1..5 scale\n";
    for (const auto& [id, p] : gt) {
        s += std::to_string(id);
        for (double v : p.to_array()) {
            s += ' ';
            s += io::format_double(v);
        }
        s += '\n';
    }
    return s;
}

inline GroundTruth parse_ground_truth(std::string_view text) {
    GroundTruth gt;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto fields = io::split_ws(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++line_no;
        if (fields.empty() || fields[0].starts_with("#")) continue;
        if (fields.size() != 1 + kPoseParamDim) throw ParseError(line_no, "expected 13 fields");
        auto id = io::parse_number<std::int64_t>(fields[0]);
        if (!id) throw ParseError(line_no, "malformed crop id");
        std::array<double, kPoseParamDim> v{};
        for (std::size_t k = 0; k < kPoseParamDim; ++k) {
            auto x = io::parse_number<double>(fields[1 + k]);
            if (!x) throw ParseError(line_no, "malformed parameter");
            v[k] = *x;
        }
        if (!gt.emplace(*id, PoseParams::from_array(v)).second)
            throw DuplicateRecord("line " + std::to_string(line_no) + ": duplicate crop id");
    }
    return gt;
}

}  // namespace handclr
