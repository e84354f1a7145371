#pragma once

// Desk-scale contrastive pre-training: a two-layer encoder E with a linear
// projection head g, trained by plain gradient descent on NT-Xent, and a
// closed-form ridge probe that scores frozen embeddings against pose
// parameters.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/embed.hpp"
#include "handclr/error.hpp"
#include "handclr/io.hpp"
#include "handclr/loss.hpp"
#include "handclr/mine.hpp"
#include "handclr/rng.hpp"
#include "handclr/synth.hpp"

namespace handclr {

// ---------------------------------------------------------------------------
// Observations: 42 keypoint coordinates followed by per-video nuisance dims.
// The nuisance block stands in for appearance and background: it is shared by
// every crop of a video and differs between videos.
// ---------------------------------------------------------------------------

struct ObservationConfig {
    int n_nuisance = 16;
    double nuisance_scale = 0.5;
    /// Std-dev of the per-view appearance jitter added to nuisance dims.
    double appearance_sigma = 0.05;

    int dim() const { return kPoseDim + n_nuisance; }
    void validate() const {
        if (n_nuisance < 0) throw ConfigError("n_nuisance must be >= 0");
        if (!(nuisance_scale >= 0.0) || !(appearance_sigma >= 0.0)) throw ConfigError("nuisance scales must be >= 0");
    }
};

struct ObservationSet {
    Eigen::MatrixXd values;           // one row per corpus crop, corpus order
    std::vector<std::int64_t> video;  // video id per row
    std::unordered_map<std::int64_t, Eigen::Index> row_of_crop;
};

inline ObservationSet build_observations(const Corpus& corpus, const ObservationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ObservationSet out;
    out.values.resize(static_cast<Eigen::Index>(corpus.size()), cfg.dim());
    std::unordered_map<std::int64_t, Eigen::VectorXd> nuisance;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& c = corpus.crops()[i];
        auto it = nuisance.find(c.video_id);
        if (it == nuisance.end()) {
            Rng rng(derive_seed(seed, "nuisance", static_cast<std::uint64_t>(c.video_id)));
            Eigen::VectorXd v(cfg.n_nuisance);
            for (int k = 0; k < cfg.n_nuisance; ++k) v(k) = cfg.nuisance_scale * rng.normal();
            it = nuisance.emplace(c.video_id, std::move(v)).first;
        }
        const auto r = static_cast<Eigen::Index>(i);
        out.values.row(r).head(kPoseDim) = vectorize(c).transpose();
        out.values.row(r).tail(cfg.n_nuisance) = it->second.transpose();
        out.video.push_back(c.video_id);
        out.row_of_crop.emplace(c.crop_id, r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoder f = g o E:  E(x) = W2 act(W1 x + b1) + b2,  g(e) = W3 e.
// ---------------------------------------------------------------------------

enum class Activation { Tanh, Relu, Identity };

struct EncoderShape {
    int input = kPoseDim + 16;
    int hidden = 64;
    int embed = 32;
    int projection = 16;

    void validate() const {
        if (input < 1 || hidden < 1 || embed < 1 || projection < 2) throw ConfigError("encoder dims must be positive");
        if (projection % 2 != 0) throw ConfigError("projection dim must be even");
    }
};

struct Encoder {
    Eigen::MatrixXd w1;  // hidden x input
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // embed x hidden
    Eigen::VectorXd b2;
    Eigen::MatrixXd w3;  // projection x embed
    Activation activation = Activation::Tanh;
    /// Fixed (non-trained) input standardization: x' = (x - input_shift) * input_gain.
    Eigen::VectorXd input_shift;
    Eigen::VectorXd input_gain;

    EncoderShape shape() const {
        return {static_cast<int>(w1.cols()), static_cast<int>(w1.rows()), static_cast<int>(w2.rows()),
                static_cast<int>(w3.rows())};
    }

    static Encoder zeros(const EncoderShape& s, Activation act = Activation::Tanh) {
        s.validate();
        return {Eigen::MatrixXd::Zero(s.hidden, s.input), Eigen::VectorXd::Zero(s.hidden),
                Eigen::MatrixXd::Zero(s.embed, s.hidden),     Eigen::VectorXd::Zero(s.embed),
                Eigen::MatrixXd::Zero(s.projection, s.embed), act,
                Eigen::VectorXd::Zero(s.input),               Eigen::VectorXd::Ones(s.input)};
    }

    /// Glorot-uniform weights, zero biases.
    static Encoder random(const EncoderShape& s, std::uint64_t seed, Activation act = Activation::Tanh) {
        Encoder e = zeros(s, act);
        Rng rng(seed);
        auto fill = [&](Eigen::MatrixXd& w) {
            const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
        };
        fill(e.w1);
        fill(e.w2);
        fill(e.w3);
        return e;
    }

    /// Visits every parameter block in a fixed order.
    template <typename Fn>
    void for_each_block(Fn&& fn) {
        fn(w1.data(), w1.size());
        fn(b1.data(), b1.size());
        fn(w2.data(), w2.size());
        fn(b2.data(), b2.size());
        fn(w3.data(), w3.size());
    }
    template <typename Fn>
    void for_each_block(Fn&& fn) const {
        fn(w1.data(), w1.size());
        fn(b1.data(), b1.size());
        fn(w2.data(), w2.size());
        fn(b2.data(), b2.size());
        fn(w3.data(), w3.size());
    }

    friend bool operator==(const Encoder& a, const Encoder& b) {
        return a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2 && a.w3 == b.w3 &&
               a.activation == b.activation && a.input_shift == b.input_shift && a.input_gain == b.input_gain;
    }
};

using EncoderGrad = Encoder;  // same shapes, holds dL/dparam

/// Per-dimension standardization from the training observations; dims with
/// zero spread keep unit gain.
inline void set_input_standardization(Encoder& enc, const Eigen::MatrixXd& obs) {
    enc.input_shift = obs.colwise().mean().transpose();
    const Eigen::MatrixXd centered = obs.rowwise() - enc.input_shift.transpose();
    const Eigen::VectorXd sd = (centered.array().square().colwise().mean()).sqrt().transpose();
    enc.input_gain.resize(sd.size());
    for (Eigen::Index k = 0; k < sd.size(); ++k) enc.input_gain(k) = sd(k) > 0.0 ? 1.0 / sd(k) : 1.0;
}

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::Tanh: return std::tanh(x);
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Identity: return x;
    }
    return x;
}

/// Derivative expressed through the pre-activation and activation value.
inline double activate_grad(Activation a, double pre, double post) {
    switch (a) {
        case Activation::Tanh: return 1.0 - post * post;
        case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

/// Intermediates of a batched forward pass (rows are samples).
struct ForwardCache {
    Eigen::MatrixXd input;
    Eigen::MatrixXd pre1;
    Eigen::MatrixXd hidden;
    Eigen::MatrixXd embedding;
    Eigen::MatrixXd projection;
};

inline ForwardCache forward_batch(const Encoder& enc, const Eigen::MatrixXd& x) {
    if (x.cols() != enc.w1.cols())
        throw ShapeError("encoder expects " + std::to_string(enc.w1.cols()) + " inputs, got " + std::to_string(x.cols()));
    ForwardCache c;
    c.input = (x.rowwise() - enc.input_shift.transpose()) * enc.input_gain.asDiagonal();
    c.pre1 = (c.input * enc.w1.transpose()).rowwise() + enc.b1.transpose();
    c.hidden = c.pre1.unaryExpr([a = enc.activation](double v) { return activate(a, v); });
    c.embedding = (c.hidden * enc.w2.transpose()).rowwise() + enc.b2.transpose();
    c.projection = c.embedding * enc.w3.transpose();
    return c;
}

struct ForwardResult {
    Eigen::VectorXd embedding;
    Eigen::VectorXd projection;
    ForwardCache cache;
};

inline ForwardResult forward(const Encoder& enc, const Eigen::Ref<const Eigen::VectorXd>& obs) {
    ForwardCache c = forward_batch(enc, obs.transpose());
    ForwardResult r;
    r.embedding = c.embedding.row(0).transpose();
    r.projection = c.projection.row(0).transpose();
    r.cache = std::move(c);
    return r;
}

/// Backpropagates dL/dprojection (and optionally dL/dembedding) to parameters.
inline EncoderGrad backward(const Encoder& enc, const ForwardCache& c, const Eigen::MatrixXd& grad_projection) {
    EncoderGrad g = Encoder::zeros(enc.shape(), enc.activation);
    g.w3 = grad_projection.transpose() * c.embedding;
    const Eigen::MatrixXd grad_embed = grad_projection * enc.w3;
    g.w2 = grad_embed.transpose() * c.hidden;
    g.b2 = grad_embed.colwise().sum().transpose();
    Eigen::MatrixXd grad_pre = grad_embed * enc.w2;
    for (Eigen::Index i = 0; i < grad_pre.rows(); ++i)
        for (Eigen::Index k = 0; k < grad_pre.cols(); ++k)
            grad_pre(i, k) *= activate_grad(enc.activation, c.pre1(i, k), c.hidden(i, k));
    g.w1 = grad_pre.transpose() * c.input;
    g.b1 = grad_pre.colwise().sum().transpose();
    return g;
}

// ---------------------------------------------------------------------------
// Pair sources and training
// ---------------------------------------------------------------------------

enum class PairSource {
    SelfAugment,             // two augmentations of one crop
    SelfAugmentEquivariant,  // same, with inverse feature correction
    MinedPairs,              // cross-video mined positive, with inverse feature correction
};

inline constexpr std::array<PairSource, 3> kAllPairSources = {PairSource::SelfAugment,
                                                              PairSource::SelfAugmentEquivariant,
                                                              PairSource::MinedPairs};

inline std::string to_string(PairSource p) {
    switch (p) {
        case PairSource::SelfAugment: return "self_augment";
        case PairSource::SelfAugmentEquivariant: return "self_augment_equivariant";
        case PairSource::MinedPairs: return "mined_pairs";
    }
    return "?";
}

inline PairSource parse_pair_source(std::string_view s) {
    for (auto p : kAllPairSources)
        if (to_string(p) == s) return p;
    throw ConfigError("unknown pair source '" + std::string(s) + "'");
}

inline bool uses_correction(PairSource p) { return p != PairSource::SelfAugment; }

struct TrainConfig {
    PairSource pair_source = PairSource::MinedPairs;
    int batch_pairs = 32;
    int steps = 1500;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
    NtXentConfig loss{};
    TransformRanges transforms{};
    bool translate_features = false;
    EncoderShape shape{};
    Activation activation = Activation::Tanh;
    bool standardize_inputs = true;

    void validate() const {
        if (batch_pairs < 2) throw ConfigError("batch_pairs must be >= 2");
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
        loss.validate();
        transforms.validate();
        shape.validate();
    }
};

/// 2n augmented observations; rows 2k and 2k+1 form the k-th positive pair.
struct PairBatch {
    Eigen::MatrixXd obs;
    std::vector<AffineTransform> transforms;
    bool correct = false;
};

/// Draws the view of one observation row: geometric T on the keypoint block,
/// appearance jitter on the nuisance block.
inline Eigen::VectorXd augment_view(const Eigen::Ref<const Eigen::VectorXd>& obs, const AffineTransform& t,
                                    double appearance_sigma, Rng& rng) {
    Eigen::VectorXd v = obs;
    apply_transform_inplace(t, std::span<double>(v.data(), kPoseDim));
    for (Eigen::Index k = kPoseDim; k < v.size(); ++k) v(k) += appearance_sigma * rng.normal();
    return v;
}

/// Samples anchors uniformly without replacement and builds their views.
/// For MinedPairs the positive of anchor I is the manifest's J = SiM(I);
/// otherwise both views come from I.
class PairSampler {
public:
    PairSampler(const ObservationSet& obs, const PairManifest* manifest, const ObservationConfig& obs_cfg,
                const TrainConfig& cfg)
        : obs_(obs), obs_cfg_(obs_cfg), cfg_(cfg) {
        if (cfg.pair_source == PairSource::MinedPairs) {
            if (!manifest) throw MissingArtifact("MinedPairs training requires a pair manifest");
            for (const auto& p : manifest->pairs) {
                auto a = obs.row_of_crop.find(p.query_crop_id);
                auto b = obs.row_of_crop.find(p.positive_crop_id);
                if (a == obs.row_of_crop.end() || b == obs.row_of_crop.end())
                    throw StaleArtifact("pair manifest references crops missing from the corpus");
                anchors_.push_back(a->second);
                partner_.push_back(b->second);
            }
        } else {
            for (Eigen::Index r = 0; r < obs.values.rows(); ++r) {
                anchors_.push_back(r);
                partner_.push_back(r);
            }
        }
        if (anchors_.size() < static_cast<std::size_t>(cfg.batch_pairs))
            throw BatchTooSmall("fewer anchors than batch_pairs");
    }

    PairBatch sample(Rng& rng) const {
        const auto n = static_cast<std::size_t>(cfg_.batch_pairs);
        // Partial Fisher-Yates over anchor slots.
        std::vector<std::size_t> pick(anchors_.size());
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        for (std::size_t i = 0; i < n; ++i) std::swap(pick[i], pick[i + rng.index(pick.size() - i)]);

        PairBatch b;
        b.correct = uses_correction(cfg_.pair_source);
        b.obs.resize(static_cast<Eigen::Index>(2 * n), obs_.values.cols());
        b.transforms.reserve(2 * n);
        for (std::size_t k = 0; k < n; ++k) {
            const Eigen::Index rows[2] = {anchors_[pick[k]], partner_[pick[k]]};
            for (int v = 0; v < 2; ++v) {
                const AffineTransform t = sample_transform(rng, cfg_.transforms);
                b.obs.row(static_cast<Eigen::Index>(2 * k + v)) =
                    augment_view(obs_.values.row(rows[v]).transpose(), t, obs_cfg_.appearance_sigma, rng).transpose();
                b.transforms.push_back(t);
            }
        }
        return b;
    }

private:
    const ObservationSet& obs_;
    ObservationConfig obs_cfg_;
    TrainConfig cfg_;
    std::vector<Eigen::Index> anchors_;
    std::vector<Eigen::Index> partner_;
};

struct BatchLoss {
    double loss = 0.0;
    EncoderGrad grad;
};

/// NT-Xent of f(T(x)) (inverse-corrected when the batch asks for it) and its
/// gradient with respect to every encoder parameter.
inline BatchLoss batch_loss(const Encoder& enc, const PairBatch& batch, const TrainConfig& cfg) {
    ForwardCache cache = forward_batch(enc, batch.obs);
    Eigen::MatrixXd z = cache.projection;
    if (batch.correct)
        for (Eigen::Index r = 0; r < z.rows(); ++r)
            z.row(r) = inverse_correct(batch.transforms[static_cast<std::size_t>(r)], cache.projection.row(r).transpose(),
                                       cfg.translate_features)
                           .transpose();
    NtXentResult nx = nt_xent(z, cfg.loss);
    Eigen::MatrixXd dz = std::move(nx.gradient);
    if (batch.correct)
        for (Eigen::Index r = 0; r < dz.rows(); ++r)
            dz.row(r) = inverse_correct_backward(batch.transforms[static_cast<std::size_t>(r)], dz.row(r).transpose())
                            .transpose();
    return {nx.loss, backward(enc, cache, dz)};
}

/// One plain gradient-descent update. Throws DivergenceError on a non-finite
/// loss or non-finite features.
inline double train_step(Encoder& enc, const PairBatch& batch, const TrainConfig& cfg, long step = 0) {
    BatchLoss bl;
    try {
        bl = batch_loss(enc, batch, cfg);
    } catch (const DegenerateFeature&) {
        // Overflowed weights show up as non-finite features before any loss exists.
        bool finite = true;
        enc.for_each_block([&](const double* p, Eigen::Index n) {
            finite = finite && Eigen::Map<const Eigen::VectorXd>(p, n).allFinite();
        });
        if (!finite || !forward_batch(enc, batch.obs).projection.allFinite()) throw DivergenceError(step);
        throw;
    }
    if (!std::isfinite(bl.loss)) throw DivergenceError(step);
    const double lr = cfg.learning_rate;
    enc.w1 -= lr * bl.grad.w1;
    enc.b1 -= lr * bl.grad.b1;
    enc.w2 -= lr * bl.grad.w2;
    enc.b2 -= lr * bl.grad.b2;
    enc.w3 -= lr * bl.grad.w3;
    return bl.loss;
}

struct TrainResult {
    Encoder encoder;
    std::vector<double> losses;  // one per step
};

/// Full training run. The encoder init and the batch stream derive from
/// cfg.seed, so every pair source sees the same initial weights.
inline TrainResult train(const ObservationSet& obs, const PairManifest* manifest, const ObservationConfig& obs_cfg,
                         const TrainConfig& cfg, const std::function<void(long, double)>& on_step = {}) {
    cfg.validate();
    EncoderShape shape = cfg.shape;
    shape.input = static_cast<int>(obs.values.cols());
    TrainResult r{Encoder::random(shape, derive_seed(cfg.seed, "encoder-init"), cfg.activation), {}};
    if (cfg.standardize_inputs) set_input_standardization(r.encoder, obs.values);
    PairSampler sampler(obs, manifest, obs_cfg, cfg);
    Rng rng(derive_seed(cfg.seed, "batches"));
    r.losses.reserve(static_cast<std::size_t>(cfg.steps));
    for (long s = 0; s < cfg.steps; ++s) {
        const PairBatch batch = sampler.sample(rng);
        const double loss = train_step(r.encoder, batch, cfg, s);
        r.losses.push_back(loss);
        if (on_step) on_step(s, loss);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

inline constexpr double kProbeLambda = 1e-3;
inline constexpr int kProbeRetries = 3;

struct ProbeResult {
    double mse = 0.0;
    double lambda = kProbeLambda;
};

/// Ridge regression (unpenalized intercept) from train features to targets,
/// scored as mean squared error over every test sample and target dim. The
/// ridge term is raised x10 up to three times when the normal equations are
/// numerically singular.
inline ProbeResult ridge_probe(const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& train_y,
                               const Eigen::MatrixXd& test_x, const Eigen::MatrixXd& test_y,
                               double lambda = kProbeLambda) {
    if (train_x.rows() != train_y.rows() || test_x.rows() != test_y.rows() || train_x.cols() != test_x.cols() ||
        train_y.cols() != test_y.cols())
        throw ShapeError("probe feature/target shape mismatch");
    if (train_x.rows() < 1 || test_x.rows() < 1) throw ShapeError("probe needs train and test samples");
    const Eigen::RowVectorXd mx = train_x.colwise().mean();
    const Eigen::RowVectorXd my = train_y.colwise().mean();
    const Eigen::MatrixXd xc = train_x.rowwise() - mx;
    const Eigen::MatrixXd yc = train_y.rowwise() - my;
    const Eigen::MatrixXd gram = xc.transpose() * xc;
    const Eigen::MatrixXd rhs = xc.transpose() * yc;
    for (int attempt = 0; attempt <= kProbeRetries; ++attempt) {
        const Eigen::MatrixXd a = gram + lambda * Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() == Eigen::Success && llt.rcond() > 1e-14 && a.allFinite()) {
            const Eigen::MatrixXd w = llt.solve(rhs);
            const Eigen::MatrixXd pred = ((test_x.rowwise() - mx) * w).rowwise() + my;
            return {(pred - test_y).squaredNorm() / static_cast<double>(test_y.size()), lambda};
        }
        if (attempt < kProbeRetries) lambda *= 10.0;
    }
    throw SingularProbe("probe normal equations singular up to lambda " + io::format_double(lambda));
}

/// Labeled probe data: observations and pose-parameter targets.
struct LabeledSet {
    Eigen::MatrixXd obs;
    Eigen::MatrixXd targets;  // n x 12
};

inline Eigen::MatrixXd targets_of(const std::vector<PoseParams>& params) {
    Eigen::MatrixXd y(static_cast<Eigen::Index>(params.size()), static_cast<Eigen::Index>(kPoseParamDim));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto a = params[i].to_array();
        for (std::size_t k = 0; k < kPoseParamDim; ++k)
            y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = a[k];
    }
    return y;
}

/// Splits rows by video: a seeded holdout_fraction of videos forms the test set.
inline std::pair<LabeledSet, LabeledSet> split_by_video(const ObservationSet& obs, const Eigen::MatrixXd& targets,
                                                        double holdout_fraction, std::uint64_t seed) {
    std::vector<std::int64_t> videos(obs.video);
    std::sort(videos.begin(), videos.end());
    videos.erase(std::unique(videos.begin(), videos.end()), videos.end());
    if (videos.size() < 2) throw ShapeError("probe split needs at least two videos");
    Rng rng(seed);
    rng.shuffle(videos.begin(), videos.end());
    const auto n_test = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(videos.size()))), 1,
        videos.size() - 1);
    std::vector<std::int64_t> test_videos(videos.begin(), videos.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::sort(test_videos.begin(), test_videos.end());

    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index r = 0; r < obs.values.rows(); ++r)
        (std::binary_search(test_videos.begin(), test_videos.end(), obs.video[static_cast<std::size_t>(r)]) ? te : tr)
            .push_back(r);
    auto take = [&](const std::vector<Eigen::Index>& rows) {
        LabeledSet s;
        s.obs.resize(static_cast<Eigen::Index>(rows.size()), obs.values.cols());
        s.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            s.obs.row(static_cast<Eigen::Index>(i)) = obs.values.row(rows[i]);
            s.targets.row(static_cast<Eigen::Index>(i)) = targets.row(rows[i]);
        }
        return s;
    };
    return {take(tr), take(te)};
}

/// Frozen-encoder probe: ridge from E(obs) to pose parameters, held-out MSE.
inline ProbeResult linear_probe(const Encoder& enc, const LabeledSet& train_set, const LabeledSet& test_set,
                                double lambda = kProbeLambda) {
    if (train_set.obs.rows() < 10 * enc.w2.rows())
        throw ShapeError("probe needs at least 10x more samples than embedding dims");
    return ridge_probe(forward_batch(enc, train_set.obs).embedding, train_set.targets,
                       forward_batch(enc, test_set.obs).embedding, test_set.targets, lambda);
}

// ---------------------------------------------------------------------------
// Encoder file: "HCLRENC1", u32 version, u32 activation, 4 x u32 dims, u64
// provenance hash, then input shift and gain followed by w1 b1 w2 b2 w3, all
// column-major f64.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kEncoderMagic = "HCLRENC1";

inline std::string serialize_encoder(const Encoder& e, std::uint64_t provenance = 0) {
    io::BinaryWriter w;
    w.put_bytes(kEncoderMagic);
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.activation));
    const auto s = e.shape();
    for (int d : {s.input, s.hidden, s.embed, s.projection}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint64_t>(provenance);
    for (Eigen::Index i = 0; i < e.input_shift.size(); ++i) w.put<double>(e.input_shift(i));
    for (Eigen::Index i = 0; i < e.input_gain.size(); ++i) w.put<double>(e.input_gain(i));
    e.for_each_block([&](const double* p, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i) w.put<double>(p[i]);
    });
    return w.bytes();
}

inline std::pair<Encoder, std::uint64_t> parse_encoder(std::string_view bytes) {
    io::BinaryReader r(bytes);
    if (bytes.size() < kEncoderMagic.size() || r.get_bytes(kEncoderMagic.size()) != kEncoderMagic)
        throw ParseError(0, "not an encoder file");
    if (r.get<std::uint32_t>() != 1) throw ParseError(0, "unsupported encoder version");
    const auto act = r.get<std::uint32_t>();
    if (act > 2) throw ParseError(0, "bad activation tag");
    EncoderShape s;
    s.input = static_cast<int>(r.get<std::uint32_t>());
    s.hidden = static_cast<int>(r.get<std::uint32_t>());
    s.embed = static_cast<int>(r.get<std::uint32_t>());
    s.projection = static_cast<int>(r.get<std::uint32_t>());
    const auto prov = r.get<std::uint64_t>();
    if (s.input < 1 || s.hidden < 1 || s.embed < 1 || s.projection < 2 || s.projection % 2 != 0)
        throw ParseError(0, "bad encoder dims");
    const std::uint64_t n_values = 2ull * s.input + std::uint64_t(s.hidden) * (s.input + 1) +
                                   std::uint64_t(s.embed) * (s.hidden + 1) + std::uint64_t(s.projection) * s.embed;
    if (r.remaining() != 8 * n_values) throw ParseError(0, "encoder file size does not match its dims");
    Encoder e = Encoder::zeros(s, static_cast<Activation>(act));
    for (Eigen::Index i = 0; i < e.input_shift.size(); ++i) e.input_shift(i) = r.get<double>();
    for (Eigen::Index i = 0; i < e.input_gain.size(); ++i) e.input_gain(i) = r.get<double>();
    e.for_each_block([&](double* p, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i) p[i] = r.get<double>();
    });
    if (!r.at_end()) throw ParseError(0, "trailing bytes in encoder file");
    return {e, prov};
}

}  // namespace handclr
