#pragma once

// Pose vectorization and PCA embedding: p = M^T (phi - mean), where phi is the
// 42-dim concatenation of 21 (x, y) keypoints and M holds the top-D principal
// directions of the fit set.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/error.hpp"
#include "handclr/io.hpp"
#include "handclr/rng.hpp"

namespace handclr {

inline constexpr int kPoseDim = 42;
inline constexpr int kDefaultEmbeddingDim = 14;
inline constexpr std::size_t kDefaultMaxFitSamples = 200'000;

using PoseVector = Eigen::Matrix<double, kPoseDim, 1>;
using PoseEmbedding = Eigen::VectorXd;

/// Interleaved (x1, y1, ..., x21, y21). Requires a Right crop.
inline PoseVector vectorize(const HandCrop& crop) {
    if (crop.handedness != Handedness::Right)
        throw HandednessError("crop " + std::to_string(crop.crop_id) + " must be normalized to Right first");
    if (crop.keypoints.size() != kNumJoints) throw CorruptCrop("crop has a malformed keypoint count");
    PoseVector v;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
        v(static_cast<Eigen::Index>(2 * j)) = crop.keypoints[j].x;
        v(static_cast<Eigen::Index>(2 * j + 1)) = crop.keypoints[j].y;
    }
    return v;
}

/// Row-stacked pose vectors (n x 42) for every crop of a corpus.
inline Eigen::MatrixXd vectorize_all(const Corpus& corpus) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(corpus.size()), kPoseDim);
    for (std::size_t i = 0; i < corpus.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = vectorize(corpus.crops()[i]).transpose();
    return x;
}

struct PcaModel {
    static constexpr std::uint32_t kSignLargestPositive = 1;

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kPoseDim);
    Eigen::MatrixXd projection;   // 42 x d_out, orthonormal columns
    Eigen::VectorXd eigenvalues;  // d_out, non-increasing
    double total_variance = 0.0;  // trace of the fit-set covariance
    std::uint64_t n_fit = 0;
    std::uint64_t sample_seed = 0;
    std::uint64_t corpus_hash = 0;  // provenance; 0 when fitted outside the pipeline
    bool rank_deficient = false;
    bool whiten = false;

    int d_out() const { return static_cast<int>(projection.cols()); }

    friend bool operator==(const PcaModel& a, const PcaModel& b) {
        return a.mean == b.mean && a.projection == b.projection && a.eigenvalues == b.eigenvalues &&
               a.total_variance == b.total_variance && a.n_fit == b.n_fit && a.sample_seed == b.sample_seed &&
               a.corpus_hash == b.corpus_hash && a.rank_deficient == b.rank_deficient && a.whiten == b.whiten;
    }
};

/// Eigenvalues below this fraction of max(1, largest) count as zero when
/// deciding the effective rank.
inline constexpr double kRankTolerance = 1e-12;

/// Fits PCA on the rows of `data` (n x 42).
///
/// Centers on the sample mean, eigendecomposes the 42x42 covariance (divisor
/// n-1), and keeps the top d_out eigenvectors. Each column is signed so that
/// its largest-magnitude entry (first on ties) is positive. When n exceeds
/// max_fit_samples, a seeded subsample of that size is used. A fit whose
/// effective rank is below d_out is returned with rank_deficient set.
inline PcaModel pca_fit(const Eigen::MatrixXd& data, int d_out = kDefaultEmbeddingDim, std::uint64_t sample_seed = 0,
                        std::size_t max_fit_samples = kDefaultMaxFitSamples) {
    if (d_out < 1 || d_out > kPoseDim) throw ConfigError("d_out must lie in [1, 42]");
    if (data.cols() != kPoseDim) throw ShapeError("pca_fit expects 42 columns");
    if (data.rows() == 0) throw EmptyCorpus("pca_fit: no samples");
    if (max_fit_samples == 0) throw ConfigError("max_fit_samples must be positive");

    Eigen::MatrixXd fit;
    const auto n_all = static_cast<std::size_t>(data.rows());
    if (n_all > max_fit_samples) {
        std::vector<Eigen::Index> idx(n_all);
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        Rng rng(sample_seed);
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(max_fit_samples);
        std::sort(idx.begin(), idx.end());
        fit.resize(static_cast<Eigen::Index>(max_fit_samples), kPoseDim);
        for (std::size_t i = 0; i < idx.size(); ++i) fit.row(static_cast<Eigen::Index>(i)) = data.row(idx[i]);
    } else {
        fit = data;
    }

    PcaModel model;
    model.n_fit = static_cast<std::uint64_t>(fit.rows());
    model.sample_seed = sample_seed;
    model.mean = fit.colwise().mean().transpose();
    const Eigen::MatrixXd centered = fit.rowwise() - model.mean.transpose();
    const double denom = fit.rows() > 1 ? static_cast<double>(fit.rows() - 1) : 1.0;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    model.total_variance = cov.trace();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw ShapeError("covariance eigendecomposition failed");
    // Eigen returns ascending order; take columns from the back.
    const Eigen::VectorXd& evals = solver.eigenvalues();
    const Eigen::MatrixXd& evecs = solver.eigenvectors();
    model.projection.resize(kPoseDim, d_out);
    model.eigenvalues.resize(d_out);
    for (int k = 0; k < d_out; ++k) {
        const int src = kPoseDim - 1 - k;
        Eigen::VectorXd col = evecs.col(src);
        Eigen::Index arg = 0;
        for (Eigen::Index r = 1; r < col.size(); ++r)
            if (std::abs(col(r)) > std::abs(col(arg))) arg = r;
        if (col(arg) < 0.0) col = -col;
        model.projection.col(k) = col;
        model.eigenvalues(k) = std::max(0.0, evals(src));
    }
    const double largest = std::max(0.0, evals(kPoseDim - 1));
    const double tol = kRankTolerance * std::max(1.0, largest);
    int rank = 0;
    for (Eigen::Index k = 0; k < evals.size(); ++k)
        if (evals(k) > tol) ++rank;
    model.rank_deficient = rank < d_out;
    return model;
}

inline PcaModel pca_fit(std::span<const PoseVector> vectors, int d_out = kDefaultEmbeddingDim,
                        std::uint64_t sample_seed = 0, std::size_t max_fit_samples = kDefaultMaxFitSamples) {
    Eigen::MatrixXd data(static_cast<Eigen::Index>(vectors.size()), kPoseDim);
    for (std::size_t i = 0; i < vectors.size(); ++i) data.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
    return pca_fit(data, d_out, sample_seed, max_fit_samples);
}

/// M^T (v - mean); divided by sqrt(eigenvalue) per component when the model
/// has whitening enabled (off by default).
inline PoseEmbedding pca_project(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
    PoseEmbedding p = model.projection.transpose() * (v - model.mean);
    if (model.whiten) {
        for (Eigen::Index k = 0; k < p.size(); ++k)
            p(k) = model.eigenvalues(k) > 0.0 ? p(k) / std::sqrt(model.eigenvalues(k)) : 0.0;
    }
    return p;
}

/// Row-wise projection of an n x 42 matrix.
inline Eigen::MatrixXd pca_project_rows(const PcaModel& model, const Eigen::MatrixXd& rows) {
    Eigen::MatrixXd out(rows.rows(), model.d_out());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) out.row(i) = pca_project(model, rows.row(i).transpose()).transpose();
    return out;
}

inline PoseVector pca_reconstruct(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& p) {
    Eigen::VectorXd q = p;
    if (model.whiten)
        for (Eigen::Index k = 0; k < q.size(); ++k) q(k) *= std::sqrt(model.eigenvalues(k));
    return model.mean + model.projection * q;
}

/// Fraction of fit-set variance captured by the first k components; 1 when
/// the fit set has zero variance.
inline double explained_variance(const PcaModel& model, int k) {
    if (k < 1 || k > model.d_out()) throw ConfigError("explained_variance: k must lie in [1, d_out]");
    if (model.total_variance <= 0.0) return 1.0;
    return std::clamp(model.eigenvalues.head(k).sum() / model.total_variance, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Binary model file, little-endian:
//
//   offset  size      field
//   0       8         magic "HCLRPCA1"
//   8       4  u32    format version (1)
//   12      4  u32    d_out
//   16      4  u32    sign convention tag (1 = largest-magnitude entry positive)
//   20      4  u32    flags (bit0 rank_deficient, bit1 whiten)
//   24      8  u64    n_fit
//   32      8  u64    sample_seed
//   40      8  u64    corpus_hash
//   48      8  f64    total_variance
//   56      42*8      mean
//   ...     42*d*8    projection, column-major
//   ...     d*8       eigenvalues
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPcaMagic = "HCLRPCA1";

inline std::string serialize_pca(const PcaModel& m) {
    io::BinaryWriter w;
    w.put_bytes(kPcaMagic);
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.d_out()));
    w.put<std::uint32_t>(PcaModel::kSignLargestPositive);
    w.put<std::uint32_t>((m.rank_deficient ? 1u : 0u) | (m.whiten ? 2u : 0u));
    w.put<std::uint64_t>(m.n_fit);
    w.put<std::uint64_t>(m.sample_seed);
    w.put<std::uint64_t>(m.corpus_hash);
    w.put<double>(m.total_variance);
    for (Eigen::Index r = 0; r < kPoseDim; ++r) w.put<double>(m.mean(r));
    for (Eigen::Index c = 0; c < m.projection.cols(); ++c)
        for (Eigen::Index r = 0; r < kPoseDim; ++r) w.put<double>(m.projection(r, c));
    for (Eigen::Index k = 0; k < m.eigenvalues.size(); ++k) w.put<double>(m.eigenvalues(k));
    return w.bytes();
}

inline PcaModel parse_pca(std::string_view bytes) {
    io::BinaryReader r(bytes);
    if (bytes.size() < kPcaMagic.size() || r.get_bytes(kPcaMagic.size()) != kPcaMagic)
        throw ParseError(0, "not a PCA model file");
    if (r.get<std::uint32_t>() != 1) throw ParseError(0, "unsupported PCA model version");
    const auto d = r.get<std::uint32_t>();
    if (d < 1 || d > static_cast<std::uint32_t>(kPoseDim)) throw ParseError(0, "bad d_out in PCA model");
    if (r.get<std::uint32_t>() != PcaModel::kSignLargestPositive) throw ParseError(0, "unknown sign convention");
    const auto flags = r.get<std::uint32_t>();
    PcaModel m;
    m.rank_deficient = flags & 1u;
    m.whiten = flags & 2u;
    m.n_fit = r.get<std::uint64_t>();
    m.sample_seed = r.get<std::uint64_t>();
    m.corpus_hash = r.get<std::uint64_t>();
    m.total_variance = r.get<double>();
    for (Eigen::Index i = 0; i < kPoseDim; ++i) m.mean(i) = r.get<double>();
    m.projection.resize(kPoseDim, d);
    for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index i = 0; i < kPoseDim; ++i) m.projection(i, c) = r.get<double>();
    m.eigenvalues.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) m.eigenvalues(k) = r.get<double>();
    if (!r.at_end()) throw ParseError(0, "trailing bytes in PCA model file");
    return m;
}

/// Human-readable dump for debugging; not read back.
inline std::string pca_to_text(const PcaModel& m) {
    std::string s = "# handclr-pca text export\n";
    s += "d_out " + std::to_string(m.d_out()) + "\n";
    s += "n_fit " + std::to_string(m.n_fit) + "\n";
    s += "corpus_hash " + io::hex64(m.corpus_hash) + "\n";
    s += "rank_deficient " + std::to_string(m.rank_deficient ? 1 : 0) + "\n";
    s += "total_variance " + io::format_double(m.total_variance) + "\n";
    s += "eigenvalues";
    for (Eigen::Index k = 0; k < m.eigenvalues.size(); ++k) s += " " + io::format_double(m.eigenvalues(k));
    s += "\nmean";
    for (Eigen::Index i = 0; i < kPoseDim; ++i) s += " " + io::format_double(m.mean(i));
    s += "\n";
    for (Eigen::Index c = 0; c < m.projection.cols(); ++c) {
        s += "component " + std::to_string(c);
        for (Eigen::Index i = 0; i < kPoseDim; ++i) s += " " + io::format_double(m.projection(i, c));
        s += "\n";
    }
    return s;
}

inline void save_pca(const PcaModel& m, const std::string& path) { io::write_file(path, serialize_pca(m)); }
inline PcaModel load_pca(const std::string& path) { return parse_pca(io::read_file(path)); }

}  // namespace handclr
