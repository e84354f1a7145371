#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "handclr/loss.hpp"
#include "handclr/synth.hpp"
#include "oracles.hpp"

using namespace handclr;

namespace {

Eigen::MatrixXd random_batch(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd b(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) b(r, c) = rng.normal();
    return b;
}

// Linear equivariant toy encoder: keypoints relative to the crop center.
Eigen::VectorXd toy_encode(const std::vector<Point2>& pts) {
    Eigen::VectorXd v(2 * static_cast<Eigen::Index>(pts.size()));
    for (std::size_t j = 0; j < pts.size(); ++j) {
        v(static_cast<Eigen::Index>(2 * j)) = pts[j].x - AffineTransform::kCenter;
        v(static_cast<Eigen::Index>(2 * j + 1)) = pts[j].y - AffineTransform::kCenter;
    }
    return v;
}

}  // namespace

TEST(Transform, SameSeedSameTransform) {
    EXPECT_EQ(sample_transform(5), sample_transform(5));
    EXPECT_NE(sample_transform(5), sample_transform(6));
}

TEST(Transform, SamplesStayInRange) {
    Rng rng(1);
    const TransformRanges r;
    for (int i = 0; i < 10000; ++i) {
        const auto t = sample_transform(rng, r);
        ASSERT_LE(std::abs(t.rotation), r.max_rotation);
        ASSERT_GE(t.scale, r.min_scale);
        ASSERT_LE(t.scale, r.max_scale);
        ASSERT_LE(std::abs(t.tx), r.max_translation);
        ASSERT_LE(std::abs(t.ty), r.max_translation);
    }
    TransformRanges bad;
    bad.min_scale = 0.1;
    EXPECT_THROW(sample_transform(1, bad), ConfigError);
}

TEST(Transform, IdentityLeavesPointsUnchanged) {
    Rng rng(2);
    const auto pts = oracle::random_crop(rng, 0, 0, 0).keypoints;
    const auto out = apply_transform(AffineTransform{}, pts);
    for (std::size_t j = 0; j < pts.size(); ++j) {
        EXPECT_DOUBLE_EQ(out[j].x, pts[j].x);
        EXPECT_DOUBLE_EQ(out[j].y, pts[j].y);
    }
}

TEST(Transform, HalfTurnAboutCenter) {
    AffineTransform t;
    t.rotation = std::numbers::pi;
    const Point2 p = apply_transform(t, {0.6, 0.5});
    EXPECT_NEAR(p.x, 0.4, 1e-15);
    EXPECT_NEAR(p.y, 0.5, 1e-15);
}

TEST(Transform, InverseUndoesTransform) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto t = sample_transform(rng);
        const auto pts = oracle::random_crop(rng, 0, 0, 0).keypoints;
        const auto back = apply_transform(t.inverse(), apply_transform(t, pts));
        for (std::size_t j = 0; j < pts.size(); ++j) {
            ASSERT_NEAR(back[j].x, pts[j].x, 1e-12);
            ASSERT_NEAR(back[j].y, pts[j].y, 1e-12);
        }
    }
}

TEST(Transform, InPlaceMatchesPointwise) {
    Rng rng(4);
    const auto t = sample_transform(rng);
    const auto pts = oracle::random_crop(rng, 0, 0, 0).keypoints;
    std::vector<double> xy;
    for (const auto& p : pts) xy.insert(xy.end(), {p.x, p.y});
    apply_transform_inplace(t, xy);
    const auto out = apply_transform(t, pts);
    for (std::size_t j = 0; j < pts.size(); ++j) {
        EXPECT_EQ(xy[2 * j], out[j].x);
        EXPECT_EQ(xy[2 * j + 1], out[j].y);
    }
}

TEST(InverseCorrect, IdentityLeavesFeaturesUnchanged) {
    Rng rng(5);
    const Eigen::VectorXd v = random_batch(rng, 1, 16).row(0).transpose();
    EXPECT_EQ(inverse_correct(AffineTransform{}, v), v);
}

TEST(InverseCorrect, PureRotationAppliesInverseRotation) {
    AffineTransform t;
    t.rotation = 0.7;
    Eigen::VectorXd v(2);
    v << 0.3, -1.2;
    const Eigen::VectorXd out = inverse_correct(t, v);
    const double c = std::cos(-0.7), s = std::sin(-0.7);
    EXPECT_NEAR(out(0), c * 0.3 - s * -1.2, 1e-15);
    EXPECT_NEAR(out(1), s * 0.3 + c * -1.2, 1e-15);
}

TEST(InverseCorrect, OddDimensionIsRejected) {
    EXPECT_THROW(inverse_correct(AffineTransform{}, Eigen::VectorXd::Zero(5)), ShapeError);
    EXPECT_THROW(inverse_correct_backward(AffineTransform{}, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST(InverseCorrect, RecoversLinearEncoderOutput) {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const auto t = sample_transform(rng);
        const auto pose = forward_kinematics(sample_pose(rng));
        const Eigen::VectorXd want = toy_encode(pose);
        const Eigen::VectorXd got = inverse_correct(t, toy_encode(apply_transform(t, pose)), true);
        ASSERT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9);
        // Without translation the identity holds for rotation and scale alone.
        AffineTransform rs = t;
        rs.tx = rs.ty = 0.0;
        const Eigen::VectorXd got_rs = inverse_correct(rs, toy_encode(apply_transform(rs, pose)));
        ASSERT_LT((got_rs - want).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(InverseCorrect, BackwardIsTheTranspose) {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        const auto t = sample_transform(rng);
        const Eigen::VectorXd x = random_batch(rng, 1, 8).row(0).transpose();
        const Eigen::VectorXd g = random_batch(rng, 1, 8).row(0).transpose();
        // <g, J x> == <J^T g, x> for the linear map J.
        EXPECT_NEAR(g.dot(inverse_correct(t, x)), inverse_correct_backward(t, g).dot(x), 1e-12);
    }
}

TEST(NtXent, IdenticalRowsGiveLogThree) {
    const Eigen::MatrixXd b = Eigen::MatrixXd::Ones(4, 3);
    EXPECT_NEAR(nt_xent(b).loss, std::log(3.0), 1e-12);
}

TEST(NtXent, OrthogonalPairsExample) {
    Eigen::MatrixXd b(4, 2);
    b << 1, 0, 1, 0, 0, 1, 0, 1;
    const double want = -std::log(std::numbers::e / (std::numbers::e + 2.0));
    EXPECT_NEAR(nt_xent(b, {1.0}).loss, want, 1e-12);
    EXPECT_NEAR(want, 0.5514, 1e-4);
}

TEST(NtXent, UniformSimilarityGivesLogTwoNMinusOne) {
    for (int n = 2; n <= 16; ++n) {
        const Eigen::MatrixXd b = Eigen::MatrixXd::Constant(2 * n, 5, 0.7);
        EXPECT_NEAR(nt_xent(b, {0.3}).loss, std::log(2.0 * n - 1.0), 1e-9) << "n=" << n;
    }
}

TEST(NtXent, MatchesDirectFormula) {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        const auto n = static_cast<Eigen::Index>(2 + rng.index(6));
        const Eigen::MatrixXd b = random_batch(rng, 2 * n, 1 + static_cast<Eigen::Index>(rng.index(8)));
        const double tau = rng.uniform(0.1, 2.0);
        EXPECT_NEAR(nt_xent(b, {tau}, false).loss, oracle::nt_xent(b, tau), 1e-10);
    }
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        const Eigen::MatrixXd b = random_batch(rng, 8, 6);
        const NtXentConfig cfg{0.5};
        const Eigen::MatrixXd analytic = nt_xent(b, cfg).gradient;
        const Eigen::MatrixXd numeric =
            oracle::numeric_gradient([&](const Eigen::MatrixXd& x) { return oracle::nt_xent(x, cfg.temperature); }, b);
        ASSERT_LT(oracle::max_relative_error(analytic, numeric), 1e-5) << "batch " << t;
    }
}

TEST(NtXent, LossIsPositive) {
    Rng rng(10);
    for (int t = 0; t < 100; ++t) EXPECT_GT(nt_xent(random_batch(rng, 6, 4), {0.5}, false).loss, 0.0);
}

TEST(NtXent, ScaleInvariance) {
    Rng rng(11);
    const Eigen::MatrixXd b = random_batch(rng, 8, 6);
    EXPECT_EQ(scalar_invariance_check(b, {}, 1.0).difference, 0.0);
    EXPECT_LT(scalar_invariance_check(b, {}, 7.3).difference, 1e-9);
    Eigen::VectorXd s(8);
    for (Eigen::Index i = 0; i < 8; ++i) s(i) = rng.uniform(0.01, 100.0);
    EXPECT_LT(scalar_invariance_check(b, {}, s).difference, 1e-9);
    EXPECT_THROW(scalar_invariance_check(b, {}, -1.0), ConfigError);
}

TEST(NtXent, PullingPositiveCloserLowersLoss) {
    Rng rng(12);
    for (int t = 0; t < 50; ++t) {
        Eigen::MatrixXd b = random_batch(rng, 6, 4);
        // Move row 1 toward row 0; the similarity of pair 0 grows, anchors 0 and 1 gain.
        Eigen::MatrixXd moved = b;
        moved.row(1) = 0.5 * (b.row(1).normalized() + b.row(0).normalized());
        const double s_before = b.row(0).normalized().dot(b.row(1).normalized());
        const double s_after = moved.row(0).normalized().dot(moved.row(1).normalized());
        ASSERT_GT(s_after, s_before);
        // The per-anchor loss of anchor 0 depends on row 1 only through its positive term.
        auto anchor0 = [](const Eigen::MatrixXd& z) {
            double denom = 0.0;
            for (Eigen::Index k = 1; k < z.rows(); ++k) denom += std::exp(z.row(0).normalized().dot(z.row(k).normalized()) / 0.5);
            return -z.row(0).normalized().dot(z.row(1).normalized()) / 0.5 + std::log(denom);
        };
        EXPECT_LT(anchor0(moved), anchor0(b));
    }
}

TEST(NtXent, SwappingRowsWithinPairsIsSymmetric) {
    Rng rng(13);
    const Eigen::MatrixXd b = random_batch(rng, 8, 5);
    Eigen::MatrixXd s = b;
    for (Eigen::Index k = 0; k < 8; k += 2) s.row(k).swap(s.row(k + 1));
    EXPECT_NEAR(nt_xent(b).loss, nt_xent(s).loss, 1e-12);
    // Permuting whole pairs also leaves the loss unchanged.
    Eigen::MatrixXd p = b;
    p.topRows(2).swap(p.bottomRows(2));
    EXPECT_NEAR(nt_xent(b).loss, nt_xent(p).loss, 1e-12);
}

TEST(NtXent, DegenerateInputsAreRejected) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Ones(4, 3);
    b.row(2).setZero();
    EXPECT_THROW(nt_xent(b), DegenerateFeature);
    EXPECT_THROW(nt_xent(Eigen::MatrixXd::Ones(2, 3)), BatchTooSmall);
    EXPECT_THROW(nt_xent(Eigen::MatrixXd::Ones(5, 3)), ShapeError);
    EXPECT_THROW(nt_xent(Eigen::MatrixXd::Ones(4, 3), {0.0}), ConfigError);
}
