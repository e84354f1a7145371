#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "handclr/corpus.hpp"
#include "oracles.hpp"

using namespace handclr;

namespace {

Corpus make_corpus(std::size_t n_left, std::size_t n_right, std::uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<HandCrop> crops;
    std::int64_t id = 0;
    for (std::size_t i = 0; i < n_left + n_right; ++i, ++id)
        crops.push_back(oracle::random_crop(rng, id, id % 7, id / 7, i < n_left ? Handedness::Left : Handedness::Right));
    return Corpus::from_crops(std::move(crops));
}

double keypoint_distance(const HandCrop& c, std::size_t a, std::size_t b) {
    return std::hypot(c.keypoints[a].x - c.keypoints[b].x, c.keypoints[a].y - c.keypoints[b].y);
}

}  // namespace

TEST(Handedness, RightCropIsUnchanged) {
    Rng rng(3);
    const HandCrop c = oracle::random_crop(rng, 0, 0, 0, Handedness::Right);
    EXPECT_EQ(normalize_handedness(c), c);
}

TEST(Handedness, LeftCropIsMirrored) {
    Rng rng(3);
    HandCrop c = oracle::random_crop(rng, 0, 0, 0, Handedness::Left);
    c.keypoints[0] = {0.2, 0.4};
    const HandCrop r = normalize_handedness(c);
    EXPECT_EQ(r.handedness, Handedness::Right);
    EXPECT_DOUBLE_EQ(r.keypoints[0].x, 0.8);
    EXPECT_DOUBLE_EQ(r.keypoints[0].y, 0.4);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
        EXPECT_DOUBLE_EQ(r.keypoints[j].x, 1.0 - c.keypoints[j].x);
        EXPECT_DOUBLE_EQ(r.keypoints[j].y, c.keypoints[j].y);
    }
}

TEST(Handedness, SecondApplicationIsIdentity) {
    Rng rng(4);
    const HandCrop c = oracle::random_crop(rng, 0, 0, 0, Handedness::Left);
    const HandCrop once = normalize_handedness(c);
    EXPECT_EQ(normalize_handedness(once), once);
}

TEST(Handedness, MirroringPreservesDistances) {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const HandCrop c = oracle::random_crop(rng, t, 0, t, Handedness::Left);
        const HandCrop r = normalize_handedness(c);
        for (std::size_t a = 0; a < kNumJoints; ++a)
            for (std::size_t b = a + 1; b < kNumJoints; ++b)
                EXPECT_NEAR(keypoint_distance(c, a, b), keypoint_distance(r, a, b), 1e-15);
    }
}

TEST(Handedness, WrongKeypointCountIsCorrupt) {
    Rng rng(6);
    HandCrop c = oracle::random_crop(rng, 0, 0, 0);
    c.keypoints.pop_back();
    EXPECT_THROW(normalize_handedness(c), CorruptCrop);
}

TEST(Balance, AlreadyBalancedKeepsEverything) {
    const Corpus c = make_corpus(100, 100);
    const Corpus b = balance_handedness(c, 9);
    EXPECT_EQ(b.size(), 200u);
    EXPECT_EQ(b.count(Handedness::Right), 200u);
}

TEST(Balance, MajorityIsSubsampled) {
    const Corpus c = make_corpus(150, 100);
    const Corpus b = balance_handedness(c, 9);
    EXPECT_EQ(b.size(), 200u);
    // Recount from the input: the survivors that were left hands in the input.
    std::size_t left_kept = 0;
    for (const auto& crop : b.crops())
        for (const auto& orig : c.crops())
            if (orig.crop_id == crop.crop_id && orig.handedness == Handedness::Left) ++left_kept;
    EXPECT_EQ(left_kept, 100u);
    EXPECT_EQ(b.count(Handedness::Right), 200u);
    EXPECT_EQ(balance_handedness(c, 9), b);
    EXPECT_NE(balance_handedness(c, 10), b);
}

TEST(Balance, SingleClassPassesThrough) {
    const Corpus c = make_corpus(0, 50);
    EXPECT_EQ(balance_handedness(c, 1), c);
    const Corpus l = make_corpus(30, 0);
    const Corpus b = balance_handedness(l, 1);
    EXPECT_EQ(b.size(), 30u);
    EXPECT_EQ(b.count(Handedness::Right), 30u);
}

TEST(Balance, EmptyCorpusIsRejected) { EXPECT_THROW(balance_handedness(Corpus{}, 0), EmptyCorpus); }

TEST(Balance, ClassDifferenceAtMostOneOnRandomCorpora) {
    Rng rng(77);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.index(60);
        std::vector<HandCrop> crops;
        std::size_t left = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_left = rng.uniform() < rng.uniform();
            left += is_left;
            crops.push_back(oracle::random_crop(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(i % 5),
                                                static_cast<std::int64_t>(i / 5),
                                                is_left ? Handedness::Left : Handedness::Right));
        }
        const Corpus b = balance_handedness(Corpus::from_crops(crops), static_cast<std::uint64_t>(t));
        const std::size_t right = n - left;
        const std::size_t expect = (left == 0 || right == 0) ? n : 2 * std::min(left, right);
        EXPECT_EQ(b.size(), expect);
        std::size_t kept_left = 0;
        for (const auto& c : b.crops()) kept_left += crops[static_cast<std::size_t>(c.crop_id)].handedness == Handedness::Left;
        const std::size_t kept_right = b.size() - kept_left;
        if (left && right) {
            EXPECT_LE(std::max(kept_left, kept_right) - std::min(kept_left, kept_right), 1u);
        }
    }
}

TEST(Confidence, ThresholdZeroKeepsAll) {
    const Corpus c = make_corpus(10, 10);
    EXPECT_EQ(filter_by_confidence(c, 0.0), c);
}

TEST(Confidence, ThresholdOneDropsAllBelowOne) {
    Corpus c = make_corpus(10, 10);
    const Corpus f = filter_by_confidence(c, 1.0);
    EXPECT_TRUE(f.empty());
    EXPECT_EQ(f.videos(), c.videos());
}

TEST(Confidence, MixedConfidences) {
    Rng rng(2);
    std::vector<HandCrop> crops;
    const double conf[] = {0.3, 0.7, 0.9};
    for (int i = 0; i < 3; ++i) {
        crops.push_back(oracle::random_crop(rng, i, i, 0));
        crops.back().confidence = conf[i];
    }
    const Corpus f = filter_by_confidence(Corpus::from_crops(crops), 0.5);
    EXPECT_EQ(f.size(), 2u);
    EXPECT_EQ(f.per_video_counts(), (std::vector<std::int64_t>{0, 1, 1}));
}

TEST(Confidence, ThresholdOutsideUnitIntervalIsRejected) {
    EXPECT_THROW(filter_by_confidence(make_corpus(1, 1), 1.5), ConfigError);
}

TEST(CorpusInvariants, DuplicateVideoFrameIsRejected) {
    Rng rng(1);
    std::vector<HandCrop> crops = {oracle::random_crop(rng, 0, 2, 5), oracle::random_crop(rng, 1, 2, 5)};
    EXPECT_THROW(Corpus::from_crops(crops), DuplicateRecord);
}

TEST(CorpusInvariants, PerVideoCountsSumToSize) {
    const Corpus c = make_corpus(13, 29);
    std::int64_t total = 0;
    for (auto n : c.per_video_counts()) total += n;
    EXPECT_EQ(total, static_cast<std::int64_t>(c.size()));
    for (const auto& crop : c.crops()) EXPECT_LT(crop.video_id, c.videos());
}

TEST(CorpusInvariants, OutOfRangeKeypointIsCorrupt) {
    Rng rng(1);
    HandCrop c = oracle::random_crop(rng, 0, 0, 0);
    c.keypoints[3].y = 1.01;
    EXPECT_THROW(Corpus::from_crops({c}), CorruptCrop);
    c.keypoints[3].y = std::nan("");
    EXPECT_THROW(Corpus::from_crops({c}), CorruptCrop);
}

TEST(CorpusInvariants, ConcatenationUsesDisjointIds) {
    const Corpus a = make_corpus(3, 4, 1), b = make_corpus(2, 5, 2);
    const Corpus c = concat_corpora({a, b});
    EXPECT_EQ(c.size(), a.size() + b.size());
    EXPECT_EQ(c.videos(), a.videos() + b.videos());
    for (std::size_t i = a.size(); i < c.size(); ++i) EXPECT_GE(c.crops()[i].video_id, a.videos());
}

TEST(Manifest, RoundTripIsBitExact) {
    const Corpus c = make_corpus(17, 23, 8);
    const Corpus back = parse_manifest(serialize_manifest(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(serialize_manifest(back), serialize_manifest(c));
}

TEST(Manifest, SaveAndLoadFile) {
    const auto path = std::filesystem::temp_directory_path() / "handclr_manifest_roundtrip.txt";
    const Corpus c = make_corpus(4, 4, 3);
    save_manifest(c, path.string());
    EXPECT_EQ(load_manifest(path.string()), c);
    std::filesystem::remove(path);
}

TEST(Manifest, ShortRecordReportsItsLine) {
    const Corpus c = make_corpus(2, 2, 3);
    std::string text = serialize_manifest(c);
    // Drop the last coordinate pair of the second record (line 5).
    std::size_t line_start = 0;
    for (int i = 0; i < 4; ++i) line_start = text.find('\n', line_start) + 1;
    const std::size_t line_end = text.find('\n', line_start);
    std::size_t cut = line_end;
    for (int i = 0; i < 2; ++i) cut = text.rfind(' ', cut - 1);
    text.erase(cut, line_end - cut);
    try {
        parse_manifest(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 5u);
    }
}

TEST(Manifest, DuplicateRecordIsReported) {
    const Corpus c = make_corpus(1, 1, 3);
    std::string text = serialize_manifest(c);
    const std::size_t last = text.rfind('\n', text.size() - 2) + 1;
    text += text.substr(last);
    EXPECT_THROW(parse_manifest(text), DuplicateRecord);
}

TEST(Manifest, EmptyFileIsEmptyCorpus) {
    const Corpus c = parse_manifest("");
    EXPECT_TRUE(c.empty());
    EXPECT_EQ(c.videos(), 0);
}

TEST(Manifest, MissingFileIsMissingArtifact) {
    EXPECT_THROW(load_manifest("/nonexistent/handclr/corpus.txt"), MissingArtifact);
}
