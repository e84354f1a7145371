#pragma once

// Hand-crop data model: one record per detected hand instance, grouped into
// per-video frame sets. Keypoints are stored in crop-normalized [0,1] units so
// the downstream embedding does not depend on crop resolution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "handclr/error.hpp"
#include "handclr/io.hpp"
#include "handclr/rng.hpp"

namespace handclr {

inline constexpr std::size_t kNumJoints = 21;
inline constexpr double kDefaultConfidenceThreshold = 0.5;

enum class Handedness : std::uint8_t { Left, Right };

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

struct HandCrop {
    std::int64_t crop_id = 0;
    std::int64_t video_id = 0;
    std::int64_t frame_idx = 0;
    Handedness handedness = Handedness::Right;
    /// Joint order: wrist, then thumb/index/middle/ring/pinky with 4 joints each.
    std::vector<Point2> keypoints;
    double confidence = 1.0;

    friend bool operator==(const HandCrop&, const HandCrop&) = default;
};

/// Throws CorruptCrop unless the crop has 21 finite keypoints inside [0,1]².
inline void validate_crop(const HandCrop& crop) {
    if (crop.keypoints.size() != kNumJoints)
        throw CorruptCrop("crop " + std::to_string(crop.crop_id) + " has " +
                          std::to_string(crop.keypoints.size()) + " keypoints, expected 21");
    for (const auto& p : crop.keypoints) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0)
            throw CorruptCrop("crop " + std::to_string(crop.crop_id) + " has a keypoint outside [0,1]");
    }
    if (!(crop.confidence >= 0.0 && crop.confidence <= 1.0))
        throw CorruptCrop("crop " + std::to_string(crop.crop_id) + " has confidence outside [0,1]");
}

/// Ordered crop list plus its video partition. Immutable once built.
class Corpus {
public:
    Corpus() = default;

    /// Builds a corpus, checking every invariant. When `n_videos` is negative
    /// the video count is inferred as max(video_id) + 1.
    static Corpus from_crops(std::vector<HandCrop> crops, std::int64_t n_videos = -1) {
        std::int64_t max_video = -1;
        std::set<std::pair<std::int64_t, std::int64_t>> seen;
        std::set<std::int64_t> ids;
        for (const auto& c : crops) {
            validate_crop(c);
            if (c.video_id < 0 || c.frame_idx < 0)
                throw CorruptCrop("crop " + std::to_string(c.crop_id) + " has a negative video or frame index");
            if (!seen.emplace(c.video_id, c.frame_idx).second)
                throw DuplicateRecord("duplicate (video_id, frame_idx) = (" + std::to_string(c.video_id) + ", " +
                                      std::to_string(c.frame_idx) + ")");
            if (!ids.insert(c.crop_id).second)
                throw DuplicateRecord("duplicate crop_id " + std::to_string(c.crop_id));
            max_video = std::max(max_video, c.video_id);
        }
        if (n_videos < 0) n_videos = max_video + 1;
        if (max_video >= n_videos)
            throw CorruptCrop("video_id " + std::to_string(max_video) + " exceeds video count " +
                              std::to_string(n_videos));
        Corpus out;
        out.n_videos_ = n_videos;
        out.per_video_counts_.assign(static_cast<std::size_t>(n_videos), 0);
        for (const auto& c : crops) ++out.per_video_counts_[static_cast<std::size_t>(c.video_id)];
        out.crops_ = std::move(crops);
        return out;
    }

    const std::vector<HandCrop>& crops() const noexcept { return crops_; }
    std::size_t size() const noexcept { return crops_.size(); }
    bool empty() const noexcept { return crops_.empty(); }
    std::int64_t videos() const noexcept { return n_videos_; }
    const std::vector<std::int64_t>& per_video_counts() const noexcept { return per_video_counts_; }

    std::size_t count(Handedness h) const {
        return static_cast<std::size_t>(
            std::count_if(crops_.begin(), crops_.end(), [h](const HandCrop& c) { return c.handedness == h; }));
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;

private:
    std::vector<HandCrop> crops_;
    std::int64_t n_videos_ = 0;
    std::vector<std::int64_t> per_video_counts_;
};

/// Mirrors a left crop into a right crop (x' = 1 - x) keeping joint order.
inline HandCrop normalize_handedness(HandCrop crop) {
    if (crop.keypoints.size() != kNumJoints)
        throw CorruptCrop("crop " + std::to_string(crop.crop_id) + " has " +
                          std::to_string(crop.keypoints.size()) + " keypoints, expected 21");
    if (crop.handedness == Handedness::Left) {
        for (auto& p : crop.keypoints) p.x = 1.0 - p.x;
        crop.handedness = Handedness::Right;
    }
    return crop;
}

/// Subsamples the majority handedness (seeded, order preserving) so that the
/// class counts differ by at most one, then converts every crop to Right.
/// Balancing is global over the corpus, not per video.
inline Corpus balance_handedness(const Corpus& corpus, std::uint64_t seed) {
    if (corpus.empty()) throw EmptyCorpus("balance_handedness: empty corpus");
    std::vector<std::size_t> left, right;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        (corpus.crops()[i].handedness == Handedness::Left ? left : right).push_back(i);

    std::vector<bool> keep(corpus.size(), true);
    if (!left.empty() && !right.empty() && left.size() != right.size()) {
        auto& major = left.size() > right.size() ? left : right;
        const std::size_t target = std::min(left.size(), right.size());
        Rng rng(seed);
        rng.shuffle(major.begin(), major.end());
        for (std::size_t k = target; k < major.size(); ++k) keep[major[k]] = false;
    }

    std::vector<HandCrop> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (keep[i]) out.push_back(normalize_handedness(corpus.crops()[i]));
    return Corpus::from_crops(std::move(out), corpus.videos());
}

inline Corpus filter_by_confidence(const Corpus& corpus, double threshold = kDefaultConfidenceThreshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("confidence threshold must lie in [0,1]");
    std::vector<HandCrop> out;
    for (const auto& c : corpus.crops())
        if (c.confidence >= threshold) out.push_back(c);
    return Corpus::from_crops(std::move(out), corpus.videos());
}

/// Concatenates corpora, shifting video and crop ids into disjoint ranges.
inline Corpus concat_corpora(const std::vector<Corpus>& parts) {
    std::vector<HandCrop> out;
    std::int64_t video_offset = 0;
    std::int64_t crop_offset = 0;
    for (const auto& part : parts) {
        std::int64_t max_crop = -1;
        for (auto c : part.crops()) {
            max_crop = std::max(max_crop, c.crop_id);
            c.video_id += video_offset;
            c.crop_id += crop_offset;
            out.push_back(std::move(c));
        }
        video_offset += part.videos();
        crop_offset += max_crop + 1;
    }
    return Corpus::from_crops(std::move(out), video_offset);
}

// ---------------------------------------------------------------------------
// Manifest text format
//
//   # handclr-corpus v1
//   # fields: crop_id video_id frame_idx handedness confidence x1 y1 ... x21 y21
//   # videos: <N>
//   <crop_id> <video_id> <frame_idx> <R|L> <confidence> <42 coordinates>
//
// One whitespace-delimited record per line. Lines starting with '#' are
// comments except the `# videos:` directive. Doubles use the shortest
// round-trip decimal form.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCorpusMagic = "# handclr-corpus v1";

inline std::string serialize_manifest(const Corpus& corpus) {
    std::string s;
    s += kCorpusMagic;
    s += "\n# fields: crop_id video_id frame_idx handedness confidence";
    for (std::size_t j = 1; j <= kNumJoints; ++j) s += " x" + std::to_string(j) + " y" + std::to_string(j);
    s += "\n# videos: " + std::to_string(corpus.videos()) + "\n";
    for (const auto& c : corpus.crops()) {
        s += std::to_string(c.crop_id);
        s += ' ';
        s += std::to_string(c.video_id);
        s += ' ';
        s += std::to_string(c.frame_idx);
        s += c.handedness == Handedness::Right ? " R " : " L ";
        s += io::format_double(c.confidence);
        for (const auto& p : c.keypoints) {
            s += ' ';
            s += io::format_double(p.x);
            s += ' ';
            s += io::format_double(p.y);
        }
        s += '\n';
    }
    return s;
}

inline Corpus parse_manifest(std::string_view text) {
    std::vector<HandCrop> crops;
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    std::int64_t n_videos = -1;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;

        auto fields = io::split_ws(line);
        if (fields.empty()) continue;
        if (fields[0].starts_with("#")) {
            if (fields.size() == 3 && fields[0] == "#" && fields[1] == "videos:") {
                auto n = io::parse_number<std::int64_t>(fields[2]);
                if (!n || *n < 0) throw ParseError(line_no, "bad video count");
                n_videos = *n;
            }
            continue;
        }
        constexpr std::size_t kFields = 5 + 2 * kNumJoints;
        if (fields.size() != kFields)
            throw ParseError(line_no, "expected " + std::to_string(kFields) + " fields, found " +
                                          std::to_string(fields.size()));
        HandCrop c;
        auto id = io::parse_number<std::int64_t>(fields[0]);
        auto vid = io::parse_number<std::int64_t>(fields[1]);
        auto frame = io::parse_number<std::int64_t>(fields[2]);
        auto conf = io::parse_number<double>(fields[4]);
        if (!id || !vid || !frame || !conf) throw ParseError(line_no, "malformed numeric field");
        if (fields[3] == "R")
            c.handedness = Handedness::Right;
        else if (fields[3] == "L")
            c.handedness = Handedness::Left;
        else
            throw ParseError(line_no, "handedness must be R or L");
        c.crop_id = *id;
        c.video_id = *vid;
        c.frame_idx = *frame;
        c.confidence = *conf;
        c.keypoints.resize(kNumJoints);
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            auto x = io::parse_number<double>(fields[5 + 2 * j]);
            auto y = io::parse_number<double>(fields[6 + 2 * j]);
            if (!x || !y) throw ParseError(line_no, "malformed coordinate");
            c.keypoints[j] = {*x, *y};
        }
        try {
            validate_crop(c);
        } catch (const CorruptCrop& e) {
            throw ParseError(line_no, e.what());
        }
        if (!seen.emplace(c.video_id, c.frame_idx).second)
            throw DuplicateRecord("line " + std::to_string(line_no) + ": duplicate (video_id, frame_idx) = (" +
                                  std::to_string(c.video_id) + ", " + std::to_string(c.frame_idx) + ")");
        crops.push_back(std::move(c));
    }
    if (crops.empty() && n_videos < 0) n_videos = 0;
    return Corpus::from_crops(std::move(crops), n_videos);
}

inline void save_manifest(const Corpus& corpus, const std::string& path) {
    io::write_file(path, serialize_manifest(corpus));
}

inline Corpus load_manifest(const std::string& path) { return parse_manifest(io::read_file(path)); }

/// Provenance hash of a corpus: hash of its canonical manifest text.
inline std::uint64_t corpus_hash(const Corpus& corpus) { return io::content_hash(serialize_manifest(corpus)); }

}  // namespace handclr
