#pragma once

// Cross-video similar-hand mining. For a query crop from video v the positive
// is the crop with the smallest Euclidean embedding distance among all crops
// of every other video. Ties go to the smallest (video_id, frame_idx).
//
// The index stores rows sorted by (video_id, frame_idx), so each video is a
// contiguous row range and the exclusion set is "everything outside that
// range". With that ordering a strict-less forward scan resolves ties to the
// lexicographically smallest candidate for free.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/embed.hpp"
#include "handclr/error.hpp"
#include "handclr/io.hpp"
#include "handclr/parallel.hpp"
#include "handclr/rng.hpp"
#include "handclr/synth.hpp"

namespace handclr {

enum class SearchMode { Exact, Approx };

inline std::string to_string(SearchMode m) { return m == SearchMode::Exact ? "exact" : "approx"; }
inline SearchMode parse_search_mode(std::string_view s) {
    if (s == "exact") return SearchMode::Exact;
    if (s == "approx") return SearchMode::Approx;
    throw ConfigError("unknown search mode '" + std::string(s) + "'");
}

inline constexpr std::string_view kTieBreakVersion = "lex-video-frame-v1";
inline constexpr std::size_t kDefaultApproxChecks = 2048;
inline constexpr std::size_t kKdLeafSize = 24;

class EmbeddingIndex {
public:
    static constexpr std::size_t kQueryBatch = 4;
#if defined(__AVX__)
    static constexpr std::size_t kTileRows = 8;
#else
    static constexpr std::size_t kTileRows = 2;
#endif
    static constexpr std::size_t kMaxDimForTiles = 64;

    struct Row {
        std::int64_t crop_id;
        std::int64_t video_id;
        std::int64_t frame_idx;
    };

    std::size_t size() const noexcept { return meta_.size(); }
    int dim() const noexcept { return dim_; }
    SearchMode mode() const noexcept { return mode_; }
    std::size_t approx_checks() const noexcept { return approx_checks_; }
    const Row& row_meta(std::size_t r) const { return meta_[r]; }

    /// Embedding of row r (length dim()).
    std::span<const double> embedding(std::size_t r) const {
        return {rows_.data() + r * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
    }

    std::size_t row_of(std::int64_t crop_id) const {
        auto it = row_of_crop_.find(crop_id);
        if (it == row_of_crop_.end()) throw ConfigError("crop id " + std::to_string(crop_id) + " is not in the index");
        return it->second;
    }

    /// Rows [begin, end) belonging to the same video as row r.
    std::pair<std::size_t, std::size_t> video_range(std::size_t r) const {
        return video_ranges_.at(meta_[r].video_id);
    }

    /// Builds an index over precomputed embeddings (one row per entry of `meta`).
    static EmbeddingIndex from_embeddings(const Eigen::MatrixXd& emb, std::vector<Row> meta,
                                          SearchMode mode = SearchMode::Exact,
                                          std::size_t approx_checks = kDefaultApproxChecks) {
        if (meta.empty()) throw EmptyCorpus("build_index: empty corpus");
        if (static_cast<std::size_t>(emb.rows()) != meta.size()) throw ShapeError("embedding/meta row mismatch");
        EmbeddingIndex idx;
        idx.mode_ = mode;
        idx.approx_checks_ = approx_checks;
        idx.dim_ = static_cast<int>(emb.cols());
        const std::size_t n = meta.size();
        const auto d = static_cast<std::size_t>(idx.dim_);

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::tie(meta[a].video_id, meta[a].frame_idx) < std::tie(meta[b].video_id, meta[b].frame_idx);
        });

        idx.meta_.reserve(n);
        idx.rows_.resize(n * d);
        const std::size_t n_tiles = (n + kTileRows - 1) / kTileRows;
        if (d <= kMaxDimForTiles) idx.tiles_.assign(n_tiles * d * kTileRows, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t src = order[r];
            idx.meta_.push_back(meta[src]);
            for (std::size_t k = 0; k < d; ++k) {
                const double v = emb(static_cast<Eigen::Index>(src), static_cast<Eigen::Index>(k));
                idx.rows_[r * d + k] = v;
                if (d <= kMaxDimForTiles) idx.tiles_[((r / kTileRows) * d + k) * kTileRows + r % kTileRows] = v;
            }
            if (!idx.row_of_crop_.emplace(meta[src].crop_id, r).second)
                throw DuplicateRecord("duplicate crop id " + std::to_string(meta[src].crop_id) + " in index");
        }
        for (std::size_t r = 0; r < n; ++r) {
            const auto v = idx.meta_[r].video_id;
            if (r > 0 && idx.meta_[r - 1].video_id == v) {
                if (idx.meta_[r - 1].frame_idx == idx.meta_[r].frame_idx)
                    throw DuplicateRecord("duplicate (video_id, frame_idx) in index");
                idx.video_ranges_[v].second = r + 1;
            } else {
                idx.video_ranges_[v] = {r, r + 1};
            }
        }
        if (mode == SearchMode::Approx) idx.build_tree();
        return idx;
    }

    /// Squared distance between rows, summed over dimensions in order.
    double squared_distance(std::size_t a, std::size_t b) const {
        const double* x = rows_.data() + a * static_cast<std::size_t>(dim_);
        const double* y = rows_.data() + b * static_cast<std::size_t>(dim_);
        double s = 0.0;
        for (int k = 0; k < dim_; ++k) {
            const double t = x[k] - y[k];
            s += t * t;
        }
        return s;
    }

    /// Exhaustive search over rows outside the query's video.
    /// Returns (row, squared distance), or nullopt when no candidate exists.
    std::optional<std::pair<std::size_t, double>> exact_nearest(std::size_t q) const {
        std::optional<std::pair<std::size_t, double>> out;
        exact_nearest_batch(std::span<const std::size_t>(&q, 1), std::span(&out, 1));
        return out;
    }

    /// exact_nearest for up to kQueryBatch queries that share one video.
    void exact_nearest_batch(std::span<const std::size_t> queries,
                             std::span<std::optional<std::pair<std::size_t, double>>> out) const {
        const auto [vb, ve] = video_range(queries[0]);
        std::array<double, kQueryBatch> best;
        std::array<std::size_t, kQueryBatch> arg;
        best.fill(std::numeric_limits<double>::infinity());
        arg.fill(size());
        scan_range(queries, 0, vb, best, arg);
        scan_range(queries, ve, size(), best, arg);
        for (std::size_t i = 0; i < queries.size(); ++i)
            out[i] = arg[i] == size() ? std::nullopt : std::optional(std::make_pair(arg[i], best[i]));
    }

    /// The k nearest eligible rows in ascending (distance, row) order.
    std::vector<std::pair<std::size_t, double>> exact_top_k(std::size_t q, std::size_t k) const {
        const auto [vb, ve] = video_range(q);
        std::vector<std::pair<double, std::size_t>> heap;  // max-heap on (d2, row)
        auto consider = [&](std::size_t r) {
            const double d2 = squared_distance(q, r);
            const std::pair<double, std::size_t> item{d2, r};
            if (heap.size() < k) {
                heap.push_back(item);
                std::push_heap(heap.begin(), heap.end());
            } else if (item < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = item;
                std::push_heap(heap.begin(), heap.end());
            }
        };
        for (std::size_t r = 0; r < vb; ++r) consider(r);
        for (std::size_t r = ve; r < size(); ++r) consider(r);
        std::sort_heap(heap.begin(), heap.end());
        std::vector<std::pair<std::size_t, double>> out;
        out.reserve(heap.size());
        for (auto [d2, r] : heap) out.emplace_back(r, d2);
        return out;
    }

    /// Best-bin-first kd-tree search, bounded by approx_checks() candidate
    /// evaluations. Same-video rows are skipped during leaf scans.
    std::optional<std::pair<std::size_t, double>> approx_nearest(std::size_t q) const {
        if (nodes_.empty()) throw ConfigError("index was not built in approx mode");
        const auto [vb, ve] = video_range(q);
        const double* query = rows_.data() + q * static_cast<std::size_t>(dim_);
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = size();
        std::size_t checks = 0;

        using Entry = std::pair<double, std::uint32_t>;  // (lower bound, node)
        std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
        frontier.emplace(0.0, 0u);
        while (!frontier.empty() && checks < approx_checks_) {
            auto [bound, node_id] = frontier.top();
            frontier.pop();
            if (bound > best) break;
            // Descend to a leaf, queueing the far side of every split.
            while (true) {
                const Node& node = nodes_[node_id];
                if (node.split_dim < 0) break;
                const double diff = query[node.split_dim] - node.split_value;
                const std::uint32_t near = diff <= 0.0 ? node.left : node.right;
                const std::uint32_t far = diff <= 0.0 ? node.right : node.left;
                frontier.emplace(std::max(bound, diff * diff), far);
                node_id = near;
            }
            const Node& leaf = nodes_[node_id];
            for (std::uint32_t i = leaf.begin; i < leaf.end; ++i) {
                const std::size_t r = tree_rows_[i];
                if (r >= vb && r < ve) continue;
                ++checks;
                const double d2 = squared_distance(q, r);
                if (d2 < best || (d2 == best && r < arg)) {
                    best = d2;
                    arg = r;
                }
            }
        }
        if (arg == size()) return std::nullopt;
        return std::make_pair(arg, best);
    }

    std::optional<std::pair<std::size_t, double>> nearest(std::size_t q) const {
        return mode_ == SearchMode::Exact ? exact_nearest(q) : approx_nearest(q);
    }

private:
    struct Node {
        int split_dim = -1;  // -1 for leaves
        double split_value = 0.0;
        std::uint32_t left = 0, right = 0;
        std::uint32_t begin = 0, end = 0;
    };

    // Candidates are stored in tiles of kTileRows rows laid out as
    // [tile][dim][row-in-tile]. Each full tile is scored against a batch of
    // queries lane-parallel; per-lane strict-less minima keep the earliest row,
    // and lanes are merged on (distance, row). Partial tiles at range edges go
    // through the scalar path. Per-pair sums run over dimensions in order, so
    // the result is bit-identical to a naive scan.
    void scan_range(std::span<const std::size_t> queries, std::size_t begin, std::size_t end,
                    std::array<double, kQueryBatch>& best, std::array<std::size_t, kQueryBatch>& arg) const {
        if (begin >= end) return;
        const std::size_t nq = queries.size();
        const std::size_t first_tile = (begin + kTileRows - 1) / kTileRows;
        const std::size_t last_tile = end / kTileRows;
        auto scalar = [&](std::size_t b, std::size_t e) {
            for (std::size_t r = b; r < e; ++r)
                for (std::size_t i = 0; i < nq; ++i) {
                    const double d2 = squared_distance(queries[i], r);
                    if (d2 < best[i] || (d2 == best[i] && r < arg[i])) {
                        best[i] = d2;
                        arg[i] = r;
                    }
                }
        };
        if (first_tile >= last_tile || tiles_.empty()) {
            scalar(begin, end);
            return;
        }
        scalar(begin, first_tile * kTileRows);

        using Lane = double __attribute__((vector_size(kTileRows * sizeof(double))));
        const auto d = static_cast<std::size_t>(dim_);
        Lane qv[kQueryBatch][kMaxDimForTiles];
        for (std::size_t i = 0; i < kQueryBatch; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                const double v = rows_[queries[std::min(i, nq - 1)] * d + k];
                for (std::size_t w = 0; w < kTileRows; ++w) qv[i][k][w] = v;
            }
        Lane lane_best[kQueryBatch], lane_arg[kQueryBatch];
        Lane offsets;
        for (std::size_t w = 0; w < kTileRows; ++w) offsets[w] = static_cast<double>(w);
        for (std::size_t i = 0; i < kQueryBatch; ++i) {
            for (std::size_t w = 0; w < kTileRows; ++w) {
                lane_best[i][w] = std::numeric_limits<double>::infinity();
                lane_arg[i][w] = 0.0;
            }
        }
        for (std::size_t t = first_tile; t < last_tile; ++t) {
            const double* tile = tiles_.data() + t * d * kTileRows;
            Lane acc[kQueryBatch] = {};
            for (std::size_t k = 0; k < d; ++k) {
                Lane x;
                std::memcpy(&x, tile + k * kTileRows, sizeof(Lane));
                for (std::size_t i = 0; i < kQueryBatch; ++i) {
                    const Lane diff = x - qv[i][k];
                    acc[i] += diff * diff;
                }
            }
            const Lane rows = offsets + static_cast<double>(t * kTileRows);
            for (std::size_t i = 0; i < kQueryBatch; ++i) {
                const auto mask = acc[i] < lane_best[i];
                lane_best[i] = mask ? acc[i] : lane_best[i];
                lane_arg[i] = mask ? rows : lane_arg[i];
            }
        }
        for (std::size_t i = 0; i < nq; ++i)
            for (std::size_t w = 0; w < kTileRows; ++w) {
                const double v = lane_best[i][w];
                const auto r = static_cast<std::size_t>(lane_arg[i][w]);
                if (v < best[i] || (v == best[i] && r < arg[i])) {
                    best[i] = v;
                    arg[i] = r;
                }
            }
        scalar(last_tile * kTileRows, end);
    }

    void build_tree() {
        const std::size_t n = size();
        tree_rows_.resize(n);
        std::iota(tree_rows_.begin(), tree_rows_.end(), std::uint32_t{0});
        nodes_.clear();
        nodes_.reserve(2 * n / kKdLeafSize + 2);
        build_node(0, static_cast<std::uint32_t>(n));
    }

    std::uint32_t build_node(std::uint32_t begin, std::uint32_t end) {
        const auto id = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back({});
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        if (end - begin <= kKdLeafSize) return id;

        int best_dim = 0;
        double best_spread = -1.0;
        for (int k = 0; k < dim_; ++k) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::uint32_t i = begin; i < end; ++i) {
                const double v = rows_[tree_rows_[i] * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = k;
            }
        }
        if (best_spread <= 0.0) return id;  // all points identical: keep as leaf

        const std::uint32_t mid = begin + (end - begin) / 2;
        auto key = [&](std::uint32_t r) {
            return std::make_pair(rows_[r * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(best_dim)], r);
        };
        std::nth_element(tree_rows_.begin() + begin, tree_rows_.begin() + mid, tree_rows_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) { return key(a) < key(b); });
        const double split = key(tree_rows_[mid]).first;
        const auto left = build_node(begin, mid);
        const auto right = build_node(mid, end);
        nodes_[id].split_dim = best_dim;
        nodes_[id].split_value = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    int dim_ = 0;
    SearchMode mode_ = SearchMode::Exact;
    std::size_t approx_checks_ = kDefaultApproxChecks;
    std::vector<Row> meta_;
    std::vector<double> rows_;  // row-major n x dim
    std::vector<double> tiles_;  // tiled column-major copy for the exact scan
    std::unordered_map<std::int64_t, std::size_t> row_of_crop_;
    std::unordered_map<std::int64_t, std::pair<std::size_t, std::size_t>> video_ranges_;
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> tree_rows_;
};

/// Embeds every crop with pca_project(vectorize(crop)) and indexes the result.
inline EmbeddingIndex build_index(const Corpus& corpus, const PcaModel& model, SearchMode mode = SearchMode::Exact,
                                  std::size_t approx_checks = kDefaultApproxChecks, unsigned threads = 1) {
    if (corpus.empty()) throw EmptyCorpus("build_index: empty corpus");
    Eigen::MatrixXd emb(static_cast<Eigen::Index>(corpus.size()), model.d_out());
    parallel_for(corpus.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            emb.row(static_cast<Eigen::Index>(i)) = pca_project(model, vectorize(corpus.crops()[i])).transpose();
    });
    std::vector<EmbeddingIndex::Row> meta;
    meta.reserve(corpus.size());
    for (const auto& c : corpus.crops()) meta.push_back({c.crop_id, c.video_id, c.frame_idx});
    return EmbeddingIndex::from_embeddings(emb, std::move(meta), mode, approx_checks);
}

struct SimMatch {
    std::int64_t positive_crop_id;
    double distance;
};

/// SiM(query): nearest crop from any other video (mode of the index).
inline SimMatch sim_query(const EmbeddingIndex& index, std::int64_t query_crop_id) {
    const std::size_t q = index.row_of(query_crop_id);
    auto hit = index.nearest(q);
    if (!hit) throw NoEligibleCandidate("crop " + std::to_string(query_crop_id) + " has no crop from another video");
    return {index.row_meta(hit->first).crop_id, std::sqrt(hit->second)};
}

/// The k nearest cross-video crops, ascending; always exact.
inline std::vector<SimMatch> sim_query_top_k(const EmbeddingIndex& index, std::int64_t query_crop_id, std::size_t k) {
    if (k == 0) throw ConfigError("top_k must be >= 1");
    const std::size_t q = index.row_of(query_crop_id);
    auto hits = index.exact_top_k(q, k);
    if (hits.empty()) throw NoEligibleCandidate("crop " + std::to_string(query_crop_id) + " has no crop from another video");
    std::vector<SimMatch> out;
    for (auto [r, d2] : hits) out.push_back({index.row_meta(r).crop_id, std::sqrt(d2)});
    return out;
}

struct MinedPair {
    std::int64_t query_crop_id;
    std::int64_t positive_crop_id;
    double distance;
    friend bool operator==(const MinedPair&, const MinedPair&) = default;
};

struct PairManifest {
    std::vector<MinedPair> pairs;  // sorted by query crop id
    std::uint64_t corpus_hash = 0;
    std::uint64_t pca_hash = 0;
    SearchMode mode = SearchMode::Exact;
    std::size_t top_k = 1;
    friend bool operator==(const PairManifest&, const PairManifest&) = default;
};

struct MineOptions {
    std::optional<double> max_distance;
    /// 1 = argmin. k > 1 picks one of the k nearest per query, seeded per query.
    std::size_t top_k = 1;
    std::uint64_t top_k_seed = 0;
    unsigned threads = 1;
};

/// Runs SiM for every crop. Queries without an eligible candidate are omitted,
/// as are pairs beyond max_distance. Output order is by query crop id and does
/// not depend on the thread count.
inline PairManifest mine_all(const EmbeddingIndex& index, const MineOptions& opt = {}) {
    if (opt.top_k == 0) throw ConfigError("top_k must be >= 1");
    const std::size_t n = index.size();
    std::vector<std::optional<MinedPair>> slots(n);
    auto emit = [&](std::size_t q, const std::optional<std::pair<std::size_t, double>>& hit) {
        if (!hit) return;
        const double dist = std::sqrt(hit->second);
        if (opt.max_distance && dist > *opt.max_distance) return;
        slots[q] = MinedPair{index.row_meta(q).crop_id, index.row_meta(hit->first).crop_id, dist};
    };

    if (opt.top_k == 1 && index.mode() == SearchMode::Exact) {
        // Batch consecutive rows of one video so they share the exclusion range.
        std::vector<std::pair<std::size_t, std::size_t>> batches;
        for (std::size_t q = 0; q < n;) {
            const std::size_t ve = index.video_range(q).second;
            const std::size_t e = std::min(ve, q + EmbeddingIndex::kQueryBatch);
            batches.emplace_back(q, e);
            q = e;
        }
        parallel_for(batches.size(), opt.threads, [&](std::size_t b, std::size_t e) {
            std::vector<std::size_t> rows;
            std::array<std::optional<std::pair<std::size_t, double>>, EmbeddingIndex::kQueryBatch> hits;
            for (std::size_t i = b; i < e; ++i) {
                rows.clear();
                for (std::size_t q = batches[i].first; q < batches[i].second; ++q) rows.push_back(q);
                index.exact_nearest_batch(rows, std::span(hits.data(), rows.size()));
                for (std::size_t k = 0; k < rows.size(); ++k) emit(rows[k], hits[k]);
            }
        });
    } else {
        parallel_for(n, opt.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t q = b; q < e; ++q) {
                if (opt.top_k == 1) {
                    emit(q, index.nearest(q));
                    continue;
                }
                auto top = index.exact_top_k(q, opt.top_k);
                if (top.empty()) continue;
                Rng rng(derive_seed(opt.top_k_seed, "top-k", static_cast<std::uint64_t>(index.row_meta(q).crop_id)));
                emit(q, top[rng.index(top.size())]);
            }
        });
    }
    PairManifest m;
    m.mode = index.mode();
    m.top_k = opt.top_k;
    for (auto& s : slots)
        if (s) m.pairs.push_back(*s);
    std::sort(m.pairs.begin(), m.pairs.end(),
              [](const MinedPair& a, const MinedPair& b) { return a.query_crop_id < b.query_crop_id; });
    return m;
}

/// Throws unless every pair joins crops from different videos and has a
/// finite non-negative distance, with unique queries.
inline void check_manifest(const PairManifest& m, const Corpus& corpus) {
    std::unordered_map<std::int64_t, std::int64_t> video_of;
    for (const auto& c : corpus.crops()) video_of.emplace(c.crop_id, c.video_id);
    std::int64_t prev = std::numeric_limits<std::int64_t>::min();
    bool first = true;
    for (const auto& p : m.pairs) {
        auto q = video_of.find(p.query_crop_id);
        auto r = video_of.find(p.positive_crop_id);
        if (q == video_of.end() || r == video_of.end())
            throw StaleArtifact("pair references crop ids absent from the corpus");
        if (q->second == r->second)
            throw CorruptCrop("pair (" + std::to_string(p.query_crop_id) + ", " + std::to_string(p.positive_crop_id) +
                              ") joins crops of the same video");
        if (!std::isfinite(p.distance) || p.distance < 0.0) throw CorruptCrop("pair distance must be finite and >= 0");
        if (!first && p.query_crop_id <= prev) throw DuplicateRecord("query ids must be unique and ascending");
        prev = p.query_crop_id;
        first = false;
    }
}

struct MiningQuality {
    std::size_t n_pairs = 0;
    double mean_pair_distance = 0.0;    // pose-parameter distance of mined pairs
    double mean_random_distance = 0.0;  // same, for random cross-video partners
    double nn_recall = 0.0;             // fraction hitting the parameter-space cross-video NN
};

/// Scores a manifest against ground-truth pose parameters.
inline MiningQuality mining_quality(const PairManifest& manifest, const Corpus& corpus, const GroundTruth& gt,
                                    std::uint64_t seed = 0) {
    auto lookup = [&](std::int64_t id) -> const PoseParams& {
        auto it = gt.find(id);
        if (it == gt.end()) throw MissingGroundTruth("no ground truth for crop " + std::to_string(id));
        return it->second;
    };
    std::vector<const HandCrop*> crops;
    for (const auto& c : corpus.crops()) {
        lookup(c.crop_id);
        crops.push_back(&c);
    }
    std::unordered_map<std::int64_t, std::int64_t> video_of;
    for (const auto* c : crops) video_of.emplace(c->crop_id, c->video_id);

    MiningQuality q;
    q.n_pairs = manifest.pairs.size();
    if (manifest.pairs.empty()) return q;
    Rng rng(seed);
    double pair_sum = 0.0, random_sum = 0.0;
    std::size_t random_count = 0, hits = 0;
    for (const auto& p : manifest.pairs) {
        const PoseParams& qp = lookup(p.query_crop_id);
        const double d = pose_distance(qp, lookup(p.positive_crop_id));
        pair_sum += d;
        const auto qv = video_of.at(p.query_crop_id);

        double nn = std::numeric_limits<double>::infinity();
        for (const auto* c : crops)
            if (c->video_id != qv) nn = std::min(nn, pose_distance(qp, gt.at(c->crop_id)));
        if (d <= nn + 1e-12) ++hits;

        if (std::isfinite(nn)) {
            const HandCrop* partner = nullptr;
            do {
                partner = crops[rng.index(crops.size())];
            } while (partner->video_id == qv);
            random_sum += pose_distance(qp, gt.at(partner->crop_id));
            ++random_count;
        }
    }
    q.mean_pair_distance = pair_sum / static_cast<double>(q.n_pairs);
    q.mean_random_distance = random_count ? random_sum / static_cast<double>(random_count) : 0.0;
    q.nn_recall = static_cast<double>(hits) / static_cast<double>(q.n_pairs);
    return q;
}

// ---------------------------------------------------------------------------
// Pair manifest text format
//
//   # handclr-pairs v1
//   # corpus_hash <16 hex digits>
//   # pca_hash <16 hex digits>
//   # mode exact|approx
//   # tie_break lex-video-frame-v1
//   # top_k <k>
//   <query_crop_id> <positive_crop_id> <distance>
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPairsMagic = "# handclr-pairs v1";

inline std::string serialize_pairs(const PairManifest& m) {
    std::string s;
    s += kPairsMagic;
    s += "\n# corpus_hash " + io::hex64(m.corpus_hash);
    s += "\n# pca_hash " + io::hex64(m.pca_hash);
    s += "\n# mode " + to_string(m.mode);
    s += "\n# tie_break ";
    s += kTieBreakVersion;
    s += "\n# top_k " + std::to_string(m.top_k) + "\n";
    for (const auto& p : m.pairs)
        s += std::to_string(p.query_crop_id) + " " + std::to_string(p.positive_crop_id) + " " +
             io::format_double(p.distance) + "\n";
    return s;
}

inline PairManifest parse_pairs(std::string_view text) {
    PairManifest m;
    std::size_t line_no = 0, pos = 0;
    bool magic = false;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        const auto line = text.substr(pos, eol - pos);
        auto f = io::split_ws(line);
        pos = eol + 1;
        ++line_no;
        if (f.empty()) continue;
        if (f[0] == "#") {
            if (line_no == 1 && line.starts_with(kPairsMagic)) {
                magic = true;
            } else if (f.size() == 3) {
                if (f[1] == "corpus_hash" || f[1] == "pca_hash") {
                    auto h = io::parse_hex64(f[2]);
                    if (!h) throw ParseError(line_no, "bad hash");
                    (f[1] == "corpus_hash" ? m.corpus_hash : m.pca_hash) = *h;
                } else if (f[1] == "mode") {
                    m.mode = parse_search_mode(f[2]);
                } else if (f[1] == "tie_break" && f[2] != kTieBreakVersion) {
                    throw StaleArtifact("unsupported tie-break version " + std::string(f[2]));
                } else if (f[1] == "top_k") {
                    auto k = io::parse_number<std::size_t>(f[2]);
                    if (!k) throw ParseError(line_no, "bad top_k");
                    m.top_k = *k;
                }
            }
            continue;
        }
        if (!magic) throw ParseError(line_no, "missing pair manifest header");
        if (f.size() != 3) throw ParseError(line_no, "expected 3 fields");
        auto q = io::parse_number<std::int64_t>(f[0]);
        auto p = io::parse_number<std::int64_t>(f[1]);
        auto d = io::parse_number<double>(f[2]);
        if (!q || !p || !d) throw ParseError(line_no, "malformed pair record");
        m.pairs.push_back({*q, *p, *d});
    }
    return m;
}

inline void save_pairs(const PairManifest& m, const std::string& path) { io::write_file(path, serialize_pairs(m)); }
inline PairManifest load_pairs(const std::string& path) { return parse_pairs(io::read_file(path)); }

}  // namespace handclr
