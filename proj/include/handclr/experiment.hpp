#pragma once

// Pair-source comparison: for each seed, build one corpus, mine it, train an
// encoder per pair source from identical initial weights and batch streams,
// and score each with the frozen linear probe.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/embed.hpp"
#include "handclr/mine.hpp"
#include "handclr/parallel.hpp"
#include "handclr/synth.hpp"
#include "handclr/train.hpp"

namespace handclr {

/// Pre-training corpus of the comparison protocol: base poses come from a
/// small shared pool of prototypes so that cross-video neighbors exist.
inline SynthConfig protocol_synth_config() {
    SynthConfig sc;
    sc.base_pose_pool = 10;
    sc.base_pose_jitter = 0.05;
    return sc;
}

struct CompareConfig {
    SynthConfig synth = protocol_synth_config();
    ObservationConfig observations{};
    TrainConfig train{};
    int d_out = kDefaultEmbeddingDim;
    std::size_t max_fit_samples = kDefaultMaxFitSamples;
    double confidence_threshold = kDefaultConfidenceThreshold;
    /// Labeled probe data: a fresh corpus drawn from the same generator with
    /// its own seed, split by video into probe-train and probe-test.
    std::int64_t probe_videos = 500;
    std::int64_t probe_crops_per_video = 4;
    double probe_train_fraction = 0.5;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::vector<PairSource> sources{kAllPairSources.begin(), kAllPairSources.end()};
    unsigned threads = 1;

    void validate() const {
        synth.validate();
        train.validate();
        if (d_out < 1 || d_out > kPoseDim) throw ConfigError("d_out must be in [1, 42]");
        if (probe_videos < 2 || probe_crops_per_video < 1) throw ConfigError("probe needs >= 2 videos");
        if (!(probe_train_fraction > 0.0 && probe_train_fraction < 1.0))
            throw ConfigError("probe_train_fraction must be in (0, 1)");
        if (seeds.empty()) throw ConfigError("compare needs at least one seed");
        if (sources.empty()) throw ConfigError("compare needs at least one pair source");
    }
};

struct CompareRow {
    PairSource source;
    std::uint64_t seed;
    double probe_mse;
    double final_loss;
};

struct CompareReport {
    std::vector<CompareRow> rows;
    std::map<std::uint64_t, double> random_init_mse;  // untrained encoder, per seed
    std::map<PairSource, double> median_mse;
    /// win_rate[a][b]: fraction of seeds where a's probe MSE is strictly below b's.
    std::map<PairSource, std::map<PairSource, double>> win_rate;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Per-seed stage seeds, all derived from the one experiment seed.
struct StageSeeds {
    std::uint64_t synth, balance, pca, nuisance, probe, train;
    static StageSeeds from(std::uint64_t seed) {
        return {derive_seed(seed, "synth"),    derive_seed(seed, "balance"), derive_seed(seed, "pca"),
                derive_seed(seed, "nuisance"), derive_seed(seed, "probe"),   derive_seed(seed, "train")};
    }
};

/// Generated, preprocessed and mined corpus for one seed.
struct PreparedCorpus {
    Corpus corpus;
    GroundTruth ground_truth;
    PcaModel pca;
    PairManifest pairs;
};

inline PreparedCorpus prepare_corpus(const CompareConfig& cfg, const StageSeeds& seeds) {
    SynthConfig sc = cfg.synth;
    sc.seed = seeds.synth;
    SynthCorpus raw = generate_corpus(sc);
    PreparedCorpus out;
    const GroundTruth gt_all = raw.ground_truth();
    out.corpus = filter_by_confidence(balance_handedness(raw.corpus, seeds.balance), cfg.confidence_threshold);
    for (const auto& c : out.corpus.crops()) out.ground_truth.emplace(c.crop_id, gt_all.at(c.crop_id));
    out.pca = pca_fit(vectorize_all(out.corpus), cfg.d_out, seeds.pca, cfg.max_fit_samples);
    out.pca.corpus_hash = corpus_hash(out.corpus);
    EmbeddingIndex index = build_index(out.corpus, out.pca, SearchMode::Exact);
    MineOptions mo;
    mo.threads = cfg.threads;
    out.pairs = mine_all(index, mo);
    out.pairs.corpus_hash = out.pca.corpus_hash;
    out.pairs.pca_hash = io::content_hash(serialize_pca(out.pca));
    return out;
}

/// Fresh labeled data for the probe, disjoint from the pre-training corpus.
inline std::pair<LabeledSet, LabeledSet> make_probe_sets(const CompareConfig& cfg, std::uint64_t seed) {
    SynthConfig sc = cfg.synth;
    sc.seed = derive_seed(seed, "synth");
    sc.n_videos = cfg.probe_videos;
    sc.crops_per_video = cfg.probe_crops_per_video;
    sc.left_fraction = 0.0;
    SynthCorpus probe = generate_corpus(sc);
    const ObservationSet obs = build_observations(probe.corpus, cfg.observations, derive_seed(seed, "nuisance"));
    return split_by_video(obs, targets_of(probe.params), 1.0 - cfg.probe_train_fraction, derive_seed(seed, "split"));
}

inline CompareReport compare_pair_sources(const CompareConfig& cfg) {
    cfg.validate();
    struct Cell {
        std::size_t seed_idx;
        PairSource source;
    };
    std::vector<PreparedCorpus> prepared;
    std::vector<ObservationSet> observations;
    std::vector<std::pair<LabeledSet, LabeledSet>> splits;
    CompareReport report;
    for (auto seed : cfg.seeds) {
        const StageSeeds ss = StageSeeds::from(seed);
        prepared.push_back(prepare_corpus(cfg, ss));
        const auto& pc = prepared.back();
        observations.push_back(build_observations(pc.corpus, cfg.observations, ss.nuisance));
        splits.push_back(make_probe_sets(cfg, ss.probe));

        EncoderShape shape = cfg.train.shape;
        shape.input = cfg.observations.dim();
        Encoder init = Encoder::random(shape, derive_seed(ss.train, "encoder-init"), cfg.train.activation);
        if (cfg.train.standardize_inputs) set_input_standardization(init, observations.back().values);
        report.random_init_mse[seed] = linear_probe(init, splits.back().first, splits.back().second).mse;
    }

    std::vector<Cell> cells;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
        for (auto src : cfg.sources) cells.push_back({s, src});
    std::vector<CompareRow> rows(cells.size());
    parallel_for(cells.size(), cfg.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto& cell = cells[i];
            TrainConfig tc = cfg.train;
            tc.pair_source = cell.source;
            tc.seed = StageSeeds::from(cfg.seeds[cell.seed_idx]).train;
            const auto& pc = prepared[cell.seed_idx];
            TrainResult tr = train(observations[cell.seed_idx], &pc.pairs, cfg.observations, tc);
            const auto& [train_set, test_set] = splits[cell.seed_idx];
            rows[i] = {cell.source, cfg.seeds[cell.seed_idx], linear_probe(tr.encoder, train_set, test_set).mse,
                       tr.losses.empty() ? 0.0 : tr.losses.back()};
        }
    });
    report.rows = std::move(rows);

    for (auto src : cfg.sources) {
        std::vector<double> v;
        for (const auto& r : report.rows)
            if (r.source == src) v.push_back(r.probe_mse);
        report.median_mse[src] = median(v);
    }
    for (auto a : cfg.sources)
        for (auto b : cfg.sources) {
            std::size_t wins = 0;
            for (auto seed : cfg.seeds) {
                double ma = 0, mb = 0;
                for (const auto& r : report.rows) {
                    if (r.seed != seed) continue;
                    if (r.source == a) ma = r.probe_mse;
                    if (r.source == b) mb = r.probe_mse;
                }
                if (ma < mb) ++wins;
            }
            report.win_rate[a][b] = static_cast<double>(wins) / static_cast<double>(cfg.seeds.size());
        }
    return report;
}

}  // namespace handclr
