#pragma once

// End-to-end pipeline stages behind the command-line tool. Every stage reads
// its upstream artifacts from one output directory, checks their provenance
// hashes, and writes its own artifact next to them:
//
//   generate  -> corpus.txt, groundtruth.txt
//   fit-pca   -> pca.bin, pca.txt
//   mine      -> pairs.txt
//   train     -> encoder.bin, train_log.txt
//   probe     -> report.json
//
// All randomness comes from the top-level seed through StageSeeds.

#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "handclr/corpus.hpp"
#include "handclr/embed.hpp"
#include "handclr/error.hpp"
#include "handclr/experiment.hpp"
#include "handclr/io.hpp"
#include "handclr/mine.hpp"
#include "handclr/synth.hpp"
#include "handclr/train.hpp"

namespace handclr {

using Json = nlohmann::ordered_json;

struct PcaConfig {
    int d_out = kDefaultEmbeddingDim;
    std::size_t max_fit_samples = kDefaultMaxFitSamples;
    bool whiten = false;
};

struct MiningConfig {
    SearchMode mode = SearchMode::Exact;
    std::optional<double> max_distance;
    std::size_t top_k = 1;
    std::size_t approx_checks = kDefaultApproxChecks;
};

struct ProbeConfig {
    std::int64_t videos = 500;
    std::int64_t crops_per_video = 4;
    double train_fraction = 0.5;
};

struct BenchConfig {
    std::vector<std::int64_t> sizes = {10'000, 100'000, 1'000'000};
    /// Exact mining above this size is timed on a query sample and extrapolated.
    std::int64_t max_full_exact = 100'000;
    /// Approximate mining above this size is sampled the same way.
    std::int64_t max_full_approx = 100'000;
    std::size_t sample_queries = 4096;
    /// Thread count of the multi-threaded runs; 0 = all hardware threads.
    unsigned threads = 0;
    bool approx = true;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    SynthConfig synth = protocol_synth_config();
    double confidence_threshold = kDefaultConfidenceThreshold;
    PcaConfig pca{};
    MiningConfig mining{};
    ObservationConfig observations{};
    TrainConfig train{};
    ProbeConfig probe{};
    std::vector<std::uint64_t> compare_seeds = {0, 1, 2, 3, 4};
    std::vector<PairSource> compare_sources{kAllPairSources.begin(), kAllPairSources.end()};
    BenchConfig bench{};

    void validate() const {
        synth.validate();
        if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
            throw ConfigError("confidence_threshold must lie in [0, 1]");
        if (pca.d_out < 1 || pca.d_out > kPoseDim) throw ConfigError("pca.d_out must lie in [1, 42]");
        if (pca.max_fit_samples == 0) throw ConfigError("pca.max_fit_samples must be positive");
        if (mining.top_k == 0) throw ConfigError("mining.top_k must be >= 1");
        if (mining.approx_checks == 0) throw ConfigError("mining.approx_checks must be >= 1");
        if (mining.max_distance && !(*mining.max_distance >= 0.0)) throw ConfigError("mining.max_distance must be >= 0");
        observations.validate();
        train.validate();
        if (probe.videos < 2 || probe.crops_per_video < 1) throw ConfigError("probe needs >= 2 videos");
        if (!(probe.train_fraction > 0.0 && probe.train_fraction < 1.0))
            throw ConfigError("probe.train_fraction must lie in (0, 1)");
        if (compare_seeds.empty()) throw ConfigError("compare.seeds must not be empty");
        if (compare_sources.empty()) throw ConfigError("compare.sources must not be empty");
        for (auto n : bench.sizes)
            if (n < 2) throw ConfigError("bench sizes must be >= 2");
        if (bench.sample_queries == 0) throw ConfigError("bench.sample_queries must be positive");
    }

    CompareConfig compare_config() const {
        CompareConfig c;
        c.synth = synth;
        c.observations = observations;
        c.train = train;
        c.d_out = pca.d_out;
        c.max_fit_samples = pca.max_fit_samples;
        c.confidence_threshold = confidence_threshold;
        c.probe_videos = probe.videos;
        c.probe_crops_per_video = probe.crops_per_video;
        c.probe_train_fraction = probe.train_fraction;
        c.seeds = compare_seeds;
        c.sources = compare_sources;
        c.threads = threads;
        return c;
    }
};

// ---------------------------------------------------------------------------
// JSON config. Every section is optional; unknown keys are rejected so that
// typos do not silently fall back to defaults.
// ---------------------------------------------------------------------------

namespace detail {

class Section {
public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) fail(key, "expected a boolean");
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) fail(key, "expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) fail(key, "expected an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) fail(key, "expected a number");
        }
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            fail(key, e.what());
        }
    }

    template <typename T, typename Parse>
    void get_enum(const std::string& key, T& out, Parse parse) {
        std::string s;
        get(key, s);
        if (j_.contains(key)) out = parse(s);
    }

    Section sub(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return Section(it == j_.end() ? empty() : *it, path_.empty() ? key : path_ + "." + key);
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }

private:
    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        throw ConfigError("config: '" + (path_.empty() ? key : path_ + "." + key) + "': " + why);
    }
    static const Json& empty() {
        static const Json e = Json::object();
        return e;
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Identity: return "identity";
    }
    return "tanh";
}

}  // namespace detail

inline PipelineConfig config_from_json(const Json& root) {
    PipelineConfig c;
    detail::Section top(root, "");
    top.get("seed", c.seed);
    top.get("threads", c.threads);

    auto s = top.sub("synth");
    s.get("n_videos", c.synth.n_videos);
    s.get("crops_per_video", c.synth.crops_per_video);
    s.get("keypoint_noise_sigma", c.synth.keypoint_noise_sigma);
    s.get("intra_video_drift", c.synth.intra_video_drift);
    s.get("left_fraction", c.synth.left_fraction);
    s.get("base_pose_pool", c.synth.base_pose_pool);
    s.get("base_pose_jitter", c.synth.base_pose_jitter);
    s.finish();

    auto co = top.sub("corpus");
    co.get("confidence_threshold", c.confidence_threshold);
    co.finish();

    auto p = top.sub("pca");
    p.get("d_out", c.pca.d_out);
    p.get("max_fit_samples", c.pca.max_fit_samples);
    p.get("whiten", c.pca.whiten);
    p.finish();

    auto m = top.sub("mining");
    m.get_enum("mode", c.mining.mode, parse_search_mode);
    if (m.has("max_distance")) {
        const Json& v = m.raw("max_distance");
        if (v.is_null()) c.mining.max_distance.reset();
        else if (v.is_number()) c.mining.max_distance = v.get<double>();
        else throw ConfigError("config: 'mining.max_distance' must be a number or null");
    }
    m.get("top_k", c.mining.top_k);
    m.get("approx_checks", c.mining.approx_checks);
    m.finish();

    auto o = top.sub("observations");
    o.get("n_nuisance", c.observations.n_nuisance);
    o.get("nuisance_scale", c.observations.nuisance_scale);
    o.get("appearance_sigma", c.observations.appearance_sigma);
    o.finish();

    auto l = top.sub("loss");
    l.get("temperature", c.train.loss.temperature);
    l.get("translate_features", c.train.translate_features);
    auto tr = l.sub("transforms");
    tr.get("max_rotation", c.train.transforms.max_rotation);
    tr.get("min_scale", c.train.transforms.min_scale);
    tr.get("max_scale", c.train.transforms.max_scale);
    tr.get("max_translation", c.train.transforms.max_translation);
    tr.finish();
    l.finish();

    auto t = top.sub("training");
    t.get_enum("pair_source", c.train.pair_source, parse_pair_source);
    t.get("batch_pairs", c.train.batch_pairs);
    t.get("steps", c.train.steps);
    t.get("learning_rate", c.train.learning_rate);
    t.get("hidden", c.train.shape.hidden);
    t.get("embed", c.train.shape.embed);
    t.get("projection", c.train.shape.projection);
    t.get_enum("activation", c.train.activation, detail::parse_activation);
    t.get("standardize_inputs", c.train.standardize_inputs);
    t.finish();

    auto pr = top.sub("probe");
    pr.get("videos", c.probe.videos);
    pr.get("crops_per_video", c.probe.crops_per_video);
    pr.get("train_fraction", c.probe.train_fraction);
    pr.finish();

    auto cm = top.sub("compare");
    cm.get("seeds", c.compare_seeds);
    if (cm.has("sources")) {
        std::vector<std::string> names;
        cm.get("sources", names);
        c.compare_sources.clear();
        for (const auto& n : names) c.compare_sources.push_back(parse_pair_source(n));
    }
    cm.finish();

    auto b = top.sub("bench");
    b.get("sizes", c.bench.sizes);
    b.get("max_full_exact", c.bench.max_full_exact);
    b.get("max_full_approx", c.bench.max_full_approx);
    b.get("sample_queries", c.bench.sample_queries);
    b.get("threads", c.bench.threads);
    b.get("approx", c.bench.approx);
    b.finish();

    top.finish();
    c.train.shape.input = c.observations.dim();
    c.validate();
    return c;
}

inline PipelineConfig parse_config(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return config_from_json(j);
}

inline PipelineConfig load_config(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
    return parse_config(io::read_file(path));
}

inline Json config_to_json(const PipelineConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["synth"] = {{"n_videos", c.synth.n_videos},
                  {"crops_per_video", c.synth.crops_per_video},
                  {"keypoint_noise_sigma", c.synth.keypoint_noise_sigma},
                  {"intra_video_drift", c.synth.intra_video_drift},
                  {"left_fraction", c.synth.left_fraction},
                  {"base_pose_pool", c.synth.base_pose_pool},
                  {"base_pose_jitter", c.synth.base_pose_jitter}};
    j["corpus"] = {{"confidence_threshold", c.confidence_threshold}};
    j["pca"] = {{"d_out", c.pca.d_out}, {"max_fit_samples", c.pca.max_fit_samples}, {"whiten", c.pca.whiten}};
    j["mining"] = {{"mode", to_string(c.mining.mode)},
                   {"max_distance", c.mining.max_distance ? Json(*c.mining.max_distance) : Json(nullptr)},
                   {"top_k", c.mining.top_k},
                   {"approx_checks", c.mining.approx_checks}};
    j["observations"] = {{"n_nuisance", c.observations.n_nuisance},
                         {"nuisance_scale", c.observations.nuisance_scale},
                         {"appearance_sigma", c.observations.appearance_sigma}};
    j["loss"] = {{"temperature", c.train.loss.temperature},
                 {"translate_features", c.train.translate_features},
                 {"transforms",
                  {{"max_rotation", c.train.transforms.max_rotation},
                   {"min_scale", c.train.transforms.min_scale},
                   {"max_scale", c.train.transforms.max_scale},
                   {"max_translation", c.train.transforms.max_translation}}}};
    j["training"] = {{"pair_source", to_string(c.train.pair_source)},
                     {"batch_pairs", c.train.batch_pairs},
                     {"steps", c.train.steps},
                     {"learning_rate", c.train.learning_rate},
                     {"hidden", c.train.shape.hidden},
                     {"embed", c.train.shape.embed},
                     {"projection", c.train.shape.projection},
                     {"activation", detail::to_string(c.train.activation)},
                     {"standardize_inputs", c.train.standardize_inputs}};
    j["probe"] = {{"videos", c.probe.videos},
                  {"crops_per_video", c.probe.crops_per_video},
                  {"train_fraction", c.probe.train_fraction}};
    Json sources = Json::array();
    for (auto s : c.compare_sources) sources.push_back(to_string(s));
    j["compare"] = {{"seeds", c.compare_seeds}, {"sources", sources}};
    j["bench"] = {{"sizes", c.bench.sizes},
                  {"max_full_exact", c.bench.max_full_exact},
                  {"max_full_approx", c.bench.max_full_approx},
                  {"sample_queries", c.bench.sample_queries},
                  {"threads", c.bench.threads},
                  {"approx", c.bench.approx}};
    return j;
}

/// Applies `section.key=value` overrides (value parsed as JSON, falling back
/// to a plain string) on top of a config's JSON form.
inline PipelineConfig apply_overrides(const PipelineConfig& base, const std::vector<std::string>& sets) {
    Json j = config_to_json(base);
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + s);
        const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
        Json value;
        try {
            value = Json::parse(text);
        } catch (const nlohmann::json::parse_error&) {
            value = text;
        }
        Json* node = &j;
        std::size_t pos = 0;
        while (true) {
            const auto dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
            if (part.empty()) throw ConfigError("bad override key: " + key);
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            Json& child = (*node)[part];
            if (child.is_null()) child = Json::object();
            if (!child.is_object()) throw ConfigError("override path crosses a non-object: " + key);
            node = &child;
            pos = dot + 1;
        }
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

struct ArtifactPaths {
    std::filesystem::path dir;
    std::filesystem::path corpus() const { return dir / "corpus.txt"; }
    std::filesystem::path ground_truth() const { return dir / "groundtruth.txt"; }
    std::filesystem::path pca() const { return dir / "pca.bin"; }
    std::filesystem::path pca_text() const { return dir / "pca.txt"; }
    std::filesystem::path pairs() const { return dir / "pairs.txt"; }
    std::filesystem::path encoder() const { return dir / "encoder.bin"; }
    std::filesystem::path train_log() const { return dir / "train_log.txt"; }
    std::filesystem::path report() const { return dir / "report.json"; }
    std::filesystem::path compare() const { return dir / "compare.json"; }
    std::filesystem::path bench() const { return dir / "bench.json"; }
};

namespace detail {

inline std::string require(const std::filesystem::path& p, const char* produced_by) {
    if (!std::filesystem::exists(p))
        throw MissingArtifact("missing artifact " + p.string() + " (run '" + produced_by + "' first)");
    return io::read_file(p.string());
}

inline void write_artifact(const std::filesystem::path& p, std::string_view bytes) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    io::write_file(p.string(), bytes);
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct GenerateSummary {
    std::size_t crops = 0;
    std::int64_t videos = 0;
    std::uint64_t corpus_hash = 0;
};

/// Synthesizes the corpus, balances handedness, converts to right hands and
/// applies the confidence filter. Ground truth is kept for surviving crops.
inline GenerateSummary cmd_generate(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const StageSeeds ss = StageSeeds::from(cfg.seed);
    SynthConfig sc = cfg.synth;
    sc.seed = ss.synth;
    const SynthCorpus raw = generate_corpus(sc);
    const GroundTruth all = raw.ground_truth();
    const Corpus corpus = filter_by_confidence(balance_handedness(raw.corpus, ss.balance), cfg.confidence_threshold);
    GroundTruth gt;
    for (const auto& c : corpus.crops()) gt.emplace(c.crop_id, all.at(c.crop_id));
    const std::string text = serialize_manifest(corpus);
    detail::write_artifact(out.corpus(), text);
    detail::write_artifact(out.ground_truth(), serialize_ground_truth(gt));
    return {corpus.size(), corpus.videos(), io::content_hash(text)};
}

struct FitPcaSummary {
    int d_out = 0;
    double explained = 0.0;
    bool rank_deficient = false;
    std::uint64_t pca_hash = 0;
};

inline FitPcaSummary cmd_fit_pca(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const std::string text = detail::require(out.corpus(), "generate");
    const Corpus corpus = parse_manifest(text);
    if (corpus.empty()) throw EmptyCorpus("corpus " + out.corpus().string() + " has no crops");
    PcaModel model =
        pca_fit(vectorize_all(corpus), cfg.pca.d_out, StageSeeds::from(cfg.seed).pca, cfg.pca.max_fit_samples);
    model.whiten = cfg.pca.whiten;
    model.corpus_hash = io::content_hash(text);
    const std::string bytes = serialize_pca(model);
    detail::write_artifact(out.pca(), bytes);
    detail::write_artifact(out.pca_text(), pca_to_text(model));
    return {model.d_out(), explained_variance(model, model.d_out()), model.rank_deficient, io::content_hash(bytes)};
}

struct MineSummary {
    std::size_t pairs = 0;
    double mean_distance = 0.0;
    std::optional<MiningQuality> quality;  // when ground truth is present
};

inline MineSummary cmd_mine(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const std::string corpus_text = detail::require(out.corpus(), "generate");
    const std::string pca_bytes = detail::require(out.pca(), "fit-pca");
    const Corpus corpus = parse_manifest(corpus_text);
    const PcaModel model = parse_pca(pca_bytes);
    const std::uint64_t ch = io::content_hash(corpus_text);
    if (model.corpus_hash != ch)
        throw StaleArtifact("PCA model " + out.pca().string() + " was fitted on corpus " + io::hex64(model.corpus_hash) +
                            ", but " + out.corpus().string() + " hashes to " + io::hex64(ch));
    const EmbeddingIndex index = build_index(corpus, model, cfg.mining.mode, cfg.mining.approx_checks, cfg.threads);
    MineOptions mo;
    mo.max_distance = cfg.mining.max_distance;
    mo.top_k = cfg.mining.top_k;
    mo.top_k_seed = derive_seed(cfg.seed, "top-k");
    mo.threads = cfg.threads;
    PairManifest m = mine_all(index, mo);
    m.corpus_hash = ch;
    m.pca_hash = io::content_hash(pca_bytes);
    check_manifest(m, corpus);
    detail::write_artifact(out.pairs(), serialize_pairs(m));

    MineSummary s;
    s.pairs = m.pairs.size();
    for (const auto& p : m.pairs) s.mean_distance += p.distance;
    if (!m.pairs.empty()) s.mean_distance /= static_cast<double>(m.pairs.size());
    // The ground-truth scan is quadratic; skip it on large corpora.
    constexpr std::size_t kMaxQualityCrops = 20'000;
    if (corpus.size() <= kMaxQualityCrops && std::filesystem::exists(out.ground_truth())) {
        const GroundTruth gt = parse_ground_truth(io::read_file(out.ground_truth().string()));
        s.quality = mining_quality(m, corpus, gt, derive_seed(cfg.seed, "quality"));
    }
    return s;
}

struct TrainSummary {
    std::size_t steps = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
    std::uint64_t encoder_hash = 0;
};

/// Provenance of an encoder: the pair manifest it consumed, or the corpus for
/// self-positive sources.
inline TrainSummary cmd_train(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const std::string corpus_text = detail::require(out.corpus(), "generate");
    const Corpus corpus = parse_manifest(corpus_text);
    const std::uint64_t ch = io::content_hash(corpus_text);
    std::optional<PairManifest> pairs;
    std::uint64_t provenance = ch;
    if (cfg.train.pair_source == PairSource::MinedPairs) {
        const std::string pairs_text = detail::require(out.pairs(), "mine");
        pairs = parse_pairs(pairs_text);
        if (pairs->corpus_hash != ch)
            throw StaleArtifact("pair manifest " + out.pairs().string() + " was mined from corpus " +
                                io::hex64(pairs->corpus_hash) + ", but the corpus hashes to " + io::hex64(ch));
        if (std::filesystem::exists(out.pca())) {
            const auto ph = io::content_hash(io::read_file(out.pca().string()));
            if (pairs->pca_hash != ph)
                throw StaleArtifact("pair manifest " + out.pairs().string() + " does not match PCA model " +
                                    out.pca().string());
        }
        check_manifest(*pairs, corpus);
        provenance = io::content_hash(pairs_text);
    }
    const StageSeeds ss = StageSeeds::from(cfg.seed);
    const ObservationSet obs = build_observations(corpus, cfg.observations, ss.nuisance);
    TrainConfig tc = cfg.train;
    tc.seed = ss.train;
    const TrainResult r = train(obs, pairs ? &*pairs : nullptr, cfg.observations, tc);

    std::string log = "# step loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) log += std::to_string(i) + " " + io::format_double(r.losses[i]) + "\n";
    const std::string bytes = serialize_encoder(r.encoder, provenance);
    detail::write_artifact(out.encoder(), bytes);
    detail::write_artifact(out.train_log(), log);
    TrainSummary s;
    s.steps = r.losses.size();
    if (!r.losses.empty()) {
        s.first_loss = r.losses.front();
        s.final_loss = r.losses.back();
    }
    s.encoder_hash = io::content_hash(bytes);
    return s;
}

struct ProbeSummary {
    double probe_mse = 0.0;
    double random_init_mse = 0.0;
    double lambda = kProbeLambda;
};

/// Scores the trained encoder and an untrained one (same init seed) on fresh
/// labeled data, then writes report.json with the provenance chain.
inline ProbeSummary cmd_probe(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const std::string enc_bytes = detail::require(out.encoder(), "train");
    const std::string corpus_text = detail::require(out.corpus(), "generate");
    const auto [enc, provenance] = parse_encoder(enc_bytes);
    const std::uint64_t ch = io::content_hash(corpus_text);
    std::uint64_t pairs_hash = 0;
    if (std::filesystem::exists(out.pairs())) pairs_hash = io::content_hash(io::read_file(out.pairs().string()));
    if (provenance != ch && provenance != pairs_hash)
        throw StaleArtifact("encoder " + out.encoder().string() + " was not trained on the current corpus or pairs");
    // Trained on pairs: those pairs must in turn be mined from this corpus.
    if (provenance != ch && load_pairs(out.pairs().string()).corpus_hash != ch)
        throw StaleArtifact("encoder " + out.encoder().string() + " was trained on pairs mined from another corpus");
    if (enc.w1.cols() != cfg.observations.dim())
        throw StaleArtifact("encoder input width does not match the observation config");

    const StageSeeds ss = StageSeeds::from(cfg.seed);
    const CompareConfig cc = cfg.compare_config();
    const auto [train_set, test_set] = make_probe_sets(cc, ss.probe);
    const ProbeResult trained = linear_probe(enc, train_set, test_set);

    EncoderShape shape = enc.shape();
    Encoder init = Encoder::random(shape, derive_seed(ss.train, "encoder-init"), enc.activation);
    if (cfg.train.standardize_inputs) {
        const Corpus corpus = parse_manifest(corpus_text);
        set_input_standardization(init, build_observations(corpus, cfg.observations, ss.nuisance).values);
    }
    const ProbeResult baseline = linear_probe(init, train_set, test_set);

    Json j;
    j["seed"] = cfg.seed;
    j["pair_source"] = to_string(cfg.train.pair_source);
    j["probe_mse"] = trained.mse;
    j["probe_lambda"] = trained.lambda;
    j["random_init_mse"] = baseline.mse;
    j["probe_train_samples"] = train_set.obs.rows();
    j["probe_test_samples"] = test_set.obs.rows();
    Json prov;
    prov["corpus"] = io::hex64(ch);
    if (std::filesystem::exists(out.pca())) {
        const PcaModel pm = load_pca(out.pca().string());
        prov["pca"] = io::hex64(io::content_hash(io::read_file(out.pca().string())));
        prov["pca_corpus"] = io::hex64(pm.corpus_hash);
    }
    if (pairs_hash) prov["pairs"] = io::hex64(pairs_hash);
    prov["encoder"] = io::hex64(io::content_hash(enc_bytes));
    prov["encoder_provenance"] = io::hex64(provenance);
    j["provenance"] = prov;
    j["config"] = config_to_json(cfg);
    detail::write_artifact(out.report(), detail::dump(j));
    return {trained.mse, baseline.mse, trained.lambda};
}

inline Json compare_to_json(const CompareReport& r) {
    Json j;
    Json rows = Json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"source", to_string(row.source)},
                        {"seed", row.seed},
                        {"probe_mse", row.probe_mse},
                        {"final_loss", row.final_loss}});
    j["rows"] = rows;
    Json rnd = Json::object();
    for (const auto& [seed, mse] : r.random_init_mse) rnd[std::to_string(seed)] = mse;
    j["random_init_mse"] = rnd;
    Json med = Json::object();
    for (const auto& [src, mse] : r.median_mse) med[to_string(src)] = mse;
    j["median_mse"] = med;
    Json wins = Json::object();
    for (const auto& [a, row] : r.win_rate)
        for (const auto& [b, rate] : row) wins[to_string(a)][to_string(b)] = rate;
    j["win_rate"] = wins;
    return j;
}

inline CompareReport cmd_compare(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cfg.validate();
    const CompareReport r = compare_pair_sources(cfg.compare_config());
    Json j = compare_to_json(r);
    j["config"] = config_to_json(cfg);
    detail::write_artifact(out.compare(), detail::dump(j));
    return r;
}

// ---------------------------------------------------------------------------
// Mining benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
    std::int64_t n = 0;
    std::string mode;
    unsigned threads = 1;
    double build_seconds = 0.0;
    double mine_seconds = 0.0;  // extrapolated to all n queries when estimated
    bool estimated = false;
    std::size_t queries_timed = 0;
    std::optional<bool> identical_to_single;  // multi-thread runs measured in full
};

struct BenchReport {
    std::vector<BenchRow> rows;
    /// log(t2/t1) / log(n2/n1) of single-thread exact mining between consecutive sizes.
    std::vector<double> exact_scaling_exponents;
};

namespace detail {

/// n synthetic crops projected to the pipeline's embedding dimension. Built
/// video by video so that no full crop list is ever held.
inline std::pair<Eigen::MatrixXd, std::vector<EmbeddingIndex::Row>> bench_embeddings(const PipelineConfig& cfg,
                                                                                   std::int64_t n) {
    const std::int64_t per_video = cfg.synth.crops_per_video;
    const std::int64_t n_videos = (n + per_video - 1) / per_video;
    const std::int64_t chunk_videos = 500;
    std::optional<PcaModel> model;
    Eigen::MatrixXd emb(n, cfg.pca.d_out);
    std::vector<EmbeddingIndex::Row> meta;
    meta.reserve(static_cast<std::size_t>(n));
    std::int64_t row = 0;
    for (std::int64_t v0 = 0; v0 < n_videos && row < n; v0 += chunk_videos) {
        SynthConfig sc = cfg.synth;
        sc.n_videos = std::min(chunk_videos, n_videos - v0);
        sc.left_fraction = 0.0;
        sc.seed = derive_seed(cfg.seed, "bench-chunk", static_cast<std::uint64_t>(v0));
        const SynthCorpus part = generate_corpus(sc);
        const Eigen::MatrixXd x = vectorize_all(part.corpus);
        if (!model) model = pca_fit(x, cfg.pca.d_out, derive_seed(cfg.seed, "bench-pca"), cfg.pca.max_fit_samples);
        const Eigen::MatrixXd p = pca_project_rows(*model, x);
        for (Eigen::Index i = 0; i < p.rows() && row < n; ++i, ++row) {
            emb.row(row) = p.row(i);
            const auto& c = part.corpus.crops()[static_cast<std::size_t>(i)];
            meta.push_back({row, c.video_id + v0, c.frame_idx});
        }
    }
    return {std::move(emb), std::move(meta)};
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Times mine_all-equivalent work on a seeded sample of query batches and
/// scales to all rows.
inline double sampled_mine_seconds(const EmbeddingIndex& index, std::size_t sample, std::uint64_t seed,
                                   std::size_t& timed) {
    Rng rng(seed);
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    timed = 0;
    while (timed < sample) {
        const std::size_t q = rng.index(index.size());
        const std::size_t e = index.mode() == SearchMode::Exact
                                  ? std::min(index.video_range(q).second, q + EmbeddingIndex::kQueryBatch)
                                  : q + 1;
        batches.emplace_back(q, e);
        timed += e - q;
    }
    std::array<std::optional<std::pair<std::size_t, double>>, EmbeddingIndex::kQueryBatch> hits;
    std::vector<std::size_t> rows;
    const auto t0 = std::chrono::steady_clock::now();
    for (auto [b, e] : batches) {
        if (index.mode() == SearchMode::Exact) {
            rows.clear();
            for (std::size_t q = b; q < e; ++q) rows.push_back(q);
            index.exact_nearest_batch(rows, std::span(hits.data(), rows.size()));
        } else {
            hits[0] = index.nearest(b);
        }
    }
    return seconds_since(t0) * static_cast<double>(index.size()) / static_cast<double>(timed);
}

}  // namespace detail

inline BenchReport run_bench(const PipelineConfig& cfg, const std::function<void(const BenchRow&)>& on_row = {}) {
    cfg.validate();
    BenchReport rep;
    const unsigned multi = resolve_threads(cfg.bench.threads);
    std::vector<SearchMode> modes = {SearchMode::Exact};
    if (cfg.bench.approx) modes.push_back(SearchMode::Approx);
    std::vector<std::pair<std::int64_t, double>> exact_single;
    for (const std::int64_t n : cfg.bench.sizes) {
        const auto [emb, meta] = detail::bench_embeddings(cfg, n);
        for (const SearchMode mode : modes) {
            const bool full = n <= (mode == SearchMode::Exact ? cfg.bench.max_full_exact : cfg.bench.max_full_approx);
            std::optional<std::string> single_bytes;
            std::vector<unsigned> thread_counts = {1};
            if (multi > 1) thread_counts.push_back(multi);
            for (const unsigned threads : thread_counts) {
                BenchRow row;
                row.n = n;
                row.mode = to_string(mode);
                row.threads = threads;
                auto t0 = std::chrono::steady_clock::now();
                const EmbeddingIndex index = EmbeddingIndex::from_embeddings(emb, meta, mode, cfg.mining.approx_checks);
                row.build_seconds = detail::seconds_since(t0);
                if (full) {
                    MineOptions mo;
                    mo.threads = threads;
                    t0 = std::chrono::steady_clock::now();
                    const PairManifest m = mine_all(index, mo);
                    row.mine_seconds = detail::seconds_since(t0);
                    row.queries_timed = index.size();
                    const std::string bytes = serialize_pairs(m);
                    if (threads == 1) single_bytes = bytes;
                    else row.identical_to_single = single_bytes && *single_bytes == bytes;
                } else {
                    // The sampled scan is single-threaded; the multi-thread
                    // figure assumes linear speedup and is labeled estimated.
                    row.mine_seconds = detail::sampled_mine_seconds(
                                           index, cfg.bench.sample_queries,
                                           derive_seed(cfg.seed, "bench-sample", static_cast<std::uint64_t>(n)),
                                           row.queries_timed) /
                                       static_cast<double>(threads);
                    row.estimated = true;
                }
                if (mode == SearchMode::Exact && threads == 1) exact_single.emplace_back(n, row.mine_seconds);
                if (on_row) on_row(row);
                rep.rows.push_back(row);
            }
        }
    }
    for (std::size_t i = 1; i < exact_single.size(); ++i) {
        const auto [n1, t1] = exact_single[i - 1];
        const auto [n2, t2] = exact_single[i];
        if (t1 > 0.0 && t2 > 0.0 && n2 != n1)
            rep.exact_scaling_exponents.push_back(std::log(t2 / t1) /
                                                  std::log(static_cast<double>(n2) / static_cast<double>(n1)));
    }
    return rep;
}

inline Json bench_to_json(const BenchReport& r) {
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        Json j = {{"n", row.n},
                  {"mode", row.mode},
                  {"threads", row.threads},
                  {"build_seconds", row.build_seconds},
                  {"mine_seconds", row.mine_seconds},
                  {"estimated", row.estimated},
                  {"queries_timed", row.queries_timed},
                  {"queries_per_second", row.mine_seconds > 0.0 ? static_cast<double>(row.n) / row.mine_seconds : 0.0}};
        if (row.identical_to_single) j["identical_to_single"] = *row.identical_to_single;
        rows.push_back(j);
    }
    return {{"rows", rows}, {"exact_scaling_exponents", r.exact_scaling_exponents}};
}

}  // namespace handclr
