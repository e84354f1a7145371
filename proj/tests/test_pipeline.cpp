#include <gtest/gtest.h>

#include <filesystem>

#include "handclr/pipeline.hpp"

using namespace handclr;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config() {
    return parse_config(R"({
        "seed": 5,
        "synth": {"n_videos": 6, "crops_per_video": 20, "base_pose_pool": 3},
        "training": {"steps": 15, "batch_pairs": 8},
        "probe": {"videos": 200, "crops_per_video": 4}
    })");
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("handclr_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

void run_all(const PipelineConfig& cfg, const ArtifactPaths& out) {
    cmd_generate(cfg, out);
    cmd_fit_pca(cfg, out);
    cmd_mine(cfg, out);
    cmd_train(cfg, out);
    cmd_probe(cfg, out);
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const PipelineConfig c = parse_config("{}");
    EXPECT_EQ(config_to_json(c), config_to_json(PipelineConfig{}));
    EXPECT_EQ(c.train.shape.input, c.observations.dim());
}

TEST(Config, JsonRoundTrip) {
    const PipelineConfig c = tiny_config();
    EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
}

TEST(Config, UnknownKeysAndBadTypesAreRejected) {
    EXPECT_THROW(parse_config(R"({"sed": 1})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"training": {"stepz": 1}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"training": {"steps": "many"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"seed": -1})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"mining": {"mode": "fuzzy"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"pca": {"d_out": 0}})"), ConfigError);
    EXPECT_THROW(parse_config("{"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/handclr.json"), ConfigError);
}

TEST(Config, OverridesBeatTheFile) {
    const PipelineConfig c =
        apply_overrides(tiny_config(), {"training.steps=3", "mining.mode=approx", "mining.max_distance=0.5", "seed=9"});
    EXPECT_EQ(c.train.steps, 3);
    EXPECT_EQ(c.mining.mode, SearchMode::Approx);
    ASSERT_TRUE(c.mining.max_distance);
    EXPECT_EQ(*c.mining.max_distance, 0.5);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.synth.n_videos, 6);
    EXPECT_THROW(apply_overrides(c, {"nope"}), ConfigError);
    EXPECT_THROW(apply_overrides(c, {"training.nope=1"}), ConfigError);
    EXPECT_THROW(apply_overrides(c, {"seed.x=1"}), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
    const std::string root = HANDCLR_SOURCE_DIR;
    EXPECT_NO_THROW(load_config(root + "/configs/smoke.json"));
    // The protocol file spells out the defaults.
    EXPECT_EQ(config_to_json(load_config(root + "/configs/protocol.json")), config_to_json(PipelineConfig{}));
}

TEST(Stages, FullChainWritesEveryArtifact) {
    const ArtifactPaths out{scratch("chain")};
    const PipelineConfig cfg = tiny_config();
    run_all(cfg, out);
    for (const auto& p : {out.corpus(), out.ground_truth(), out.pca(), out.pca_text(), out.pairs(), out.encoder(),
                          out.train_log(), out.report()})
        EXPECT_TRUE(fs::exists(p)) << p;
    const Json report = Json::parse(io::read_file(out.report().string()));
    EXPECT_TRUE(report["probe_mse"].is_number());
    EXPECT_EQ(report["provenance"]["corpus"], report["provenance"]["pca_corpus"]);
    const PairManifest pairs = load_pairs(out.pairs().string());
    EXPECT_EQ(io::hex64(pairs.corpus_hash), report["provenance"]["corpus"].get<std::string>());
    const std::string log = io::read_file(out.train_log().string());
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 16);
    fs::remove_all(out.dir);
}

TEST(Stages, MissingUpstreamArtifactIsReported) {
    const ArtifactPaths out{scratch("missing")};
    const PipelineConfig cfg = tiny_config();
    EXPECT_THROW(cmd_fit_pca(cfg, out), MissingArtifact);
    cmd_generate(cfg, out);
    EXPECT_THROW(cmd_mine(cfg, out), MissingArtifact);
    EXPECT_THROW(cmd_train(cfg, out), MissingArtifact);
    try {
        cmd_probe(cfg, out);
        FAIL();
    } catch (const MissingArtifact& e) {
        EXPECT_NE(std::string(e.what()).find("encoder.bin"), std::string::npos);
    }
    fs::remove_all(out.dir);
}

TEST(Stages, RegeneratedCorpusMakesDownstreamStale) {
    const ArtifactPaths out{scratch("stale")};
    PipelineConfig cfg = tiny_config();
    run_all(cfg, out);
    PipelineConfig other = cfg;
    other.seed = 6;
    cmd_generate(other, out);
    EXPECT_THROW(cmd_mine(other, out), StaleArtifact);
    EXPECT_THROW(cmd_train(other, out), StaleArtifact);
    EXPECT_THROW(cmd_probe(other, out), StaleArtifact);
    // Refitting alone leaves the pairs stale for training.
    cmd_fit_pca(other, out);
    EXPECT_THROW(cmd_train(other, out), StaleArtifact);
    cmd_mine(other, out);
    EXPECT_NO_THROW(cmd_train(other, out));
    EXPECT_NO_THROW(cmd_probe(other, out));
    fs::remove_all(out.dir);
}

TEST(Stages, SelfAugmentDoesNotNeedPairs) {
    const ArtifactPaths out{scratch("self")};
    PipelineConfig cfg = tiny_config();
    cfg.train.pair_source = PairSource::SelfAugment;
    cmd_generate(cfg, out);
    EXPECT_NO_THROW(cmd_train(cfg, out));
    EXPECT_NO_THROW(cmd_probe(cfg, out));
    fs::remove_all(out.dir);
}

TEST(Stages, TwoCropsInTwoVideosGiveTwoMutualPairs) {
    const ArtifactPaths out{scratch("two")};
    fs::create_directories(out.dir);
    std::string text = "# handclr-corpus v1\n";
    for (int i = 0; i < 2; ++i) {
        text += std::to_string(i) + " " + std::to_string(i) + " 0 R 0.9";
        for (int j = 0; j < 21; ++j) text += " " + io::format_double(0.3 + 0.01 * j + 0.1 * i) + " 0.5";
        text += "\n";
    }
    io::write_file(out.corpus().string(), text);
    PipelineConfig cfg = tiny_config();
    cfg.pca.d_out = 2;
    EXPECT_TRUE(cmd_fit_pca(cfg, out).rank_deficient);
    const MineSummary s = cmd_mine(cfg, out);
    EXPECT_EQ(s.pairs, 2u);
    EXPECT_FALSE(s.quality);
    const PairManifest m = load_pairs(out.pairs().string());
    ASSERT_EQ(m.pairs.size(), 2u);
    EXPECT_EQ(m.pairs[0].positive_crop_id, 1);
    EXPECT_EQ(m.pairs[1].positive_crop_id, 0);
    EXPECT_EQ(m.pairs[0].distance, m.pairs[1].distance);
    fs::remove_all(out.dir);
}

TEST(Stages, CliStagesMatchTheLibraryProtocol) {
    const ArtifactPaths out{scratch("match")};
    const PipelineConfig cfg = tiny_config();
    cmd_generate(cfg, out);
    cmd_fit_pca(cfg, out);
    cmd_mine(cfg, out);
    const PreparedCorpus pc = prepare_corpus(cfg.compare_config(), StageSeeds::from(cfg.seed));
    EXPECT_EQ(load_manifest(out.corpus().string()), pc.corpus);
    EXPECT_EQ(load_pca(out.pca().string()), pc.pca);
    EXPECT_EQ(load_pairs(out.pairs().string()), pc.pairs);
    fs::remove_all(out.dir);
}

TEST(Stages, SameSeedGivesByteIdenticalArtifacts) {
    const ArtifactPaths a{scratch("det_a")}, b{scratch("det_b")};
    PipelineConfig cfg = tiny_config();
    cfg.threads = 1;
    run_all(cfg, a);
    cfg.threads = 3;
    run_all(cfg, b);
    for (const char* f : {"corpus.txt", "groundtruth.txt", "pca.bin", "pairs.txt", "encoder.bin", "train_log.txt"})
        EXPECT_EQ(io::read_file((a.dir / f).string()), io::read_file((b.dir / f).string())) << f;
    // The report embeds the config, whose thread count differs.
    Json ra = Json::parse(io::read_file(a.report().string())), rb = Json::parse(io::read_file(b.report().string()));
    ra.erase("config");
    rb.erase("config");
    EXPECT_EQ(ra, rb);
    fs::remove_all(a.dir);
    fs::remove_all(b.dir);
}

TEST(Bench, SmallRunReportsIdenticalMultiThreadedOutput) {
    PipelineConfig cfg = tiny_config();
    cfg.bench.sizes = {1500};
    cfg.bench.threads = 2;
    const BenchReport r = run_bench(cfg);
    const Json j = bench_to_json(r);
    ASSERT_FALSE(r.rows.empty());
    for (const auto& row : r.rows) {
        EXPECT_FALSE(row.estimated);
        if (row.threads > 1) {
            EXPECT_TRUE(row.identical_to_single.value_or(false));
        }
    }
    EXPECT_TRUE(j.contains("rows"));
}
