// handclr: command-line driver for the pair-mining and contrastive
// pre-training pipeline. See README.md for the verbs and artifact layout.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "handclr/pipeline.hpp"

namespace {

using namespace handclr;

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Usage: return 1;
        case ErrorKind::Data: return 2;
        case ErrorKind::Dependency: return 3;
    }
    return 2;
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out = "out";
    std::vector<std::string> sets;

    // per-command overrides
    std::optional<std::string> mode;
    std::optional<std::size_t> top_k;
    std::optional<double> max_distance;
    std::optional<std::string> pair_source;
    std::optional<int> steps;
    std::optional<double> lr;
    std::vector<std::uint64_t> seeds;
    std::vector<std::int64_t> sizes;
    std::optional<unsigned> bench_threads;
};

PipelineConfig resolve(const Options& o) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    std::vector<std::string> sets = o.sets;
    auto set = [&](const std::string& key, const std::string& json) { sets.push_back(key + "=" + json); };
    if (o.seed) set("seed", std::to_string(*o.seed));
    if (o.threads) set("threads", std::to_string(*o.threads));
    if (o.mode) set("mining.mode", "\"" + *o.mode + "\"");
    if (o.top_k) set("mining.top_k", std::to_string(*o.top_k));
    if (o.max_distance) set("mining.max_distance", io::format_double(*o.max_distance));
    if (o.pair_source) set("training.pair_source", "\"" + *o.pair_source + "\"");
    if (o.steps) set("training.steps", std::to_string(*o.steps));
    if (o.lr) set("training.learning_rate", io::format_double(*o.lr));
    if (!o.seeds.empty()) set("compare.seeds", Json(o.seeds).dump());
    if (!o.sizes.empty()) set("bench.sizes", Json(o.sizes).dump());
    if (o.bench_threads) set("bench.threads", std::to_string(*o.bench_threads));
    return sets.empty() ? cfg : apply_overrides(cfg, sets);
}

void print_generate(const GenerateSummary& s) {
    std::printf("generate: %zu crops, %lld videos, corpus %s\n", s.crops, static_cast<long long>(s.videos),
                io::hex64(s.corpus_hash).c_str());
}

void print_fit(const FitPcaSummary& s) {
    std::printf("fit-pca: D=%d, explained variance %.6f%s, model %s\n", s.d_out, s.explained,
                s.rank_deficient ? " (rank deficient)" : "", io::hex64(s.pca_hash).c_str());
}

void print_mine(const MineSummary& s) {
    std::printf("mine: %zu pairs, mean embedding distance %.6g", s.pairs, s.mean_distance);
    if (s.quality)
        std::printf(", pose distance %.4f vs random %.4f, nn recall %.3f", s.quality->mean_pair_distance,
                    s.quality->mean_random_distance, s.quality->nn_recall);
    std::printf("\n");
}

void print_train(const TrainSummary& s) {
    std::printf("train: %zu steps, loss %.6f -> %.6f, encoder %s\n", s.steps, s.first_loss, s.final_loss,
                io::hex64(s.encoder_hash).c_str());
}

void print_probe(const ProbeSummary& s) {
    std::printf("probe: mse %.6f (random init %.6f, lambda %g)\n", s.probe_mse, s.random_init_mse, s.lambda);
}

void print_compare(const CompareReport& r) {
    for (const auto& [src, m] : r.median_mse) std::printf("compare: %-26s median mse %.6f\n", to_string(src).c_str(), m);
    std::vector<double> rnd;
    for (const auto& [seed, m] : r.random_init_mse) rnd.push_back(m);
    std::printf("compare: %-26s median mse %.6f\n", "random_init", median(rnd));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-video hand pair mining and contrastive pre-training pipeline"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        cmd->add_option("--seed", o.seed, "top-level seed");
        cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
        cmd->add_option("--out", o.out, "artifact directory")->capture_default_str();
        cmd->add_option("--set", o.sets, "config override, key.path=value (repeatable)");
    };

    auto* gen = app.add_subcommand("generate", "synthesize and preprocess the corpus");
    auto* fit = app.add_subcommand("fit-pca", "fit the pose PCA on the corpus");
    auto* mine = app.add_subcommand("mine", "mine cross-video positive pairs");
    auto* trn = app.add_subcommand("train", "contrastive pre-training");
    auto* prb = app.add_subcommand("probe", "linear probe of the trained encoder");
    auto* run = app.add_subcommand("run", "generate, fit-pca, mine, train and probe in sequence");
    auto* cmp = app.add_subcommand("compare", "compare pair sources over several seeds");
    auto* bench = app.add_subcommand("bench", "time index build and mining at several sizes");
    auto* show = app.add_subcommand("config", "print the effective config as JSON");
    for (auto* c : {gen, fit, mine, trn, prb, run, cmp, bench, show}) add_common(c);
    for (auto* c : {mine, run, show}) {
        c->add_option("--mode", o.mode, "exact or approx");
        c->add_option("--top-k", o.top_k, "pick among the k nearest");
        c->add_option("--max-distance", o.max_distance, "drop pairs farther than this");
    }
    for (auto* c : {trn, run, show}) {
        c->add_option("--pair-source", o.pair_source, "self_augment, self_augment_equivariant or mined_pairs");
        c->add_option("--steps", o.steps, "training steps");
        c->add_option("--lr", o.lr, "learning rate");
    }
    cmp->add_option("--seeds", o.seeds, "experiment seeds");
    bench->add_option("--sizes", o.sizes, "corpus sizes");
    bench->add_option("--bench-threads", o.bench_threads, "threads of the multi-threaded runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        const PipelineConfig cfg = resolve(o);
        const ArtifactPaths out{o.out};
        if (*gen) print_generate(cmd_generate(cfg, out));
        if (*fit) print_fit(cmd_fit_pca(cfg, out));
        if (*mine) print_mine(cmd_mine(cfg, out));
        if (*trn) print_train(cmd_train(cfg, out));
        if (*prb) print_probe(cmd_probe(cfg, out));
        if (*run) {
            print_generate(cmd_generate(cfg, out));
            print_fit(cmd_fit_pca(cfg, out));
            print_mine(cmd_mine(cfg, out));
            print_train(cmd_train(cfg, out));
            print_probe(cmd_probe(cfg, out));
        }
        if (*cmp) print_compare(cmd_compare(cfg, out));
        if (*bench) {
            const BenchReport r = run_bench(cfg, [](const BenchRow& row) {
                std::printf("bench: n=%lld %s threads=%u build %.3fs mine %.3fs%s\n", static_cast<long long>(row.n),
                            row.mode.c_str(), row.threads, row.build_seconds, row.mine_seconds,
                            row.estimated ? " (estimated)" : "");
                std::fflush(stdout);
            });
            std::filesystem::create_directories(out.dir);
            io::write_file(out.bench().string(), bench_to_json(r).dump(2) + "\n");
        }
        if (*show) std::cout << config_to_json(cfg).dump(2) << "\n";
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
