// Command line frontend: dataset generation, attention benchmarks, edge
// coverage tallies, the exact certificate checker, and classifier training.
//
// Exit codes: 0 success, 1 failed check or diverged run, 2 bad usage or
// config, 3 exceeded enumeration/bit budget.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sattn/sattn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sattn;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

/// One bookkeeping JSON per invocation, written next to the primary output:
/// what ran, with which settings, and which files it produced.
void write_run_manifest(const std::string& primary_output, const std::string& command,
                        const json& settings, std::uint64_t seed,
                        const std::vector<std::string>& outputs, double wall_ms) {
    json j;
    j["command"] = command;
    j["version"] = SATTN_VERSION_STRING;
    j["seed"] = seed;
    j["settings"] = settings;
    j["outputs"] = outputs;
    j["wall_ms"] = wall_ms;
    write_json_file(primary_output + ".run.json", j);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

MatrixD random_input(std::size_t rows, std::size_t cols, Rng& rng) {
    MatrixD m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

/// Repeats the trailing columns so (n_s - 1) divides the column count. The
/// sampled pass needs evenly sized windows; benchmarks pad rather than reject.
MatrixD pad_columns(const MatrixD& x, std::size_t multiple) {
    const std::size_t rem = x.cols() % multiple;
    if (rem == 0) return x;
    const std::size_t padded = x.cols() + (multiple - rem);
    MatrixD out(x.rows(), padded);
    for (std::size_t j = 0; j < padded; ++j)
        for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = x(i, j % x.cols());
    return out;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out_dir;
    std::string classes = "sphere,cube";
    std::size_t clouds_per_class = 50;
    std::size_t points = 256;
    double noise = 0.0;
    std::uint64_t seed = 1;
};

int run_gen(const GenArgs& args) {
    const double t0 = now_ms();
    SyntheticSpec spec;
    for (const std::string& name : split_csv(args.classes))
        spec.class_shapes.push_back(shape_from_name(name));
    if (spec.class_shapes.empty()) throw config_error("gen: need at least one class");
    spec.points_per_cloud = args.points;
    spec.noise_sigma = args.noise;
    spec.seed = args.seed;

    fs::create_directories(args.out_dir);
    std::vector<ManifestClass> classes(spec.class_shapes.size());
    std::vector<std::string> outputs;
    char name[64];
    for (std::size_t cls = 0; cls < spec.class_shapes.size(); ++cls) {
        classes[cls].label = static_cast<int>(cls);
        classes[cls].name = shape_name(spec.class_shapes[cls]);
        for (std::size_t i = 0; i < args.clouds_per_class; ++i) {
            std::snprintf(name, sizeof name, "%s_%03zu_%04zu.xyz", classes[cls].name.c_str(), cls, i);
            write_xyz((fs::path(args.out_dir) / name).string(), generate_cloud(spec, cls, i));
            classes[cls].files.push_back(name);
        }
        outputs.push_back(args.out_dir + "/" + classes[cls].name + "_*.xyz");
    }
    const std::string manifest = (fs::path(args.out_dir) / "manifest.json").string();
    write_manifest(manifest, classes);
    outputs.push_back(manifest);

    json settings = {{"classes", args.classes},       {"clouds_per_class", args.clouds_per_class},
                     {"points", args.points},         {"noise", args.noise},
                     {"seed", args.seed},             {"out_dir", args.out_dir}};
    write_run_manifest(manifest, "gen", settings, args.seed, outputs, now_ms() - t0);
    std::cout << "wrote " << spec.class_shapes.size() * args.clouds_per_class << " clouds to "
              << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string n_list = "256,1024,4096";
    std::string kinds = "dense,sampled";
    std::size_t n_s = 5;
    std::size_t knn_k = 8;
    std::size_t repeats = 3;
    std::size_t h = 4, m = 8, d = 32, r = 64;
    std::uint64_t seed = 1;
    std::string out = "bench.csv";
};

int run_bench(const BenchArgs& args) {
    const double t0 = now_ms();
    std::vector<std::size_t> sizes;
    for (const std::string& tok : split_csv(args.n_list)) sizes.push_back(std::stoull(tok));
    const std::vector<std::string> kinds = split_csv(args.kinds);
    if (sizes.empty() || kinds.empty()) throw config_error("bench: empty --n or --kinds");
    if (args.repeats < 1) throw config_error("bench: repeats must be >= 1");

    std::ofstream out(args.out);
    if (!out) throw config_error("cannot open for writing: " + args.out);
    out << "kind,n,n_padded,h,m,d,r,n_s,k,repeats,score_evals,wall_ms_mean,wall_ms_sd\n";

    Rng rng(args.seed);
    TransformerParams params = TransformerParams::sized(args.h, args.m, args.d, args.r);
    params.random_init(rng);

    for (const std::string& kind_name_ : kinds) {
        const AttentionKind kind = kind_from_name(kind_name_);
        if (kind == AttentionKind::None) throw config_error("bench: kind none measures nothing");
        for (std::size_t n : sizes) {
            MatrixD x = random_input(args.d, n, rng);
            MatrixD coords;
            if (kind == AttentionKind::Sampled) x = pad_columns(x, args.n_s - 1);
            if (kind == AttentionKind::Knn) coords = random_input(3, n, rng);
            const std::size_t n_used = x.cols();

            AttentionPattern pattern;
            const AttentionPattern* pat_ptr = nullptr;
            if (kind == AttentionKind::SparseHamiltonian) {
                pattern = hamiltonian_pattern(n_used);
                pat_ptr = &pattern;
            } else if (kind == AttentionKind::Knn) {
                pattern = knn_pattern(coords, args.knn_k);
                pat_ptr = &pattern;
            }

            std::vector<double> times;
            std::uint64_t score_evals = 0;
            for (std::size_t rep = 0; rep < args.repeats; ++rep) {
                SubsetPlan plan;
                if (kind == AttentionKind::Sampled)
                    plan = sample_subset_plan(n_used, args.n_s, derive_seed(args.seed, rep + 1));
                EvalCounter counter;
                const double s0 = now_ms();
                if (kind == AttentionKind::Sampled)
                    sampled_transformer_block(x, plan, params, SampledMode::Sequential, &counter);
                else
                    transformer_block(x, params, pat_ptr, &counter);
                times.push_back(now_ms() - s0);
                score_evals = counter.score_evals;
            }
            double mean = std::accumulate(times.begin(), times.end(), 0.0) /
                          static_cast<double>(times.size());
            double var = 0.0;
            for (double t : times) var += (t - mean) * (t - mean);
            var /= static_cast<double>(times.size());

            char buf[96];
            std::snprintf(buf, sizeof buf, "%.6g,%.6g", mean, std::sqrt(var));
            out << kind_name_ << "," << n << "," << n_used << "," << args.h << "," << args.m << ","
                << args.d << "," << args.r << "," << args.n_s << "," << args.knn_k << ","
                << args.repeats << "," << score_evals << "," << buf << "\n";
            std::cout << kind_name_ << " n=" << n << ": " << score_evals << " score evals, "
                      << mean << " ms\n";
        }
    }
    out.close();

    json settings = {{"n", args.n_list}, {"kinds", args.kinds},   {"n_s", args.n_s},
                     {"k", args.knn_k},  {"repeats", args.repeats}, {"h", args.h},
                     {"m", args.m},      {"d", args.d},           {"r", args.r}};
    write_run_manifest(args.out, "bench", settings, args.seed, {args.out}, now_ms() - t0);
    return 0;
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

struct CoverageArgs {
    std::size_t n = 12;
    std::size_t n_s = 5;
    std::uint64_t samples = 10000;
    bool exhaustive = false;
    std::uint64_t seed = 1;
    std::string out = "coverage.csv";
};

int run_coverage(const CoverageArgs& args) {
    const double t0 = now_ms();
    EdgeFrequencyMap map = args.exhaustive ? edge_coverage_exhaustive(args.n)
                                           : edge_coverage(args.n, args.n_s, args.samples, args.seed);
    std::ofstream out(args.out);
    if (!out) throw config_error("cannot open for writing: " + args.out);
    map.to_csv(out);
    out.close();

    const double expected = 2.0 / static_cast<double>(args.n - 1);
    const double worst = map.max_abs_deviation(expected);

    const std::string summary_path = args.out + ".summary.json";
    json summary = {{"n", args.n},
                    {"n_s", args.n_s},
                    {"samples", map.samples()},
                    {"exhaustive", args.exhaustive},
                    {"expected_freq", expected},
                    {"max_abs_deviation", worst}};
    write_json_file(summary_path, summary);

    json settings = {{"n", args.n},
                     {"n_s", args.n_s},
                     {"samples", args.samples},
                     {"exhaustive", args.exhaustive}};
    write_run_manifest(args.out, "coverage", settings, args.seed, {args.out, summary_path},
                       now_ms() - t0);
    std::cout << "expected pair frequency " << expected << ", max deviation " << worst << " over "
              << map.samples() << " samples\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
    std::size_t n = 2;
    std::size_t d = 1;
    std::string delta = "1/2";
    bool skip_allmax = false;
    std::uint64_t max_inputs = 4096;
    std::size_t budget_bits = 65536;
    std::string out = "certificate.json";
};

int run_verify(const VerifyArgs& args) {
    const double t0 = now_ms();
    VerifierConfig cfg;
    cfg.n = args.n;
    cfg.d = args.d;
    cfg.delta = parse_rational(args.delta);
    cfg.max_inputs = args.max_inputs;
    cfg.max_bits = args.budget_bits;

    const CertificateReport report = verify_contextual_mapping(cfg, args.skip_allmax);
    write_json_file(args.out, report.to_json());

    json settings = {{"n", args.n},
                     {"d", args.d},
                     {"delta", args.delta},
                     {"skip_allmax", args.skip_allmax},
                     {"max_inputs", args.max_inputs},
                     {"budget_bits", args.budget_bits}};
    write_run_manifest(args.out, "verify", settings, 0, {args.out}, now_ms() - t0);

    if (report.pass()) {
        std::cout << "PASS: " << report.inputs << " inputs, " << report.ids
                  << " ids all distinct, min gap " << report.min_gap_exact << "\n";
        return 0;
    }
    std::cout << "FAIL: " << report.violation_count << " violations\n";
    for (const std::string& w : report.witnesses) std::cout << "  " << w << "\n";
    return 1;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string kind;
    std::string optimizer;
    std::string metrics = "metrics.csv";
    std::string checkpoint;
    // -1 sentinels: not set on the command line
    int epochs = -1, batch = -1, n_s = -1, knn_k = -1, h = -1, m = -1, d = -1, r = -1;
    double lr = -1.0, test_fraction = -1.0;
    long long seed = -1;
    bool scaled_scores = false;
};

TrainConfig merge_train_config(const TrainArgs& args) {
    TrainConfig cfg;
    if (!args.config.empty()) {
        std::ifstream in(args.config);
        if (!in) throw config_error("cannot read config: " + args.config);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw parse_error(args.config + ": " + e.what());
        }
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.optimizer = j.value("optimizer", cfg.optimizer);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("kind")) cfg.kind = kind_from_name(j["kind"].get<std::string>());
        cfg.n_s = j.value("n_s", cfg.n_s);
        cfg.knn_k = j.value("knn_k", cfg.knn_k);
        cfg.h = j.value("h", cfg.h);
        cfg.m = j.value("m", cfg.m);
        cfg.d = j.value("d", cfg.d);
        cfg.r = j.value("r", cfg.r);
        cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
        cfg.scaled_scores = j.value("scaled_scores", cfg.scaled_scores);
    }
    if (!args.kind.empty()) cfg.kind = kind_from_name(args.kind);
    if (!args.optimizer.empty()) cfg.optimizer = args.optimizer;
    if (args.epochs >= 0) cfg.epochs = static_cast<std::size_t>(args.epochs);
    if (args.batch >= 0) cfg.batch_size = static_cast<std::size_t>(args.batch);
    if (args.lr >= 0.0) cfg.lr = args.lr;
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (args.n_s >= 0) cfg.n_s = static_cast<std::size_t>(args.n_s);
    if (args.knn_k >= 0) cfg.knn_k = static_cast<std::size_t>(args.knn_k);
    if (args.h >= 0) cfg.h = static_cast<std::size_t>(args.h);
    if (args.m >= 0) cfg.m = static_cast<std::size_t>(args.m);
    if (args.d >= 0) cfg.d = static_cast<std::size_t>(args.d);
    if (args.r >= 0) cfg.r = static_cast<std::size_t>(args.r);
    if (args.test_fraction >= 0.0) cfg.test_fraction = args.test_fraction;
    if (args.scaled_scores) cfg.scaled_scores = true;
    return cfg;
}

json echo_train_config(const TrainConfig& cfg, const std::string& data) {
    return {{"data", data},
            {"kind", kind_name(cfg.kind)},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"lr", cfg.lr},
            {"optimizer", cfg.optimizer},
            {"seed", cfg.seed},
            {"n_s", cfg.n_s},
            {"knn_k", cfg.knn_k},
            {"h", cfg.h},
            {"m", cfg.m},
            {"d", cfg.d},
            {"r", cfg.r},
            {"test_fraction", cfg.test_fraction},
            {"scaled_scores", cfg.scaled_scores}};
}

int run_train(const TrainArgs& args) {
    const double t0 = now_ms();
    const TrainConfig cfg = merge_train_config(args);
    const std::vector<PointSet> dataset = load_dataset(args.data);
    std::cout << "training " << kind_name(cfg.kind) << " on " << dataset.size() << " clouds of "
              << (dataset.empty() ? 0 : dataset[0].count()) << " points\n";

    const TrainResult result = train(dataset, cfg);

    std::ofstream mout(args.metrics);
    if (!mout) throw config_error("cannot open for writing: " + args.metrics);
    write_metrics_csv(mout, result.metrics);
    mout.close();
    std::vector<std::string> outputs{args.metrics};

    if (!args.checkpoint.empty()) {
        NamedMatrices extras;
        extras.emplace_back("w_f", result.head.w_f);
        extras.emplace_back("w_c", result.head.w_c);
        extras.emplace_back("b_c", result.head.b_c);
        save_params(args.checkpoint, result.params, extras);
        outputs.push_back(args.checkpoint);
    }

    write_run_manifest(args.metrics, "train", echo_train_config(cfg, args.data), cfg.seed, outputs,
                       now_ms() - t0);
    std::printf("final test loss %.6g accuracy %.4f\n", result.final_test_loss,
                result.final_test_accuracy);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sampled attention toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic point cloud dataset");
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    gen_cmd->add_option("--classes", gen.classes, "comma list of sphere|cube|two_cluster");
    gen_cmd->add_option("--clouds-per-class", gen.clouds_per_class);
    gen_cmd->add_option("--points", gen.points, "points per cloud");
    gen_cmd->add_option("--noise", gen.noise, "coordinate noise sigma");
    gen_cmd->add_option("--seed", gen.seed);

    BenchArgs bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "time attention passes and count score evals");
    bench_cmd->add_option("--n", bench.n_list, "comma list of token counts");
    bench_cmd->add_option("--kinds", bench.kinds, "comma list of dense|sparse-hamiltonian|sampled|knn");
    bench_cmd->add_option("--ns", bench.n_s, "sampled window size");
    bench_cmd->add_option("--k", bench.knn_k, "knn neighbor count");
    bench_cmd->add_option("--repeats", bench.repeats);
    bench_cmd->add_option("--heads", bench.h, "attention heads");
    bench_cmd->add_option("--m", bench.m, "head dimension");
    bench_cmd->add_option("--d", bench.d, "model width");
    bench_cmd->add_option("--r", bench.r, "feed-forward width");
    bench_cmd->add_option("--seed", bench.seed);
    bench_cmd->add_option("--out", bench.out, "csv output path");

    CoverageArgs cov;
    CLI::App* cov_cmd = app.add_subcommand("coverage", "edge coverage of sampled cycles");
    cov_cmd->add_option("--n", cov.n, "token count");
    cov_cmd->add_option("--ns", cov.n_s, "sampled window size");
    cov_cmd->add_option("--samples", cov.samples, "plans to draw");
    cov_cmd->add_flag("--exhaustive", cov.exhaustive, "enumerate all permutations instead");
    cov_cmd->add_option("--seed", cov.seed);
    cov_cmd->add_option("--out", cov.out, "csv output path");

    VerifyArgs ver;
    CLI::App* ver_cmd = app.add_subcommand("verify", "exact certificate for the shift schedule");
    ver_cmd->add_option("--n", ver.n, "token count");
    ver_cmd->add_option("--d", ver.d, "grid rows");
    ver_cmd->add_option("--delta", ver.delta, "grid spacing, e.g. 1/2");
    ver_cmd->add_flag("--skip-allmax", ver.skip_allmax, "drop the all-max phase (expected to fail)");
    ver_cmd->add_option("--max-inputs", ver.max_inputs, "enumeration budget");
    ver_cmd->add_option("--budget-bits", ver.budget_bits, "scalar bit-length budget");
    ver_cmd->add_option("--out", ver.out, "certificate json path");

    TrainArgs tr;
    CLI::App* tr_cmd = app.add_subcommand("train", "train a point cloud classifier");
    tr_cmd->add_option("--data", tr.data, "dataset manifest json")->required();
    tr_cmd->add_option("--config", tr.config, "training config json");
    tr_cmd->add_option("--kind", tr.kind, "dense|sparse-hamiltonian|sampled|knn|none");
    tr_cmd->add_option("--epochs", tr.epochs);
    tr_cmd->add_option("--batch", tr.batch);
    tr_cmd->add_option("--lr", tr.lr);
    tr_cmd->add_option("--optimizer", tr.optimizer, "adam|sgd");
    tr_cmd->add_option("--seed", tr.seed);
    tr_cmd->add_option("--ns", tr.n_s, "sampled window size");
    tr_cmd->add_option("--k", tr.knn_k, "knn neighbor count");
    tr_cmd->add_option("--heads", tr.h);
    tr_cmd->add_option("--m", tr.m);
    tr_cmd->add_option("--d", tr.d);
    tr_cmd->add_option("--r", tr.r);
    tr_cmd->add_option("--test-fraction", tr.test_fraction);
    tr_cmd->add_flag("--scaled-scores", tr.scaled_scores, "scale scores by 1/sqrt(m)");
    tr_cmd->add_option("--metrics", tr.metrics, "metrics csv path");
    tr_cmd->add_option("--checkpoint", tr.checkpoint, "weights output path");

    try {
        app.parse(argc, argv);
        if (gen_cmd->parsed()) return run_gen(gen);
        if (bench_cmd->parsed()) return run_bench(bench);
        if (cov_cmd->parsed()) return run_coverage(cov);
        if (ver_cmd->parsed()) return run_verify(ver);
        if (tr_cmd->parsed()) return run_train(tr);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const budget_error& e) {
        std::cerr << "budget exceeded: " << e.what() << "\n";
        return 3;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const training_error& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 1;
    } catch (const schedule_error& e) {
        std::cerr << "schedule check failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
