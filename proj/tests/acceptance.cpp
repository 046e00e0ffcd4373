// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any fail. Tolerances and seeds are pinned
// here on purpose: a run either reproduces these numbers or it does not.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "sattn/sattn.hpp"

using namespace sattn;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

int failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s", ok ? "PASS" : "FAIL", idx, name);
    if (!detail.empty()) std::printf(" (%s)", detail.c_str());
    std::printf("\n");
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

MatrixD random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    MatrixD m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

TransformerParams random_params(std::size_t h, std::size_t m, std::size_t d, std::size_t r,
                                std::uint64_t seed) {
    TransformerParams p = TransformerParams::sized(h, m, d, r);
    Rng rng(seed);
    p.random_init(rng);
    return p;
}

// plain-loop window attention and sequential composition, kept independent of
// the library code as the comparison oracle
MatrixD oracle_window_attention(const MatrixD& win, const TransformerParams& p) {
    const std::size_t n_s = win.cols(), d = win.rows();
    MatrixD heads(p.m * p.h, n_s);
    for (std::size_t j = 0; j < p.h; ++j) {
        for (std::size_t col = 0; col < n_s; ++col) {
            std::vector<std::size_t> keys;
            if (col + 1 < n_s) keys = {col, col + 1};
            else keys = {col};
            std::vector<double> scores(keys.size());
            for (std::size_t a = 0; a < keys.size(); ++a) {
                double s = 0.0;
                for (std::size_t row = 0; row < p.m; ++row) {
                    double kv = 0.0, qv = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        kv += p.w_k[j](row, i) * win(i, keys[a]);
                        qv += p.w_q[j](row, i) * win(i, col);
                    }
                    s += kv * qv;
                }
                scores[a] = s * p.score_scale;
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double z = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (std::size_t a = 0; a < keys.size(); ++a)
                for (std::size_t row = 0; row < p.m; ++row) {
                    double vv = 0.0;
                    for (std::size_t i = 0; i < d; ++i) vv += p.w_v[j](row, i) * win(i, keys[a]);
                    heads(j * p.m + row, col) += scores[a] / z * vv;
                }
        }
    }
    return add(win, matmul(p.w_o, heads));
}

MatrixD oracle_sequential(const MatrixD& x, const SubsetPlan& plan, const TransformerParams& p) {
    MatrixD y = x;
    const std::size_t l = plan.window_count();
    for (std::size_t i = 0; i < l; ++i) {
        std::vector<std::size_t> idx = plan.windows[i];
        idx.push_back(plan.windows[(i + 1) % l][0]);
        MatrixD win(x.rows(), idx.size());
        for (std::size_t c = 0; c < idx.size(); ++c)
            for (std::size_t row = 0; row < x.rows(); ++row) win(row, c) = y(row, idx[c]);
        MatrixD out = oracle_window_attention(win, p);
        const std::size_t writes = (l == 1) ? idx.size() - 1 : idx.size();
        for (std::size_t c = 0; c < writes; ++c)
            for (std::size_t row = 0; row < x.rows(); ++row) y(row, idx[c]) = out(row, c);
    }
    return y;
}

// --------------------------------------------------------------------------
// 1. exact certificates for three configs, and the ablated schedule fails
// --------------------------------------------------------------------------

void criterion_exact_certificates() {
    Timer t;
    bool ok = true;
    std::string detail;

    struct Case {
        std::size_t n, d;
        std::uint64_t inputs;
        const char* gap;
    };
    const Case cases[] = {{2, 1, 4, "64"}, {3, 1, 8, "432"}, {2, 2, 16, "768"}};
    for (const Case& c : cases) {
        VerifierConfig cfg;
        cfg.n = c.n;
        cfg.d = c.d;
        cfg.delta = Rational(1, 2);
        const CertificateReport rep = verify_contextual_mapping(cfg);
        const bool this_ok = rep.pass() && rep.dominance_checked && rep.inputs == c.inputs &&
                             rep.min_gap_exact == c.gap && rep.wall_ms < 60000.0;
        if (!this_ok) ok = false;
        detail += "n=" + std::to_string(c.n) + ",d=" + std::to_string(c.d) + " gap " +
                  rep.min_gap_exact + "; ";
    }

    VerifierConfig cfg;
    cfg.n = 2;
    cfg.d = 1;
    cfg.delta = Rational(1, 2);
    const CertificateReport ablated = verify_contextual_mapping(cfg, true);
    if (!(!ablated.pass() && !ablated.rule2_pass && ablated.rule1_pass &&
          !ablated.witnesses.empty()))
        ok = false;
    detail += "ablated run fails rule 2 with " + std::to_string(ablated.violation_count) +
              " collisions";

    ok = ok && t.ms() < 60000.0;
    report(1, "exact certificates", ok, detail + ", " + fmt("%.0f", t.ms()) + " ms");
}

// --------------------------------------------------------------------------
// 2. edge coverage: exhaustive exactness and monte carlo agreement
// --------------------------------------------------------------------------

void criterion_edge_coverage() {
    Timer t;
    const EdgeFrequencyMap exact = edge_coverage_exhaustive(4);
    bool ok = exact.samples() == 24 && exact.max_abs_deviation(2.0 / 3.0) == 0.0;

    const std::size_t n = 12;
    const EdgeFrequencyMap mc = edge_coverage(n, 5, 20000, 1);
    const double dev = mc.max_abs_deviation(2.0 / (n - 1.0));
    ok = ok && dev < 0.01 && t.ms() < 10000.0;
    report(2, "edge coverage", ok,
           "exhaustive n=4 deviation 0, mc n=12 deviation " + fmt("%.4f", dev) + ", " +
               fmt("%.0f", t.ms()) + " ms");
}

// --------------------------------------------------------------------------
// 3. monte carlo error shrinks like 1/sqrt(samples)
// --------------------------------------------------------------------------

void criterion_mc_convergence() {
    const std::size_t n = 12;
    const double expected = 2.0 / (n - 1.0);
    const double dev_small = edge_coverage(n, 5, 100, 101).max_abs_deviation(expected);
    const double dev_large = edge_coverage(n, 5, 10000, 102).max_abs_deviation(expected);
    const double ratio = dev_small / dev_large;
    // 100x the samples should cut the worst deviation by about 10; accept a
    // generous band around that
    const bool ok = ratio > 3.0 && ratio < 30.0;
    report(3, "monte carlo convergence", ok,
           fmt("%.4f", dev_small) + " vs " + fmt("%.4f", dev_large) + ", ratio " +
               fmt("%.1f", ratio));
}

// --------------------------------------------------------------------------
// 4. analytic gradients match finite differences for every attention kind
// --------------------------------------------------------------------------

void criterion_gradient_check() {
    Timer t;
    const std::size_t n = 16, f = 3, classes = 3;
    TransformerParams params = random_params(2, 4, 8, 16, 401);
    HeadParams head = HeadParams::sized(8, f, classes);
    Rng rng(402);
    head.random_init(rng);

    std::vector<PointSet> clouds;
    for (int b = 0; b < 6; ++b) {
        PointSet ps;
        ps.coords = random_matrix(3, n, rng);
        ps.features = random_matrix(f, n, rng);
        ps.label = b % static_cast<int>(classes);
        clouds.push_back(std::move(ps));
    }
    std::vector<const PointSet*> batch;
    for (const auto& ps : clouds) batch.push_back(&ps);

    SubsetPlan plan = sample_subset_plan(n, 5, 403);
    bool ok = true;
    std::string detail;
    for (AttentionKind kind : {AttentionKind::Dense, AttentionKind::SparseHamiltonian,
                               AttentionKind::Sampled, AttentionKind::Knn}) {
        ForwardOptions opts;
        opts.kind = kind;
        opts.plan = &plan;
        opts.knn_k = 4;

        BatchCache cache;
        forward_loss(batch, params, head, opts, &cache);
        Gradients g = Gradients::like(params);
        HeadGradients hg = HeadGradients::like(head);
        backward(batch, params, head, opts, cache, g, hg);

        auto loss_fn = [&]() { return forward_loss(batch, params, head, opts).loss; };
        std::vector<MatrixD*> analytic = g.matrices();
        for (MatrixD* mp : hg.matrices()) analytic.push_back(mp);
        std::vector<MatrixD*> weights = params.matrices();
        for (MatrixD* mp : head.matrices()) weights.push_back(mp);

        double worst = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k)
            worst = std::max(worst, max_rel_err(*analytic[k], finite_diff_grad(loss_fn, *weights[k])));
        if (!(worst < 1e-5)) ok = false;
        detail += std::string(kind_name(kind)) + " " + fmt("%.2e", worst) + "; ";
    }
    ok = ok && t.ms() < 60000.0;
    report(4, "gradient check", ok, detail + fmt("%.0f", t.ms()) + " ms");
}

// --------------------------------------------------------------------------
// 5. permutation equivariance, dense and sampled
// --------------------------------------------------------------------------

void criterion_equivariance() {
    Rng rng(501);
    TransformerParams p = random_params(2, 4, 8, 12, 502);

    double worst_dense = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        MatrixD x = random_matrix(8, 24, rng);
        std::vector<std::size_t> perm(24);
        for (std::size_t i = 0; i < 24; ++i) perm[i] = i;
        rng.shuffle(perm);
        MatrixD lhs = transformer_block(permute_columns(x, perm), p, nullptr, nullptr, nullptr);
        MatrixD rhs = permute_columns(transformer_block(x, p, nullptr, nullptr, nullptr), perm);
        worst_dense = std::max(worst_dense, max_abs_diff(lhs, rhs));
    }

    double worst_sampled = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        MatrixD x = random_matrix(8, 12, rng);
        SubsetPlan plan = sample_subset_plan(12, 4, 510 + static_cast<std::uint64_t>(trial));
        std::vector<std::size_t> perm(12), inv(12);
        for (std::size_t i = 0; i < 12; ++i) perm[i] = i;
        rng.shuffle(perm);
        for (std::size_t j = 0; j < 12; ++j) inv[perm[j]] = j;
        MatrixD lhs = sampled_attention(permute_columns(x, perm), relabel_plan(plan, inv), p);
        MatrixD rhs = permute_columns(sampled_attention(x, plan, p), perm);
        worst_sampled = std::max(worst_sampled, max_abs_diff(lhs, rhs));
    }

    const bool ok = worst_dense < 1e-9 && worst_sampled < 1e-9;
    report(5, "permutation equivariance", ok,
           "dense " + fmt("%.2e", worst_dense) + ", sampled " + fmt("%.2e", worst_sampled));
}

// --------------------------------------------------------------------------
// 6. score evaluation counts and the wall-clock gap at large n
// --------------------------------------------------------------------------

void criterion_cost_scaling() {
    const std::size_t n_s = 5;
    TransformerParams p = random_params(4, 8, 32, 64, 601);
    Rng rng(602);

    bool ok = true;
    std::string detail;
    double dense_ms_8192 = 0.0, sampled_ms_8192 = 0.0;
    for (std::size_t n : {256ul, 1024ul, 8192ul}) {
        MatrixD x = random_matrix(32, n, rng);

        EvalCounter dense_counter;
        Timer td;
        transformer_block(x, p, nullptr, &dense_counter);
        const double dense_ms = td.ms();

        SubsetPlan plan = sample_subset_plan(n, n_s, 603);
        EvalCounter sampled_counter;
        Timer ts;
        sampled_transformer_block(x, plan, p, SampledMode::Sequential, &sampled_counter);
        const double sampled_ms = ts.ms();

        const std::size_t l = n / (n_s - 1);
        if (dense_counter.score_evals != p.h * n * n) ok = false;
        if (sampled_counter.score_evals != p.h * l * (2 * n_s - 1)) ok = false;
        if (n == 1024) {
            const double ratio = static_cast<double>(dense_counter.score_evals) /
                                 static_cast<double>(sampled_counter.score_evals);
            if (std::fabs(ratio - 1048576.0 / 2304.0) > 1e-9) ok = false;
            detail += "n=1024 eval ratio " + fmt("%.1f", ratio) + "; ";
        }
        if (n == 8192) {
            dense_ms_8192 = dense_ms;
            sampled_ms_8192 = sampled_ms;
        }
    }
    const double wall_ratio = dense_ms_8192 / sampled_ms_8192;
    ok = ok && wall_ratio >= 20.0;
    report(6, "cost scaling", ok,
           detail + "n=8192 wall " + fmt("%.0f", dense_ms_8192) + " ms dense vs " +
               fmt("%.1f", sampled_ms_8192) + " ms sampled, ratio " + fmt("%.0f", wall_ratio));
}

// --------------------------------------------------------------------------
// 7. the sampled classifier holds up against dense on a toy task
// --------------------------------------------------------------------------

void criterion_toy_training() {
    Timer t;
    SyntheticSpec spec;
    spec.class_shapes = {Shape::SphereSurface, Shape::CubeSurface, Shape::TwoClusterGaussian};
    spec.points_per_cloud = 256;
    spec.noise_sigma = 0.02;
    spec.seed = 701;
    const std::vector<PointSet> dataset = generate_synthetic(spec, 200);

    TrainConfig base;
    base.batch_size = 32;
    base.lr = 1e-3;
    base.optimizer = "adam";
    base.seed = 702;
    base.h = 2;
    base.m = 4;
    base.d = 16;
    base.r = 32;
    base.n_s = 5;

    TrainConfig dense_cfg = base;
    dense_cfg.kind = AttentionKind::Dense;
    dense_cfg.epochs = 4;
    TrainConfig sampled_cfg = base;
    sampled_cfg.kind = AttentionKind::Sampled;
    sampled_cfg.epochs = 8;
    TrainConfig none_cfg = base;
    none_cfg.kind = AttentionKind::None;
    none_cfg.epochs = 8;

    const double acc_dense = train(dataset, dense_cfg).final_test_accuracy;
    const double acc_sampled = train(dataset, sampled_cfg).final_test_accuracy;
    const double acc_none = train(dataset, none_cfg).final_test_accuracy;

    const bool ok = acc_dense >= acc_sampled && acc_sampled >= acc_none - 0.02 &&
                    acc_sampled >= 0.90 && t.ms() < 300000.0;
    report(7, "toy training", ok,
           "dense " + fmt("%.3f", acc_dense) + ", sampled " + fmt("%.3f", acc_sampled) +
               ", none " + fmt("%.3f", acc_none) + ", " + fmt("%.0f", t.ms() / 1000.0) + " s");
}

// --------------------------------------------------------------------------
// 8. reductions: complete pattern equals dense, sequential pass equals oracle
// --------------------------------------------------------------------------

void criterion_reductions() {
    Rng rng(801);
    double worst_complete = 0.0;
    {
        const AttentionPattern pat = complete_pattern(10);
        for (int trial = 0; trial < 50; ++trial) {
            MatrixD x = random_matrix(6, 10, rng);
            MatrixD wv = random_matrix(4, 6, rng), wk = random_matrix(4, 6, rng),
                    wq = random_matrix(4, 6, rng);
            MatrixD sparse = sparse_head(x, pat, wv, wk, wq, 1.0, nullptr, nullptr);
            MatrixD dense = dense_head(x, wv, wk, wq, 1.0, nullptr, nullptr);
            worst_complete = std::max(worst_complete, max_abs_diff(sparse, dense));
        }
    }

    double worst_oracle = 0.0;
    TransformerParams p = random_params(2, 3, 4, 5, 802);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        MatrixD x = random_matrix(4, 6, rng);
        SubsetPlan plan = sample_subset_plan(6, 3, 810 + seed);
        MatrixD got = sampled_attention(x, plan, p, SampledMode::Sequential);
        worst_oracle = std::max(worst_oracle, max_abs_diff(got, oracle_sequential(x, plan, p)));
    }

    const bool ok = worst_complete < 1e-12 && worst_oracle < 1e-12;
    report(8, "reductions", ok,
           "complete-vs-dense " + fmt("%.2e", worst_complete) + ", sequential-vs-oracle " +
               fmt("%.2e", worst_oracle));
}

}  // namespace

int main() {
    criterion_exact_certificates();
    criterion_edge_coverage();
    criterion_mc_convergence();
    criterion_gradient_check();
    criterion_equivariance();
    criterion_cost_scaling();
    criterion_toy_training();
    criterion_reductions();
    if (failures) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
