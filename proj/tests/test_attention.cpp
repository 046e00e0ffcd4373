#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sattn/attention.hpp"
#include "sattn/rng.hpp"

using namespace sattn;

namespace {

MatrixD random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    MatrixD m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian() * scale;
    return m;
}

TransformerParams random_params(std::size_t h, std::size_t m, std::size_t d, std::size_t r,
                                std::uint64_t seed) {
    TransformerParams p = TransformerParams::sized(h, m, d, r);
    Rng rng(seed);
    p.random_init(rng);
    return p;
}

// single attention head written as plainly as possible: explicit loops,
// no shared code with the library implementation
MatrixD naive_head(const MatrixD& x, const MatrixD& wv, const MatrixD& wk, const MatrixD& wq,
                   const AttentionPattern* pattern, double score_scale) {
    const std::size_t n = x.cols(), m = wv.rows(), d = x.rows();
    MatrixD out(m, n);
    for (std::size_t col = 0; col < n; ++col) {
        std::vector<std::size_t> keys;
        if (pattern) keys = pattern->sets[col];
        else
            for (std::size_t i = 0; i < n; ++i) keys.push_back(i);
        std::vector<double> scores(keys.size());
        for (std::size_t a = 0; a < keys.size(); ++a) {
            double s = 0.0;
            for (std::size_t row = 0; row < m; ++row) {
                double kv = 0.0, qv = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    kv += wk(row, i) * x(i, keys[a]);
                    qv += wq(row, i) * x(i, col);
                }
                s += kv * qv;
            }
            scores[a] = s * score_scale;
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            z += s;
        }
        for (std::size_t a = 0; a < keys.size(); ++a) {
            const double w = scores[a] / z;
            for (std::size_t row = 0; row < m; ++row) {
                double vv = 0.0;
                for (std::size_t i = 0; i < d; ++i) vv += wv(row, i) * x(i, keys[a]);
                out(row, col) += w * vv;
            }
        }
    }
    return out;
}

MatrixD naive_block(const MatrixD& x, const TransformerParams& p, const AttentionPattern* pattern) {
    MatrixD heads(p.m * p.h, x.cols());
    for (std::size_t j = 0; j < p.h; ++j) {
        MatrixD hj = naive_head(x, p.w_v[j], p.w_k[j], p.w_q[j], pattern, p.score_scale);
        for (std::size_t row = 0; row < p.m; ++row)
            for (std::size_t col = 0; col < x.cols(); ++col)
                heads(j * p.m + row, col) = hj(row, col);
    }
    MatrixD a = add(x, matmul(p.w_o, heads));
    return add(a, matmul(p.w_2, relu(matmul(p.w_1, a))));
}

}  // namespace

TEST_CASE("positional embedding") {
    Rng rng(1);
    MatrixD coords = random_matrix(3, 6, rng);
    MatrixD wp = random_matrix(4, 3, rng);
    MatrixD e = positional_embedding(coords, wp);
    CHECK(e.rows() == 4);
    CHECK(e.cols() == 6);

    // identity-on-the-first-three-rows map reproduces the coordinates
    MatrixD id(3, 3);
    for (std::size_t i = 0; i < 3; ++i) id(i, i) = 1.0;
    CHECK(positional_embedding(coords, id) == coords);

    MatrixD zero(4, 3);
    CHECK(max_abs(positional_embedding(coords, zero)) == 0.0);
}

TEST_CASE("dense head on a single column is just the value projection") {
    Rng rng(2);
    MatrixD x = random_matrix(5, 1, rng);
    MatrixD wv = random_matrix(3, 5, rng), wk = random_matrix(3, 5, rng),
            wq = random_matrix(3, 5, rng);
    DenseHeadCache cache;
    MatrixD out = dense_head(x, wv, wk, wq, 1.0, nullptr, &cache);
    CHECK(max_abs_diff(out, matmul(wv, x)) < 1e-14);
}

TEST_CASE("zero keys give the uniform average of values") {
    Rng rng(3);
    MatrixD x = random_matrix(4, 7, rng);
    MatrixD wv = random_matrix(2, 4, rng);
    MatrixD zero(2, 4);
    MatrixD out = dense_head(x, wv, zero, zero, 1.0, nullptr, nullptr);
    MatrixD v = matmul(wv, x);
    for (std::size_t row = 0; row < 2; ++row) {
        double mean = 0.0;
        for (std::size_t col = 0; col < 7; ++col) mean += v(row, col) / 7.0;
        for (std::size_t col = 0; col < 7; ++col) CHECK(std::fabs(out(row, col) - mean) < 1e-13);
    }
}

TEST_CASE("dense head matches the naive oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        MatrixD x = random_matrix(4, 4, rng);
        MatrixD wv = random_matrix(3, 4, rng), wk = random_matrix(3, 4, rng),
                wq = random_matrix(3, 4, rng);
        MatrixD got = dense_head(x, wv, wk, wq, 1.0, nullptr, nullptr);
        MatrixD want = naive_head(x, wv, wk, wq, nullptr, 1.0);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("scaled scores change the result consistently") {
    Rng rng(5);
    MatrixD x = random_matrix(4, 5, rng);
    MatrixD wv = random_matrix(3, 4, rng), wk = random_matrix(3, 4, rng),
            wq = random_matrix(3, 4, rng);
    const double s = 1.0 / std::sqrt(3.0);
    MatrixD got = dense_head(x, wv, wk, wq, s, nullptr, nullptr);
    MatrixD want = naive_head(x, wv, wk, wq, nullptr, s);
    CHECK(max_abs_diff(got, want) < 1e-12);
    // and differ from the unscaled result
    CHECK(max_abs_diff(got, dense_head(x, wv, wk, wq, 1.0, nullptr, nullptr)) > 1e-6);
}

TEST_CASE("multi-head attention with zero output projection is the identity") {
    Rng rng(6);
    TransformerParams p = random_params(3, 2, 5, 4, 60);
    p.w_o = MatrixD(5, 6);
    MatrixD x = random_matrix(5, 8, rng);
    CHECK(multi_head_attention(x, p, nullptr, nullptr, nullptr) == x);
}

TEST_CASE("transformer block with all-zero weights is the identity") {
    TransformerParams p = TransformerParams::sized(2, 3, 4, 5);
    Rng rng(7);
    MatrixD x = random_matrix(4, 6, rng);
    CHECK(transformer_block(x, p, nullptr, nullptr, nullptr) == x);
}

TEST_CASE("transformer block matches the naive oracle") {
    Rng rng(8);
    TransformerParams p = random_params(2, 3, 4, 5, 61);
    MatrixD x = random_matrix(4, 6, rng);
    CHECK(max_abs_diff(transformer_block(x, p, nullptr, nullptr, nullptr), naive_block(x, p, nullptr)) <
          1e-12);
}

TEST_CASE("dense block is permutation equivariant") {
    Rng rng(9);
    TransformerParams p = random_params(2, 3, 4, 6, 62);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixD x = random_matrix(4, 9, rng);
        std::vector<std::size_t> perm(9);
        for (std::size_t i = 0; i < 9; ++i) perm[i] = i;
        rng.shuffle(perm);
        MatrixD lhs = transformer_block(permute_columns(x, perm), p, nullptr, nullptr, nullptr);
        MatrixD rhs = permute_columns(transformer_block(x, p, nullptr, nullptr, nullptr), perm);
        CHECK(max_abs_diff(lhs, rhs) < 1e-9);
    }
}

TEST_CASE("attention pattern validation") {
    AttentionPattern pat;
    pat.n = 3;
    pat.sets = {{0, 1}, {1}, {2, 0}};
    CHECK_NOTHROW(pat.validate_for_softmax());
    CHECK(pat.total_links() == 5);

    pat.sets[1] = {};  // empty key set has no softmax
    CHECK_THROWS_AS(pat.validate_for_softmax(), config_error);
    pat.sets[1] = {0};  // missing the query itself
    CHECK_THROWS_AS(pat.validate_for_softmax(), config_error);
    pat.sets[1] = {1, 3};  // out of range
    CHECK_THROWS_AS(pat.validate_for_softmax(), config_error);
}

TEST_CASE("sparse head with a complete pattern equals the dense head") {
    Rng rng(10);
    AttentionPattern pat = complete_pattern(6);
    for (int trial = 0; trial < 10; ++trial) {
        MatrixD x = random_matrix(4, 6, rng);
        MatrixD wv = random_matrix(3, 4, rng), wk = random_matrix(3, 4, rng),
                wq = random_matrix(3, 4, rng);
        MatrixD sparse = sparse_head(x, pat, wv, wk, wq, 1.0, nullptr, nullptr);
        MatrixD dense = dense_head(x, wv, wk, wq, 1.0, nullptr, nullptr);
        CHECK(max_abs_diff(sparse, dense) < 1e-12);
    }
}

TEST_CASE("self-only pattern reduces each column to its value projection") {
    Rng rng(11);
    AttentionPattern pat;
    pat.n = 5;
    pat.sets.resize(5);
    for (std::size_t i = 0; i < 5; ++i) pat.sets[i] = {i};
    MatrixD x = random_matrix(4, 5, rng);
    MatrixD wv = random_matrix(3, 4, rng), wk = random_matrix(3, 4, rng),
            wq = random_matrix(3, 4, rng);
    MatrixD out = sparse_head(x, pat, wv, wk, wq, 1.0, nullptr, nullptr);
    CHECK(max_abs_diff(out, matmul(wv, x)) < 1e-13);
}

TEST_CASE("sparse head matches the naive oracle on a chain pattern") {
    Rng rng(12);
    AttentionPattern pat;
    pat.n = 4;
    pat.sets = {{0, 1}, {1, 2}, {2, 3}, {3}};
    MatrixD x = random_matrix(3, 4, rng);
    MatrixD wv = random_matrix(2, 3, rng), wk = random_matrix(2, 3, rng),
            wq = random_matrix(2, 3, rng);
    MatrixD got = sparse_head(x, pat, wv, wk, wq, 1.0, nullptr, nullptr);
    MatrixD want = naive_head(x, wv, wk, wq, &pat, 1.0);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("knn pattern") {
    // four collinear points at x = 0, 1, 2, 4
    MatrixD coords(3, 4);
    coords(0, 1) = 1.0;
    coords(0, 2) = 2.0;
    coords(0, 3) = 4.0;

    AttentionPattern k2 = knn_pattern(coords, 2);
    CHECK(k2.sets[0] == std::vector<std::size_t>{0, 1});
    CHECK(k2.sets[1] == std::vector<std::size_t>{1, 0});  // ties broken by index
    CHECK(k2.sets[2] == std::vector<std::size_t>{2, 1});
    CHECK(k2.sets[3] == std::vector<std::size_t>{3, 2});

    AttentionPattern k1 = knn_pattern(coords, 1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(k1.sets[i] == std::vector<std::size_t>{i});

    AttentionPattern k4 = knn_pattern(coords, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(k4.sets[i].size() == 4);
        CHECK(k4.sets[i][0] == i);
    }
    CHECK_NOTHROW(k4.validate_for_softmax());

    CHECK_THROWS_AS(knn_pattern(coords, 0), config_error);
    CHECK_THROWS_AS(knn_pattern(coords, 5), config_error);
}

TEST_CASE("knn with duplicate points keeps the lowest index") {
    MatrixD coords(3, 3);  // points 0 and 2 coincide
    coords(0, 1) = 10.0;
    AttentionPattern pat = knn_pattern(coords, 2);
    CHECK(pat.sets[0] == std::vector<std::size_t>{0, 2});
    CHECK(pat.sets[1] == std::vector<std::size_t>{1, 0});
    CHECK(pat.sets[2] == std::vector<std::size_t>{2, 0});
}

TEST_CASE("evaluation counters are exact") {
    Rng rng(13);
    const std::size_t n = 16;
    MatrixD x = random_matrix(4, n, rng);
    MatrixD wv = random_matrix(3, 4, rng), wk = random_matrix(3, 4, rng),
            wq = random_matrix(3, 4, rng);

    EvalCounter dense;
    dense_head(x, wv, wk, wq, 1.0, &dense, nullptr);
    CHECK(dense.score_evals == n * n);

    AttentionPattern pat;
    pat.n = n;
    pat.sets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        pat.sets[i] = {i, (i + 1) % n};
    }
    EvalCounter sparse;
    sparse_head(x, pat, wv, wk, wq, 1.0, &sparse, nullptr);
    CHECK(sparse.score_evals == pat.total_links());
    CHECK(sparse.score_evals == 2 * n);
}

TEST_CASE("parameter shape validation") {
    TransformerParams p = TransformerParams::sized(2, 3, 4, 5);
    CHECK_NOTHROW(p.validate());
    p.w_1 = MatrixD(5, 3);  // wrong inner dimension
    CHECK_THROWS_AS(p.validate(), config_error);

    CHECK_THROWS_AS(TransformerParams::sized(0, 3, 4, 5), config_error);
}

TEST_CASE("checkpoint round-trip is bitwise exact") {
    TransformerParams p = random_params(2, 3, 4, 5, 63);
    p.score_scale = 0.5;
    Rng rng(14);
    NamedMatrices extras;
    extras.emplace_back("w_f", random_matrix(4, 3, rng));
    extras.emplace_back("w_c", random_matrix(2, 4, rng));

    const std::string path =
        (std::filesystem::temp_directory_path() / "sattn_ckpt_test.bin").string();
    save_params(path, p, extras);

    const auto [back, back_extras] = load_params(path);
    CHECK(back.h == p.h);
    CHECK(back.score_scale == p.score_scale);
    auto pm = p.matrices();
    auto bm = back.matrices();
    REQUIRE(pm.size() == bm.size());
    for (std::size_t i = 0; i < pm.size(); ++i) CHECK(*pm[i] == *bm[i]);
    REQUIRE(back_extras.size() == 2);
    CHECK(back_extras[0].first == "w_f");
    CHECK(back_extras[0].second == extras[0].second);
    CHECK(back_extras[1].second == extras[1].second);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign files") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string bad = (dir / "sattn_ckpt_bad.bin").string();
    {
        std::ofstream out(bad, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_params(bad), parse_error);

    // valid magic, unknown version
    {
        std::ofstream out(bad, std::ios::binary);
        out << "SATN";
        const unsigned char ver[4] = {9, 0, 0, 0};
        out.write(reinterpret_cast<const char*>(ver), 4);
    }
    CHECK_THROWS_AS(load_params(bad), parse_error);

    // truncated file
    TransformerParams p = random_params(1, 2, 2, 2, 64);
    const std::string good = (dir / "sattn_ckpt_trunc.bin").string();
    save_params(good, p, {});
    {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_params(bad), parse_error);
    std::filesystem::remove(bad);
    std::filesystem::remove(good);
}
