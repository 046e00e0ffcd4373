#pragma once

// Self-attention building blocks over token matrices. Conventions used by the
// whole library:
//   tokens are columns; X is d x n
//   a head is Head(X) = (W_V X) softmax_cols[(W_K X)^T (W_Q X) * score_scale]
//   attention layer: Attn(X) = X + W_O vstack(Head^1 .. Head^h)
//   block: TB(X) = Attn(X) + W_2 relu(W_1 Attn(X))
// Scores are unscaled by default (score_scale = 1); set score_scale to
// 1/sqrt(m) to opt into the usual scaled dot product.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sattn/activations.hpp"
#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/rng.hpp"

namespace sattn {

/// Per-call instrumentation. score_evals counts key-query dot products summed
/// over heads (one dense head contributes n^2, one sparse head sum |A_k|).
/// flops counts multiply-adds spent in attention forward paths.
struct EvalCounter {
    std::uint64_t score_evals = 0;
    std::uint64_t flops = 0;
};

/// Weights of one attention block with h heads of size m over model width d
/// and a feed-forward hidden width r.
struct TransformerParams {
    std::size_t h = 0, m = 0, d = 0, r = 0;
    std::vector<MatrixD> w_v, w_k, w_q;  // h matrices, each m x d
    MatrixD w_o;                         // d x (m*h)
    MatrixD w_1;                         // r x d
    MatrixD w_2;                         // d x r
    MatrixD w_p;                         // d x 3, positional embedding
    double score_scale = 1.0;

    static TransformerParams sized(std::size_t h, std::size_t m, std::size_t d, std::size_t r) {
        TransformerParams p;
        p.h = h;
        p.m = m;
        p.d = d;
        p.r = r;
        p.w_v.assign(h, MatrixD(m, d));
        p.w_k.assign(h, MatrixD(m, d));
        p.w_q.assign(h, MatrixD(m, d));
        p.w_o = MatrixD(d, m * h);
        p.w_1 = MatrixD(r, d);
        p.w_2 = MatrixD(d, r);
        p.w_p = MatrixD(d, 3);
        p.validate();
        return p;
    }

    void validate() const {
        if (h < 1 || m < 1 || d < 1 || r < 1)
            throw config_error("TransformerParams: h, m, d, r must all be >= 1");
        if (w_v.size() != h || w_k.size() != h || w_q.size() != h)
            throw config_error("TransformerParams: need h projection matrices per role");
        for (std::size_t j = 0; j < h; ++j)
            if (w_v[j].rows() != m || w_v[j].cols() != d || w_k[j].rows() != m ||
                w_k[j].cols() != d || w_q[j].rows() != m || w_q[j].cols() != d)
                throw config_error("TransformerParams: projection matrix shape mismatch");
        if (w_o.rows() != d || w_o.cols() != m * h)
            throw config_error("TransformerParams: w_o must be d x (m*h)");
        if (w_1.rows() != r || w_1.cols() != d) throw config_error("TransformerParams: w_1 must be r x d");
        if (w_2.rows() != d || w_2.cols() != r) throw config_error("TransformerParams: w_2 must be d x r");
        if (w_p.rows() != d || w_p.cols() != 3) throw config_error("TransformerParams: w_p must be d x 3");
        if (!(score_scale > 0.0)) throw config_error("TransformerParams: score_scale must be positive");
    }

    /// Gaussian entries scaled by 1/sqrt(fan-in). Deterministic in rng state.
    void random_init(Rng& rng) {
        auto fill = [&rng](MatrixD& w) {
            const double s = 1.0 / std::sqrt(static_cast<double>(w.cols()));
            for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian() * s;
        };
        for (auto& w : w_v) fill(w);
        for (auto& w : w_k) fill(w);
        for (auto& w : w_q) fill(w);
        fill(w_o);
        fill(w_1);
        fill(w_2);
        fill(w_p);
    }

    /// All weight matrices in declared order, for optimizers and serialization.
    std::vector<const MatrixD*> matrices() const {
        std::vector<const MatrixD*> out;
        for (std::size_t j = 0; j < h; ++j) {
            out.push_back(&w_v[j]);
            out.push_back(&w_k[j]);
            out.push_back(&w_q[j]);
        }
        out.push_back(&w_o);
        out.push_back(&w_1);
        out.push_back(&w_2);
        out.push_back(&w_p);
        return out;
    }
    std::vector<MatrixD*> matrices() {
        std::vector<MatrixD*> out;
        for (std::size_t j = 0; j < h; ++j) {
            out.push_back(&w_v[j]);
            out.push_back(&w_k[j]);
            out.push_back(&w_q[j]);
        }
        out.push_back(&w_o);
        out.push_back(&w_1);
        out.push_back(&w_2);
        out.push_back(&w_p);
        return out;
    }
};

/// Which keys each query column may attend to. sets[k] lists the columns
/// visible to query k, in gather order. The softmax attention entry points
/// require every set to be non-empty, in range, and to contain k itself;
/// the exact-arithmetic shift layers use their own relaxed patterns where an
/// empty set means "column untouched".
struct AttentionPattern {
    std::size_t n = 0;
    std::vector<std::vector<std::size_t>> sets;

    std::uint64_t total_links() const {
        std::uint64_t t = 0;
        for (const auto& s : sets) t += s.size();
        return t;
    }

    void validate_for_softmax() const {
        if (sets.size() != n) throw config_error("AttentionPattern: set count != n");
        for (std::size_t k = 0; k < n; ++k) {
            if (sets[k].empty()) throw config_error("AttentionPattern: empty set at " + std::to_string(k));
            bool has_self = false;
            for (std::size_t j : sets[k]) {
                if (j >= n) throw config_error("AttentionPattern: index out of range at " + std::to_string(k));
                has_self |= (j == k);
            }
            if (!has_self)
                throw config_error("AttentionPattern: query " + std::to_string(k) + " does not attend to itself");
        }
    }
};

/// Pattern where every query sees every key.
inline AttentionPattern complete_pattern(std::size_t n) {
    AttentionPattern p;
    p.n = n;
    p.sets.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        p.sets[k].resize(n);
        std::iota(p.sets[k].begin(), p.sets[k].end(), 0);
    }
    return p;
}

/// k nearest neighbours of each point (self always included, distance ties
/// broken toward the lower column index). coords is 3 x n.
inline AttentionPattern knn_pattern(const MatrixD& coords, std::size_t k) {
    const std::size_t n = coords.cols();
    if (coords.rows() != 3) throw config_error("knn_pattern: coords must be 3 x n");
    if (k < 1 || k > n) throw config_error("knn_pattern: need 1 <= k <= n");
    AttentionPattern p;
    p.n = n;
    p.sets.resize(n);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
        cand.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                const double diff = coords(a, i) - coords(a, j);
                d2 += diff * diff;
            }
            cand.emplace_back(d2, i);
        }
        const std::size_t take = k - 1;
        if (take < cand.size())
            std::nth_element(cand.begin(), cand.begin() + take, cand.end());
        std::sort(cand.begin(), cand.begin() + take);
        p.sets[j].push_back(j);
        for (std::size_t t = 0; t < take; ++t) p.sets[j].push_back(cand[t].second);
    }
    return p;
}

/// E = W_p P for 3 x n point coordinates.
inline MatrixD positional_embedding(const MatrixD& coords, const MatrixD& w_p) {
    if (coords.rows() != 3) throw config_error("positional_embedding: coords must be 3 x n");
    if (w_p.cols() != 3) throw config_error("positional_embedding: w_p must be d x 3");
    return matmul(w_p, coords);
}

/// Forward caches kept for the analytic backward pass.
struct DenseHeadCache {
    MatrixD k, q, v;  // m x n projections
    MatrixD p;        // n x n column-stochastic attention weights
};

struct SparseHeadCache {
    MatrixD k, q, v;
    std::vector<std::vector<double>> probs;  // probs[col] aligned with pattern.sets[col]
};

/// One dense head, m x n output. Column k of the output is a convex
/// combination of the value columns weighted by softmax over all n scores.
/// Streams one query column at a time, so no n x n buffer is built unless a
/// cache is requested.
inline MatrixD dense_head(const MatrixD& x, const MatrixD& w_v, const MatrixD& w_k,
                          const MatrixD& w_q, double score_scale = 1.0,
                          EvalCounter* counter = nullptr, DenseHeadCache* cache = nullptr) {
    const std::size_t n = x.cols(), m = w_v.rows(), d = x.rows();
    detail::require(w_v.cols() == d && w_k.cols() == d && w_q.cols() == d,
                    "dense_head: projection width != x rows");
    detail::require(w_k.rows() == m && w_q.rows() == m, "dense_head: head sizes differ");
    const MatrixD v = matmul(w_v, x);
    const MatrixD kt = transpose(matmul(w_k, x));  // n x m, key rows contiguous
    const MatrixD q = matmul(w_q, x);
    MatrixD out(m, n);
    std::vector<double> s(n);
    for (std::size_t col = 0; col < n; ++col) {
        for (std::size_t j = 0; j < n; ++j) {
            const double* krow = kt.row_ptr(j);
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += krow[i] * q(i, col);
            s[j] = acc * score_scale;
        }
        softmax_inplace(s.data(), n);
        for (std::size_t i = 0; i < m; ++i) {
            const double* vrow = v.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += vrow[j] * s[j];
            out(i, col) = acc;
        }
        if (cache) {
            if (cache->p.rows() != n) cache->p = MatrixD(n, n);
            for (std::size_t j = 0; j < n; ++j) cache->p(j, col) = s[j];
        }
    }
    if (counter) {
        counter->score_evals += static_cast<std::uint64_t>(n) * n;
        counter->flops += static_cast<std::uint64_t>(n) * n * m * 2 + 3ull * m * d * n;
    }
    if (cache) {
        cache->v = v;
        cache->k = matmul(w_k, x);
        cache->q = q;
    }
    return out;
}

/// One sparse head. Query k sees only pattern.sets[k]; the softmax runs over
/// those scores alone. Exactly sum |A_k| key-query dots are evaluated.
inline MatrixD sparse_head(const MatrixD& x, const AttentionPattern& pattern, const MatrixD& w_v,
                           const MatrixD& w_k, const MatrixD& w_q, double score_scale = 1.0,
                           EvalCounter* counter = nullptr, SparseHeadCache* cache = nullptr) {
    const std::size_t n = x.cols(), m = w_v.rows();
    detail::require(pattern.n == n, "sparse_head: pattern size != token count");
    pattern.validate_for_softmax();
    const MatrixD v = matmul(w_v, x);
    const MatrixD k = matmul(w_k, x);
    const MatrixD q = matmul(w_q, x);
    MatrixD out(m, n);
    std::vector<double> s;
    std::uint64_t links = 0;
    for (std::size_t col = 0; col < n; ++col) {
        const auto& set = pattern.sets[col];
        s.resize(set.size());
        for (std::size_t t = 0; t < set.size(); ++t) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += k(i, set[t]) * q(i, col);
            s[t] = acc * score_scale;
        }
        softmax_inplace(s.data(), s.size());
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t t = 0; t < set.size(); ++t) acc += v(i, set[t]) * s[t];
            out(i, col) = acc;
        }
        links += set.size();
        if (cache) cache->probs.push_back(s);
    }
    if (counter) {
        counter->score_evals += links;
        counter->flops += links * m * 2 + 3ull * m * x.rows() * n;
    }
    if (cache) {
        cache->v = v;
        cache->k = k;
        cache->q = q;
    }
    return out;
}

struct AttnCache {
    std::vector<DenseHeadCache> dense;    // h entries when dense
    std::vector<SparseHeadCache> sparse;  // h entries when sparse
    MatrixD heads;                        // (m*h) x n stacked head outputs
};

/// Residual multi-head attention: X + W_O vstack(heads). Dense when pattern is
/// null, sparse otherwise.
inline MatrixD multi_head_attention(const MatrixD& x, const TransformerParams& p,
                                    const AttentionPattern* pattern = nullptr,
                                    EvalCounter* counter = nullptr, AttnCache* cache = nullptr) {
    detail::require(x.rows() == p.d, "multi_head_attention: x rows != d");
    const std::size_t n = x.cols();
    MatrixD heads(p.m * p.h, n);
    for (std::size_t j = 0; j < p.h; ++j) {
        MatrixD hj;
        if (pattern) {
            SparseHeadCache* hc = nullptr;
            if (cache) {
                cache->sparse.emplace_back();
                hc = &cache->sparse.back();
            }
            hj = sparse_head(x, *pattern, p.w_v[j], p.w_k[j], p.w_q[j], p.score_scale, counter, hc);
        } else {
            DenseHeadCache* hc = nullptr;
            if (cache) {
                cache->dense.emplace_back();
                hc = &cache->dense.back();
            }
            hj = dense_head(x, p.w_v[j], p.w_k[j], p.w_q[j], p.score_scale, counter, hc);
        }
        for (std::size_t i = 0; i < p.m; ++i)
            for (std::size_t c = 0; c < n; ++c) heads(j * p.m + i, c) = hj(i, c);
    }
    if (cache) cache->heads = heads;
    MatrixD out = add(x, matmul(p.w_o, heads));
    if (counter) counter->flops += static_cast<std::uint64_t>(p.d) * p.m * p.h * n;
    return out;
}

struct BlockCache {
    AttnCache attn;
    MatrixD a;   // post-attention activations
    MatrixD z1;  // w_1 * a before relu
};

/// Full block: residual attention followed by a residual feed-forward layer.
inline MatrixD transformer_block(const MatrixD& x, const TransformerParams& p,
                                 const AttentionPattern* pattern = nullptr,
                                 EvalCounter* counter = nullptr, BlockCache* cache = nullptr) {
    const MatrixD a = multi_head_attention(x, p, pattern, counter, cache ? &cache->attn : nullptr);
    const MatrixD z1 = matmul(p.w_1, a);
    MatrixD y = add(a, matmul(p.w_2, relu(z1)));
    if (cache) {
        cache->a = a;
        cache->z1 = z1;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Checkpoint format, version 1. Little-endian throughout.
//   "SATN" | u32 version | u32 h | u32 m | u32 d | u32 r | f64 score_scale
//   weight matrices as raw row-major f64 in declared order:
//     W_V^0 W_K^0 W_Q^0 ... W_V^{h-1} W_K^{h-1} W_Q^{h-1} W_O W_1 W_2 W_p
//   u32 extra_count, then per extra: u32 name_len | name | u32 rows | u32 cols | f64 data
// The extras section carries whatever surrounds the block (classifier head,
// feature embedding) without the format having to know about it.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw parse_error("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw parse_error("checkpoint: truncated payload");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline void put_matrix(std::ostream& os, const MatrixD& m) {
    for (std::size_t i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}

inline void get_matrix(std::istream& is, MatrixD& m) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
}

}  // namespace detail

using NamedMatrices = std::vector<std::pair<std::string, MatrixD>>;

inline void save_params(const std::string& path, const TransformerParams& p,
                        const NamedMatrices& extras = {}) {
    p.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw parse_error("cannot open for writing: " + path);
    f.write("SATN", 4);
    detail::put_u32(f, 1);
    detail::put_u32(f, static_cast<std::uint32_t>(p.h));
    detail::put_u32(f, static_cast<std::uint32_t>(p.m));
    detail::put_u32(f, static_cast<std::uint32_t>(p.d));
    detail::put_u32(f, static_cast<std::uint32_t>(p.r));
    detail::put_f64(f, p.score_scale);
    for (const MatrixD* m : p.matrices()) detail::put_matrix(f, *m);
    detail::put_u32(f, static_cast<std::uint32_t>(extras.size()));
    for (const auto& [name, m] : extras) {
        detail::put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(f, static_cast<std::uint32_t>(m.rows()));
        detail::put_u32(f, static_cast<std::uint32_t>(m.cols()));
        detail::put_matrix(f, m);
    }
    if (!f.good()) throw parse_error("write failed: " + path);
}

inline std::pair<TransformerParams, NamedMatrices> load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw parse_error("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SATN", 4) != 0)
        throw parse_error(path + ": not a checkpoint file");
    const std::uint32_t version = detail::get_u32(f);
    if (version != 1)
        throw parse_error(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t h = detail::get_u32(f), m = detail::get_u32(f);
    const std::uint32_t d = detail::get_u32(f), r = detail::get_u32(f);
    TransformerParams p = TransformerParams::sized(h, m, d, r);
    p.score_scale = detail::get_f64(f);
    for (MatrixD* mat : p.matrices()) detail::get_matrix(f, *mat);
    NamedMatrices extras;
    const std::uint32_t count = detail::get_u32(f);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const std::uint32_t rows = detail::get_u32(f), cols = detail::get_u32(f);
        MatrixD mat(rows, cols);
        detail::get_matrix(f, mat);
        extras.emplace_back(std::move(name), std::move(mat));
    }
    p.validate();
    return {std::move(p), std::move(extras)};
}

}  // namespace sattn
