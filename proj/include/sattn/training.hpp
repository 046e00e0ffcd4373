#pragma once

// Point cloud classification on top of one attention block.
//
//   X0 = W_f F + W_p P              feature and position embeddings, added
//   A  = attention(X0)              by kind: dense, sparse chain over the
//                                   natural order, sampled windows, knn, or
//                                   none (A = X0)
//   Y  = A + W_2 relu(W_1 A)
//   z  = rowwise max over tokens
//   logits = W_c z + b_c, softmax cross-entropy
//
// The backward pass is written out by hand and checked against central finite
// differences in the tests. Sampled attention trains in sequential mode with
// one plan pinned per batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "sattn/attention.hpp"
#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/pointset.hpp"
#include "sattn/rng.hpp"
#include "sattn/sampling.hpp"

namespace sattn {

enum class AttentionKind { Dense, SparseHamiltonian, Sampled, Knn, None };

inline const char* kind_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::Dense: return "dense";
        case AttentionKind::SparseHamiltonian: return "sparse-hamiltonian";
        case AttentionKind::Sampled: return "sampled";
        case AttentionKind::Knn: return "knn";
        case AttentionKind::None: return "none";
    }
    return "?";
}

inline AttentionKind kind_from_name(const std::string& s) {
    if (s == "dense") return AttentionKind::Dense;
    if (s == "sparse-hamiltonian") return AttentionKind::SparseHamiltonian;
    if (s == "sampled") return AttentionKind::Sampled;
    if (s == "knn") return AttentionKind::Knn;
    if (s == "none") return AttentionKind::None;
    throw config_error("unknown attention kind: " + s +
                       " (expected dense|sparse-hamiltonian|sampled|knn|none)");
}

/// Classifier weights around the block: feature embedding (d x f, f may be 0),
/// linear head (classes x d) and bias (classes x 1).
struct HeadParams {
    MatrixD w_f, w_c, b_c;

    static HeadParams sized(std::size_t d, std::size_t feature_dim, std::size_t classes) {
        HeadParams hp;
        hp.w_f = MatrixD(d, feature_dim);
        hp.w_c = MatrixD(classes, d);
        hp.b_c = MatrixD(classes, 1);
        return hp;
    }

    std::size_t classes() const { return w_c.rows(); }

    void random_init(Rng& rng) {
        auto fill = [&rng](MatrixD& w) {
            const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(w.cols(), 1)));
            for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian() * s;
        };
        fill(w_f);
        fill(w_c);
        // bias starts at zero
    }

    std::vector<MatrixD*> matrices() { return {&w_f, &w_c, &b_c}; }
    std::vector<const MatrixD*> matrices() const { return {&w_f, &w_c, &b_c}; }
};

/// Gradient accumulators, one matrix per weight matrix, in the same order as
/// the params' matrices() listing.
struct Gradients {
    std::vector<MatrixD> w_v, w_k, w_q;
    MatrixD w_o, w_1, w_2, w_p;

    static Gradients like(const TransformerParams& p) {
        Gradients g;
        g.w_v.assign(p.h, MatrixD(p.m, p.d));
        g.w_k.assign(p.h, MatrixD(p.m, p.d));
        g.w_q.assign(p.h, MatrixD(p.m, p.d));
        g.w_o = MatrixD(p.d, p.m * p.h);
        g.w_1 = MatrixD(p.r, p.d);
        g.w_2 = MatrixD(p.d, p.r);
        g.w_p = MatrixD(p.d, 3);
        return g;
    }

    std::vector<MatrixD*> matrices() {
        std::vector<MatrixD*> out;
        for (std::size_t j = 0; j < w_v.size(); ++j) {
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

struct HeadGradients {
    MatrixD w_f, w_c, b_c;

    static HeadGradients like(const HeadParams& hp) {
        HeadGradients g;
        g.w_f = MatrixD(hp.w_f.rows(), hp.w_f.cols());
        g.w_c = MatrixD(hp.w_c.rows(), hp.w_c.cols());
        g.b_c = MatrixD(hp.b_c.rows(), 1);
        return g;
    }

    std::vector<MatrixD*> matrices() { return {&w_f, &w_c, &b_c}; }
};

namespace detail {

inline void add_into(MatrixD& dst, const MatrixD& src) {
    require(dst.same_shape(src), "add_into: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

inline void add_scaled(MatrixD& dst, const MatrixD& src, double s) {
    require(dst.same_shape(src), "add_scaled: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += s * src.data()[i];
}

}  // namespace detail

/// Backward through residual multi-head attention. dA is the gradient at the
/// layer output, x the layer input the forward saw, cache the forward caches.
/// Weight gradients accumulate into g; the return value is the gradient at x.
inline MatrixD backward_mha(const MatrixD& dA, const MatrixD& x, const TransformerParams& p,
                            const AttentionPattern* pattern, const AttnCache& cache, Gradients& g) {
    const std::size_t n = x.cols();
    MatrixD dX = dA;
    detail::add_into(g.w_o, matmul(dA, transpose(cache.heads)));
    const MatrixD dH = matmul(transpose(p.w_o), dA);  // (m*h) x n
    for (std::size_t j = 0; j < p.h; ++j) {
        MatrixD dHj(p.m, n);
        for (std::size_t i = 0; i < p.m; ++i)
            for (std::size_t c = 0; c < n; ++c) dHj(i, c) = dH(j * p.m + i, c);

        MatrixD dV(p.m, n), dK(p.m, n), dQ(p.m, n);
        const MatrixD *kproj, *qproj, *vproj;
        if (!pattern) {
            const DenseHeadCache& hc = cache.dense[j];
            kproj = &hc.k;
            qproj = &hc.q;
            vproj = &hc.v;
            dV = matmul(dHj, transpose(hc.p));
            const MatrixD dP = matmul(transpose(hc.v), dHj);  // n x n
            MatrixD dS(n, n);
            for (std::size_t col = 0; col < n; ++col) {
                double dot = 0.0;
                for (std::size_t row = 0; row < n; ++row) dot += hc.p(row, col) * dP(row, col);
                for (std::size_t row = 0; row < n; ++row)
                    dS(row, col) = p.score_scale * hc.p(row, col) * (dP(row, col) - dot);
            }
            dK = matmul(*qproj, transpose(dS));
            dQ = matmul(*kproj, dS);
        } else {
            const SparseHeadCache& hc = cache.sparse[j];
            kproj = &hc.k;
            qproj = &hc.q;
            vproj = &hc.v;
            for (std::size_t col = 0; col < n; ++col) {
                const auto& set = pattern->sets[col];
                const auto& probs = hc.probs[col];
                std::vector<double> dp(set.size());
                for (std::size_t t = 0; t < set.size(); ++t) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < p.m; ++i) acc += hc.v(i, set[t]) * dHj(i, col);
                    dp[t] = acc;
                    for (std::size_t i = 0; i < p.m; ++i) dV(i, set[t]) += probs[t] * dHj(i, col);
                }
                double dot = 0.0;
                for (std::size_t t = 0; t < set.size(); ++t) dot += probs[t] * dp[t];
                for (std::size_t t = 0; t < set.size(); ++t) {
                    const double ds = p.score_scale * probs[t] * (dp[t] - dot);
                    for (std::size_t i = 0; i < p.m; ++i) {
                        dK(i, set[t]) += ds * hc.q(i, col);
                        dQ(i, col) += ds * hc.k(i, set[t]);
                    }
                }
            }
        }
        detail::add_into(g.w_v[j], matmul(dV, transpose(x)));
        detail::add_into(g.w_k[j], matmul(dK, transpose(x)));
        detail::add_into(g.w_q[j], matmul(dQ, transpose(x)));
        detail::add_into(dX, matmul(transpose(p.w_v[j]), dV));
        detail::add_into(dX, matmul(transpose(p.w_k[j]), dK));
        detail::add_into(dX, matmul(transpose(p.w_q[j]), dQ));
    }
    return dX;
}

/// Backward through a sequential sampled attention pass. Windows unwind in
/// reverse order: the written columns' gradients enter the window, the
/// identity path for those columns is cut, and the window input gradients
/// scatter-add back, duplicates included.
inline MatrixD backward_sampled_attention(const MatrixD& dA, const SampledAttnCache& cache,
                                          const TransformerParams& p, Gradients& g) {
    MatrixD dY = dA;
    const std::size_t nwin = cache.window_idx.size();
    if (nwin == 0) throw config_error("backward_sampled_attention: empty cache");
    const std::size_t n_s = cache.window_idx[0].size();
    const AttentionPattern ham = hamiltonian_pattern(n_s);
    for (std::size_t wi = nwin; wi-- > 0;) {
        const auto& idx = cache.window_idx[wi];
        const std::size_t writes = cache.skip_last_write ? n_s - 1 : n_s;
        MatrixD dOut(dY.rows(), n_s);
        for (std::size_t pcol = 0; pcol < writes; ++pcol)
            for (std::size_t i = 0; i < dY.rows(); ++i) dOut(i, pcol) = dY(i, idx[pcol]);
        for (std::size_t pcol = 0; pcol < writes; ++pcol)
            for (std::size_t i = 0; i < dY.rows(); ++i) dY(i, idx[pcol]) = 0.0;
        const MatrixD dWin = backward_mha(dOut, cache.window_input[wi], p, &ham, cache.attn[wi], g);
        for (std::size_t pcol = 0; pcol < n_s; ++pcol)
            for (std::size_t i = 0; i < dY.rows(); ++i) dY(i, idx[pcol]) += dWin(i, pcol);
    }
    return dY;
}

struct ForwardOptions {
    AttentionKind kind = AttentionKind::Dense;
    const SubsetPlan* plan = nullptr;  // required for the sampled kind
    std::size_t knn_k = 8;             // required for the knn kind
};

struct ExampleCache {
    MatrixD x0;
    AttentionPattern pattern;  // sparse kinds only
    BlockCache block;
    SampledBlockCache sampled;
    MatrixD y;
    std::vector<std::size_t> argmax;  // pooled column per feature row
    MatrixD z;                        // d x 1
    std::vector<double> probs;        // softmax over classes
    int label = -1;
};

struct BatchCache {
    std::vector<ExampleCache> examples;
    bool valid = false;
};

struct ForwardResult {
    double loss = 0.0;
    std::size_t correct = 0;
};

namespace detail {

inline MatrixD pool_max(const MatrixD& y, std::vector<std::size_t>& argmax) {
    MatrixD z(y.rows(), 1);
    argmax.assign(y.rows(), 0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < y.cols(); ++j)
            if (y(i, j) > y(i, best)) best = j;  // ties keep the lowest index
        argmax[i] = best;
        z(i, 0) = y(i, best);
    }
    return z;
}

}  // namespace detail

/// Forward pass for one cloud. Returns the cross-entropy loss and the
/// predicted class; fills cache when given (needed for backward).
inline double forward_one(const PointSet& ps, const TransformerParams& params,
                          const HeadParams& head, const ForwardOptions& opts,
                          ExampleCache* cache, std::size_t* predicted = nullptr,
                          EvalCounter* counter = nullptr) {
    ps.validate();
    if (!ps.label.has_value()) throw config_error("forward_one: point set has no label");
    const int label = *ps.label;
    if (label < 0 || static_cast<std::size_t>(label) >= head.classes())
        throw config_error("forward_one: label out of range");
    if (head.w_f.cols() != ps.feature_dim())
        throw config_error("forward_one: feature width mismatch");

    const MatrixD x0 = add(matmul(head.w_f, ps.features), positional_embedding(ps.coords, params.w_p));

    MatrixD a;
    AttentionPattern pattern;
    BlockCache* bc = cache ? &cache->block : nullptr;
    switch (opts.kind) {
        case AttentionKind::Dense:
            a = multi_head_attention(x0, params, nullptr, counter, bc ? &bc->attn : nullptr);
            break;
        case AttentionKind::SparseHamiltonian:
            pattern = hamiltonian_pattern(x0.cols());
            a = multi_head_attention(x0, params, &pattern, counter, bc ? &bc->attn : nullptr);
            break;
        case AttentionKind::Knn:
            pattern = knn_pattern(ps.coords, opts.knn_k);
            a = multi_head_attention(x0, params, &pattern, counter, bc ? &bc->attn : nullptr);
            break;
        case AttentionKind::Sampled: {
            if (!opts.plan) throw config_error("forward_one: sampled kind needs a plan");
            a = sampled_attention(x0, *opts.plan, params, SampledMode::Sequential, counter,
                                  cache ? &cache->sampled.sattn : nullptr);
            break;
        }
        case AttentionKind::None:
            a = x0;
            break;
    }

    const MatrixD z1 = matmul(params.w_1, a);
    const MatrixD y = add(a, matmul(params.w_2, relu(z1)));

    std::vector<std::size_t> argmax;
    const MatrixD z = detail::pool_max(y, argmax);
    MatrixD logits = add(matmul(head.w_c, z), head.b_c);

    std::vector<double> probs(logits.rows());
    for (std::size_t c = 0; c < probs.size(); ++c) probs[c] = logits(c, 0);
    softmax_inplace(probs.data(), probs.size());
    const double loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));

    if (predicted) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c)
            if (probs[c] > probs[best]) best = c;
        *predicted = best;
    }
    if (cache) {
        cache->x0 = x0;
        cache->pattern = std::move(pattern);
        if (opts.kind == AttentionKind::Sampled) {
            cache->sampled.a = a;
            cache->sampled.z1 = z1;
        } else {
            cache->block.a = a;
            cache->block.z1 = z1;
        }
        cache->y = y;
        cache->argmax = std::move(argmax);
        cache->z = z;
        cache->probs = std::move(probs);
        cache->label = label;
    }
    return loss;
}

/// Mean loss over a batch. Fills one cache entry per example when requested.
inline ForwardResult forward_loss(const std::vector<const PointSet*>& batch,
                                  const TransformerParams& params, const HeadParams& head,
                                  const ForwardOptions& opts, BatchCache* cache = nullptr,
                                  EvalCounter* counter = nullptr) {
    if (batch.empty()) throw config_error("forward_loss: empty batch");
    ForwardResult res;
    if (cache) {
        cache->examples.clear();
        cache->examples.resize(batch.size());
        cache->valid = true;
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
        std::size_t predicted = 0;
        const double li = forward_one(*batch[b], params, head,
                                      opts, cache ? &cache->examples[b] : nullptr, &predicted, counter);
        res.loss += li;
        if (static_cast<int>(predicted) == *batch[b]->label) ++res.correct;
    }
    res.loss /= static_cast<double>(batch.size());
    return res;
}

/// Analytic gradients for the batch that produced cache. Gradients of the
/// mean loss accumulate into g and hg.
inline void backward(const std::vector<const PointSet*>& batch, const TransformerParams& params,
                     const HeadParams& head, const ForwardOptions& opts, const BatchCache& cache,
                     Gradients& g, HeadGradients& hg) {
    if (!cache.valid || cache.examples.size() != batch.size())
        throw config_error("backward: cache does not match batch (run forward_loss with a cache)");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const ExampleCache& ec = cache.examples[b];
        const PointSet& ps = *batch[b];

        MatrixD dlogits(head.classes(), 1);
        for (std::size_t c = 0; c < head.classes(); ++c) dlogits(c, 0) = ec.probs[c] * inv_b;
        dlogits(static_cast<std::size_t>(ec.label), 0) -= inv_b;

        detail::add_into(hg.w_c, matmul(dlogits, transpose(ec.z)));
        detail::add_into(hg.b_c, dlogits);
        const MatrixD dz = matmul(transpose(head.w_c), dlogits);

        MatrixD dY(ec.y.rows(), ec.y.cols());
        for (std::size_t i = 0; i < dY.rows(); ++i) dY(i, ec.argmax[i]) = dz(i, 0);

        const bool sampled = (opts.kind == AttentionKind::Sampled);
        const MatrixD& a = sampled ? ec.sampled.a : ec.block.a;
        const MatrixD& z1 = sampled ? ec.sampled.z1 : ec.block.z1;

        const MatrixD dR = matmul(transpose(params.w_2), dY);
        MatrixD dz1 = dR;
        for (std::size_t i = 0; i < dz1.size(); ++i)
            if (z1.data()[i] <= 0.0) dz1.data()[i] = 0.0;
        detail::add_into(g.w_2, matmul(dY, transpose(relu(z1))));
        detail::add_into(g.w_1, matmul(dz1, transpose(a)));
        MatrixD dA = add(dY, matmul(transpose(params.w_1), dz1));

        MatrixD dX0;
        switch (opts.kind) {
            case AttentionKind::Dense:
                dX0 = backward_mha(dA, ec.x0, params, nullptr, ec.block.attn, g);
                break;
            case AttentionKind::SparseHamiltonian:
            case AttentionKind::Knn:
                dX0 = backward_mha(dA, ec.x0, params, &ec.pattern, ec.block.attn, g);
                break;
            case AttentionKind::Sampled:
                dX0 = backward_sampled_attention(dA, ec.sampled.sattn, params, g);
                break;
            case AttentionKind::None:
                dX0 = dA;
                break;
        }
        detail::add_into(hg.w_f, matmul(dX0, transpose(ps.features)));
        detail::add_into(g.w_p, matmul(dX0, transpose(ps.coords)));
    }
}

/// Central finite differences of fn with respect to every entry of param.
inline MatrixD finite_diff_grad(const std::function<double()>& fn, MatrixD& param,
                                double eps = 1e-5) {
    MatrixD grad(param.rows(), param.cols());
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + eps;
        const double up = fn();
        param.data()[i] = saved - eps;
        const double down = fn();
        param.data()[i] = saved;
        grad.data()[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// max over entries of |a-b| / max(|a|, |b|, floor).
inline double max_rel_err(const MatrixD& a, const MatrixD& b, double floor_ = 1e-3) {
    detail::require(a.same_shape(b), "max_rel_err: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i], y = b.data()[i];
        worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor_}));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Optimizers and the training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::string optimizer = "adam";  // adam | sgd
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t seed = 1;
    AttentionKind kind = AttentionKind::Dense;
    std::size_t n_s = 5;  // sampled window size
    std::size_t knn_k = 8;
    std::size_t h = 4, m = 8, d = 32, r = 64;
    double test_fraction = 0.2;
    bool scaled_scores = false;  // score_scale = 1/sqrt(m) when set

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw config_error("TrainConfig: epochs and batch_size >= 1");
        if (!(lr >= 0.0)) throw config_error("TrainConfig: lr must be >= 0");
        if (optimizer != "adam" && optimizer != "sgd")
            throw config_error("TrainConfig: optimizer must be adam or sgd");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw config_error("TrainConfig: test_fraction must be in (0,1)");
    }
};

/// Adam or plain SGD over a fixed list of parameter matrices.
class Optimizer {
  public:
    Optimizer(const TrainConfig& cfg, const std::vector<MatrixD*>& params)
        : cfg_(cfg), params_(params) {
        if (cfg_.optimizer == "adam") {
            for (MatrixD* p : params_) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
        }
    }

    void step(const std::vector<const MatrixD*>& grads) {
        if (grads.size() != params_.size()) throw config_error("Optimizer: gradient list mismatch");
        ++t_;
        if (cfg_.optimizer == "sgd") {
            for (std::size_t k = 0; k < params_.size(); ++k)
                detail::add_scaled(*params_[k], *grads[k], -cfg_.lr);
            return;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            MatrixD& p = *params_[k];
            const MatrixD& gr = *grads[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = gr.data()[i];
                m_[k].data()[i] = cfg_.beta1 * m_[k].data()[i] + (1.0 - cfg_.beta1) * gi;
                v_[k].data()[i] = cfg_.beta2 * v_[k].data()[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m_[k].data()[i] / bc1;
                const double vhat = v_[k].data()[i] / bc2;
                p.data()[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
            }
        }
    }

  private:
    TrainConfig cfg_;
    std::vector<MatrixD*> params_;
    std::vector<MatrixD> m_, v_;
    std::uint64_t t_ = 0;
};

struct MetricsRow {
    std::size_t epoch;
    std::string split;
    double loss;
    double accuracy;
};

/// CSV with header epoch,split,loss,accuracy.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << "epoch,split,loss,accuracy\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g", r.loss, r.accuracy);
        os << r.epoch << "," << r.split << "," << buf << "\n";
    }
}

struct TrainResult {
    TransformerParams params;
    HeadParams head;
    std::vector<MetricsRow> metrics;
    double final_test_loss = 0.0;
    double final_test_accuracy = 0.0;
};

namespace detail {

inline ForwardResult evaluate(const std::vector<const PointSet*>& items,
                              const TransformerParams& params, const HeadParams& head,
                              const TrainConfig& cfg, std::uint64_t plan_salt) {
    ForwardOptions opts;
    opts.kind = cfg.kind;
    opts.knn_k = cfg.knn_k;
    ForwardResult total;
    SubsetPlan plan;
    if (cfg.kind == AttentionKind::Sampled) {
        plan = sample_subset_plan(items[0]->count(), cfg.n_s, derive_seed(cfg.seed, 0xEF, plan_salt));
        opts.plan = &plan;
    }
    for (const PointSet* ps : items) {
        std::size_t predicted = 0;
        total.loss += forward_one(*ps, params, head, opts, nullptr, &predicted);
        if (static_cast<int>(predicted) == *ps->label) ++total.correct;
    }
    total.loss /= static_cast<double>(items.size());
    return total;
}

}  // namespace detail

/// Full training run: stratified split, minibatches, optimizer steps, one
/// metrics row per epoch and split. Deterministic in cfg.seed. Sampled kind
/// draws one fresh plan per batch. Aborts with training_error if the loss
/// stops being finite.
inline TrainResult train(const std::vector<PointSet>& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.size() < 4) throw config_error("train: dataset too small");
    const std::size_t n = dataset[0].count();
    const std::size_t feat = dataset[0].feature_dim();
    int max_label = 0;
    for (const auto& ps : dataset) {
        ps.validate();
        if (!ps.label.has_value()) throw config_error("train: unlabeled point set");
        if (ps.count() != n || ps.feature_dim() != feat)
            throw config_error("train: all clouds must share point count and feature width");
        max_label = std::max(max_label, *ps.label);
    }
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
    if (classes < 2) throw config_error("train: need at least 2 classes");
    if (cfg.kind == AttentionKind::Sampled) {
        if (cfg.n_s < 2 || cfg.n_s > n || n % (cfg.n_s - 1) != 0)
            throw config_error("train: sampled kind needs 2 <= n_s <= n with (n_s - 1) | n; pad "
                               "the clouds or pick another n_s");
    }
    if (cfg.kind == AttentionKind::Knn && (cfg.knn_k < 1 || cfg.knn_k > n))
        throw config_error("train: knn kind needs 1 <= k <= n");

    // Stratified split, deterministic in seed.
    std::vector<std::size_t> train_idx, test_idx;
    {
        std::vector<std::vector<std::size_t>> by_class(classes);
        for (std::size_t i = 0; i < dataset.size(); ++i)
            by_class[static_cast<std::size_t>(*dataset[i].label)].push_back(i);
        Rng rng(derive_seed(cfg.seed, 0xA));
        for (auto& cls : by_class) {
            if (cls.size() < 2) throw config_error("train: every class needs at least 2 clouds");
            rng.shuffle(cls);
            const std::size_t n_test =
                std::max<std::size_t>(1, static_cast<std::size_t>(
                                             std::llround(static_cast<double>(cls.size()) * cfg.test_fraction)));
            for (std::size_t i = 0; i < cls.size(); ++i)
                (i < n_test ? test_idx : train_idx).push_back(cls[i]);
        }
    }

    TransformerParams params = TransformerParams::sized(cfg.h, cfg.m, cfg.d, cfg.r);
    if (cfg.scaled_scores) params.score_scale = 1.0 / std::sqrt(static_cast<double>(cfg.m));
    HeadParams head = HeadParams::sized(cfg.d, feat, classes);
    {
        Rng rng(derive_seed(cfg.seed, 1));
        params.random_init(rng);
        head.random_init(rng);
    }

    std::vector<MatrixD*> all_params = params.matrices();
    for (MatrixD* mp : head.matrices()) all_params.push_back(mp);
    Optimizer opt(cfg, all_params);

    std::vector<const PointSet*> test_items;
    for (std::size_t i : test_idx) test_items.push_back(&dataset[i]);

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffler(derive_seed(cfg.seed, 100 + epoch));
        std::vector<std::size_t> order = train_idx;
        shuffler.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0, seen = 0, batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<const PointSet*> batch;
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset[order[i]]);

            ForwardOptions opts;
            opts.kind = cfg.kind;
            opts.knn_k = cfg.knn_k;
            SubsetPlan plan;
            if (cfg.kind == AttentionKind::Sampled) {
                plan = sample_subset_plan(n, cfg.n_s, derive_seed(cfg.seed, 200 + epoch, batch_no));
                opts.plan = &plan;
            }

            BatchCache cache;
            const ForwardResult fr = forward_loss(batch, params, head, opts, &cache);
            if (!std::isfinite(fr.loss))
                throw training_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                     " batch " + std::to_string(batch_no));
            Gradients g = Gradients::like(params);
            HeadGradients hg = HeadGradients::like(head);
            backward(batch, params, head, opts, cache, g, hg);

            std::vector<const MatrixD*> grads;
            for (MatrixD* mp : g.matrices()) grads.push_back(mp);
            for (MatrixD* mp : hg.matrices()) grads.push_back(mp);
            opt.step(grads);

            epoch_loss += fr.loss * static_cast<double>(batch.size());
            epoch_correct += fr.correct;
            seen += batch.size();
        }

        const ForwardResult test = detail::evaluate(test_items, params, head, cfg, epoch);
        result.metrics.push_back({epoch, "train", epoch_loss / static_cast<double>(seen),
                                  static_cast<double>(epoch_correct) / static_cast<double>(seen)});
        result.metrics.push_back({epoch, "test", test.loss,
                                  static_cast<double>(test.correct) /
                                      static_cast<double>(test_items.size())});
        result.final_test_loss = test.loss;
        result.final_test_accuracy =
            static_cast<double>(test.correct) / static_cast<double>(test_items.size());
    }
    result.params = std::move(params);
    result.head = std::move(head);
    return result;
}

}  // namespace sattn
