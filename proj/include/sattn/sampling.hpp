#pragma once

// Random element sampling for sparse attention over point sets. A subset plan
// splits the n token columns into l ordered windows of n_s - 1 indices drawn
// from a uniform random permutation. Window i additionally borrows the first
// index of window gamma(i) = (i + 1) mod l as a linking element, placed last,
// and a chain-structured pattern inside each window stitches the windows into
// one Hamiltonian cycle over all tokens.

#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sattn/attention.hpp"
#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/rng.hpp"

namespace sattn {

/// Successor window index on the cycle of l windows. gamma(l-1) wraps to 0;
/// a single window links to itself.
inline std::size_t cycle_successor(std::size_t i, std::size_t l) {
    if (l == 0) throw config_error("cycle_successor: l must be positive");
    if (i >= l) throw config_error("cycle_successor: index out of range");
    return (i + 1) % l;
}

/// Disjoint ordered windows covering every column index exactly once.
/// l * (n_s - 1) = n always holds. Plans built by sample_subset_plan have
/// 2 <= n_s <= n; the single-window edge case n_s = n + 1 (l = 1) is legal
/// for directly constructed plans.
struct SubsetPlan {
    std::size_t n = 0;
    std::size_t n_s = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> windows;

    std::size_t window_count() const { return windows.size(); }

    void validate() const {
        if (n_s < 2) throw config_error("SubsetPlan: n_s must be >= 2");
        const std::size_t l = windows.size();
        if (l == 0 || l * (n_s - 1) != n)
            throw config_error("SubsetPlan: window bookkeeping broken, need l*(n_s-1) == n");
        std::vector<bool> seen(n, false);
        for (const auto& w : windows) {
            if (w.size() != n_s - 1) throw config_error("SubsetPlan: window size != n_s - 1");
            for (std::size_t c : w) {
                if (c >= n) throw config_error("SubsetPlan: column index out of range");
                if (seen[c]) throw config_error("SubsetPlan: column appears twice");
                seen[c] = true;
            }
        }
    }
};

/// Draws a plan from a uniform random permutation of the columns (Fisher-Yates,
/// then chopped into l consecutive windows). Requires (n_s - 1) | n; callers
/// with awkward n can pad tokens before planning.
inline SubsetPlan sample_subset_plan(std::size_t n, std::size_t n_s, std::uint64_t seed) {
    if (n_s < 2 || n_s > n) throw config_error("sample_subset_plan: need 2 <= n_s <= n");
    if (n % (n_s - 1) != 0)
        throw config_error("sample_subset_plan: (n_s - 1) must divide n; pad the input or pick "
                           "another n_s");
    SubsetPlan plan;
    plan.n = n;
    plan.n_s = n_s;
    plan.seed = seed;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm);
    const std::size_t l = n / (n_s - 1);
    plan.windows.resize(l);
    for (std::size_t i = 0; i < l; ++i)
        plan.windows[i].assign(perm.begin() + static_cast<std::ptrdiff_t>(i * (n_s - 1)),
                               perm.begin() + static_cast<std::ptrdiff_t>((i + 1) * (n_s - 1)));
    return plan;
}

/// Columns window i operates on: its own indices followed by the linking
/// element, the first index of the successor window. Length n_s. With a single
/// window the link duplicates the window's own first index.
inline std::vector<std::size_t> window_columns(const SubsetPlan& plan, std::size_t i) {
    if (i >= plan.window_count()) throw config_error("window_columns: window index out of range");
    std::vector<std::size_t> cols = plan.windows[i];
    cols.push_back(plan.windows[cycle_successor(i, plan.window_count())][0]);
    return cols;
}

/// Chain pattern over n_s window positions: position k sees {k, k+1}, the last
/// position sees only itself. Exactly 2 n_s - 1 links in total.
inline AttentionPattern hamiltonian_pattern(std::size_t n_s) {
    if (n_s < 1) throw config_error("hamiltonian_pattern: n_s must be >= 1");
    AttentionPattern p;
    p.n = n_s;
    p.sets.resize(n_s);
    for (std::size_t k = 0; k + 1 < n_s; ++k) p.sets[k] = {k, k + 1};
    p.sets[n_s - 1] = {n_s - 1};
    return p;
}

/// The Hamiltonian cycle a plan induces on the columns: the concatenation of
/// its windows, traversed in order with wraparound.
struct HamiltonianCycle {
    std::vector<std::size_t> order;

    /// The n successor edges (order[t], order[t+1 mod n]).
    std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> e;
        e.reserve(order.size());
        for (std::size_t t = 0; t < order.size(); ++t)
            e.emplace_back(order[t], order[(t + 1) % order.size()]);
        return e;
    }
};

inline HamiltonianCycle induced_cycle(const SubsetPlan& plan) {
    HamiltonianCycle c;
    c.order.reserve(plan.n);
    for (const auto& w : plan.windows) c.order.insert(c.order.end(), w.begin(), w.end());
    return c;
}

enum class SampledMode { Sequential, Parallel };

/// Forward bookkeeping for the backward pass through sampled attention.
struct SampledAttnCache {
    std::vector<std::vector<std::size_t>> window_idx;
    std::vector<MatrixD> window_input;  // as materialized when the window ran
    std::vector<AttnCache> attn;
    bool skip_last_write = false;  // single-window duplicate link
};

/// Sampled attention pass: applies residual multi-head attention with the
/// chain pattern to every window.
///
/// Sequential mode composes the windows: window i reads columns already
/// updated by windows before it and writes back all of its n_s columns, so its
/// update of the linking element is visible to the successor window. Parallel
/// mode lets every window read the original X and write only the n_s - 1
/// columns it owns; the linking copy never writes. With a single window the
/// linking position duplicates the window's first column and its write-back is
/// dropped, which makes the two modes coincide.
inline MatrixD sampled_attention(const MatrixD& x, const SubsetPlan& plan,
                                 const TransformerParams& params,
                                 SampledMode mode = SampledMode::Sequential,
                                 EvalCounter* counter = nullptr,
                                 SampledAttnCache* cache = nullptr) {
    plan.validate();
    if (x.cols() != plan.n) throw config_error("sampled_attention: plan is for a different n");
    const std::size_t l = plan.window_count();
    const std::size_t n_s = plan.n_s;
    const AttentionPattern pattern = hamiltonian_pattern(n_s);
    MatrixD y = x;
    const bool single = (l == 1);
    if (cache) cache->skip_last_write = single;
    for (std::size_t i = 0; i < l; ++i) {
        const std::vector<std::size_t> idx = window_columns(plan, i);
        const MatrixD& source = (mode == SampledMode::Sequential) ? y : x;
        MatrixD win = gather_columns(source, idx);
        AttnCache* ac = nullptr;
        if (cache) {
            cache->window_idx.push_back(idx);
            cache->window_input.push_back(win);
            cache->attn.emplace_back();
            ac = &cache->attn.back();
        }
        const MatrixD out = multi_head_attention(win, params, &pattern, counter, ac);
        const std::size_t writes = (mode == SampledMode::Parallel || single) ? n_s - 1 : n_s;
        for (std::size_t p = 0; p < writes; ++p) set_column(y, idx[p], out, p);
    }
    return y;
}

struct SampledBlockCache {
    SampledAttnCache sattn;
    MatrixD a;   // post-attention activations
    MatrixD z1;  // w_1 * a before relu
};

/// Sampled attention followed by the residual feed-forward layer.
inline MatrixD sampled_transformer_block(const MatrixD& x, const SubsetPlan& plan,
                                         const TransformerParams& params,
                                         SampledMode mode = SampledMode::Sequential,
                                         EvalCounter* counter = nullptr,
                                         SampledBlockCache* cache = nullptr) {
    const MatrixD a = sampled_attention(x, plan, params, mode, counter, cache ? &cache->sattn : nullptr);
    const MatrixD z1 = matmul(params.w_1, a);
    MatrixD y = add(a, matmul(params.w_2, relu(z1)));
    if (cache) {
        cache->a = a;
        cache->z1 = z1;
    }
    return y;
}

/// Plan with every column index c replaced by new_index_of[c]. Used to check
/// that permuting tokens and relabeling the plan the same way commutes with
/// the attention pass.
inline SubsetPlan relabel_plan(const SubsetPlan& plan, const std::vector<std::size_t>& new_index_of) {
    if (new_index_of.size() != plan.n) throw config_error("relabel_plan: relabeling length != n");
    SubsetPlan out = plan;
    for (auto& w : out.windows)
        for (auto& c : w) c = new_index_of[c];
    out.validate();
    return out;
}

/// Tally of how often each unordered column pair {i, j} shows up as a cycle
/// edge. Presence per sample: a pair counts once per plan even if the cycle
/// touches it twice (only possible at n = 2).
class EdgeFrequencyMap {
  public:
    EdgeFrequencyMap() = default;
    explicit EdgeFrequencyMap(std::size_t n) : n_(n), counts_(n * (n - 1) / 2, 0) {
        if (n < 2) throw config_error("EdgeFrequencyMap: need n >= 2");
    }

    std::size_t n() const { return n_; }
    std::uint64_t samples() const { return samples_; }

    void add_cycle(const HamiltonianCycle& cycle) {
        for (auto [a, b] : cycle.edges()) {
            if (a == b) throw config_error("EdgeFrequencyMap: self edge");
            // At n = 2 both directed edges collapse onto one pair; count it once.
            if (n_ == 2 && a > b) continue;
            ++counts_[pair_index(std::min(a, b), std::max(a, b))];
        }
        ++samples_;
    }

    std::uint64_t count(std::size_t i, std::size_t j) const {
        if (i == j || i >= n_ || j >= n_) throw config_error("EdgeFrequencyMap: bad pair");
        return counts_[pair_index(std::min(i, j), std::max(i, j))];
    }

    double freq(std::size_t i, std::size_t j) const {
        if (samples_ == 0) throw config_error("EdgeFrequencyMap: no samples");
        return static_cast<double>(count(i, j)) / static_cast<double>(samples_);
    }

    /// max over pairs of |freq - expected|.
    double max_abs_deviation(double expected) const {
        double worst = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = i + 1; j < n_; ++j)
                worst = std::max(worst, std::abs(freq(i, j) - expected));
        return worst;
    }

    /// CSV with header i,j,count,samples,freq; one row per pair, i < j,
    /// 0-based indices.
    void to_csv(std::ostream& os) const {
        os << "i,j,count,samples,freq\n";
        char buf[32];
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = i + 1; j < n_; ++j) {
                std::snprintf(buf, sizeof buf, "%.10g", freq(i, j));
                os << i << "," << j << "," << count(i, j) << "," << samples_ << "," << buf << "\n";
            }
    }

  private:
    std::size_t pair_index(std::size_t i, std::size_t j) const {
        // row i upper triangle, j > i
        return i * (2 * n_ - i - 1) / 2 + (j - i - 1);
    }

    std::size_t n_ = 0;
    std::uint64_t samples_ = 0;
    std::vector<std::uint64_t> counts_;
};

/// Monte Carlo edge coverage: samples plans (seeds derived from the master
/// seed per sample index) and tallies induced cycle edges. Every unordered
/// pair is a cycle edge with probability 2 / (n - 1).
inline EdgeFrequencyMap edge_coverage(std::size_t n, std::size_t n_s, std::uint64_t samples,
                                      std::uint64_t seed) {
    if (samples == 0) throw config_error("edge_coverage: need at least one sample");
    EdgeFrequencyMap map(n);
    for (std::uint64_t s = 0; s < samples; ++s) {
        const SubsetPlan plan = sample_subset_plan(n, n_s, derive_seed(seed, s + 1));
        map.add_cycle(induced_cycle(plan));
    }
    return map;
}

/// Exact coverage by enumerating all n! column permutations. The induced cycle
/// depends only on the permutation, not on the window size, so no n_s is
/// taken. Kept small: n! plans are visited.
inline EdgeFrequencyMap edge_coverage_exhaustive(std::size_t n) {
    if (n < 2 || n > 10) throw config_error("edge_coverage_exhaustive: need 2 <= n <= 10");
    EdgeFrequencyMap map(n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
        HamiltonianCycle c;
        c.order = perm;
        map.add_cycle(c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return map;
}

}  // namespace sattn
