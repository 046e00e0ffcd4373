#pragma once

// Exact certificate checker for the hardmax shift construction. Everything in
// this header runs on arbitrary-precision rationals; no floating point enters
// any comparison.
//
// Setup, all indices 0-based. Token columns live on the grid G in [0,1)^d with
// spacing delta = 1/q. A fixed embedding offsets the columns so their id
// intervals are disjoint: column 0 is shifted by n-1 in every row, column
// i >= 1 by i-1. The id of a column is the dot product with
// u = (1, q, q^2, ..., q^(d-1)), which reads the column as a base-q numeral.
//
// The schedule has two phases:
//   selective phase: for each target column t = 1..n-1, q^d layers sweep a
//     window of width delta across t's id lattice. The layer whose window
//     contains the id adds c_sel * (max - min over {t-1, t}) to row 0 of
//     column t, chaining t's id to the already-lifted id of t-1. c_sel = q^d.
//   all-max phase: n layers, each adding c_am * (id of successor column) to
//     row 0 of every column, c_am = 2 n^2 q^(nd+1). These mix every column's
//     id into every other, which separates ids across different inputs.
//
// verify_contextual_mapping enumerates every grid input exhaustively and
// checks, with exact arithmetic, that the resulting ids are distinct within
// each input and across all inputs, that the selective phase produces strictly
// increasing ids, and that each final id lands in its predicted dominance
// interval.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sattn/attention.hpp"
#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/rational.hpp"

namespace sattn {

using MatrixQ = Matrix<Rational>;
using IdVector = std::vector<Rational>;

struct VerifierConfig {
    std::size_t n = 2;
    std::size_t d = 1;
    Rational delta = Rational(1, 2);
    std::uint64_t max_inputs = 4096;  // enumeration budget
    std::size_t max_bits = 65536;     // scalar bit-length budget

    BigInt qinv() const { return denominator(delta); }

    void validate() const {
        if (n < 2) throw config_error("VerifierConfig: need n >= 2");
        if (d < 1) throw config_error("VerifierConfig: need d >= 1");
        if (numerator(delta) != 1 || denominator(delta) < 2)
            throw config_error("VerifierConfig: delta must be 1/q with integer q >= 2");
        if (delta > Rational(1, 2)) throw config_error("VerifierConfig: delta must be <= 1/2");
    }
};

/// Per-column constant offsets, identical in every row: n-1 for column 0,
/// i-1 for column i >= 1.
inline MatrixQ verifier_embedding(std::size_t n, std::size_t d) {
    if (n < 2 || d < 1) throw config_error("verifier_embedding: need n >= 2, d >= 1");
    MatrixQ e(d, n);
    for (std::size_t j = 0; j < n; ++j) {
        const Rational v = (j == 0) ? Rational(n - 1) : Rational(j - 1);
        for (std::size_t i = 0; i < d; ++i) e(i, j) = v;
    }
    return e;
}

/// u = (1, q, q^2, ..., q^(d-1)). Injective on grid columns: the dot product
/// reads the column's lattice coordinates as base-q digits.
inline IdVector id_dot(std::size_t d, const Rational& delta) {
    if (d < 1) throw config_error("id_dot: need d >= 1");
    const Rational q = 1 / delta;
    IdVector u(d);
    u[0] = 1;
    for (std::size_t i = 1; i < d; ++i) u[i] = u[i - 1] * q;
    return u;
}

inline Rational column_id(const MatrixQ& m, std::size_t col, const IdVector& u) {
    Rational acc = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) acc += u[i] * m(i, col);
    return acc;
}

inline IdVector all_column_ids(const MatrixQ& m, const IdVector& u) {
    IdVector ids(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) ids[j] = column_id(m, j, u);
    return ids;
}

/// Entrywise floor onto the delta lattice, then the embedding is added.
/// Input entries must lie in [0, 1). Doubles convert to rationals exactly
/// before flooring, so entries that sit on a lattice point stay there.
inline MatrixQ quantize_to_grid(const MatrixD& x, const VerifierConfig& cfg) {
    cfg.validate();
    if (x.rows() != cfg.d || x.cols() != cfg.n)
        throw config_error("quantize_to_grid: matrix must be d x n");
    const MatrixQ e = verifier_embedding(cfg.n, cfg.d);
    MatrixQ out(cfg.d, cfg.n);
    for (std::size_t i = 0; i < cfg.d; ++i)
        for (std::size_t j = 0; j < cfg.n; ++j) {
            const double v = x(i, j);
            if (!(v >= 0.0 && v < 1.0))
                throw config_error("quantize_to_grid: entry outside [0,1) at (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
            out(i, j) = floor_to_multiple(Rational(v), cfg.delta) + e(i, j);
        }
    return out;
}

/// The n stacked masked patterns whose two-element links cover the cycle:
/// pattern i gives query (i-1 mod n) the set {i-1 mod n, i}, query i its
/// singleton, and every other query the empty set (column untouched).
inline std::vector<AttentionPattern> pair_patterns(std::size_t n) {
    if (n < 2) throw config_error("pair_patterns: need n >= 2");
    std::vector<AttentionPattern> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        AttentionPattern& p = out[i];
        p.n = n;
        p.sets.resize(n);
        const std::size_t j = (i + n - 1) % n;
        p.sets[j] = {j, i};
        p.sets[i] = {i};
    }
    return out;
}

namespace detail {

inline std::pair<Rational, Rational> min_max_id(const MatrixQ& m, const std::vector<std::size_t>& set,
                                                const IdVector& u) {
    Rational lo = column_id(m, set[0], u), hi = lo;
    for (std::size_t t = 1; t < set.size(); ++t) {
        const Rational v = column_id(m, set[t], u);
        if (v < lo) lo = v;
        if (v > hi) hi = v;
    }
    return {lo, hi};
}

}  // namespace detail

/// One selective shift layer. For every column k with a non-empty set, if the
/// column's own id lies strictly inside (b_lo, b_hi), row 0 of that column
/// gains c * (max - min of ids over the set). Ids exactly on a window
/// boundary indicate a broken schedule and raise schedule_error.
inline MatrixQ selective_shift(const MatrixQ& m, const AttentionPattern& pattern, const Rational& c,
                               const Rational& b_lo, const Rational& b_hi, const IdVector& u) {
    if (pattern.sets.size() != m.cols()) throw config_error("selective_shift: pattern size mismatch");
    if (u.size() != m.rows()) throw config_error("selective_shift: id vector length mismatch");
    MatrixQ out = m;
    for (std::size_t k = 0; k < m.cols(); ++k) {
        const auto& set = pattern.sets[k];
        if (set.empty()) continue;
        for (std::size_t j : set)
            if (j >= m.cols()) throw config_error("selective_shift: pattern index out of range");
        const Rational own = column_id(m, k, u);
        if (own == b_lo || own == b_hi)
            throw schedule_error("selective_shift: column " + std::to_string(k) +
                                 " id sits exactly on window boundary " + to_string(own));
        if (own > b_lo && own < b_hi) {
            const auto [lo, hi] = detail::min_max_id(m, set, u);
            out(0, k) += c * (hi - lo);
        }
    }
    return out;
}

/// One all-max layer: row 0 of every column with a non-empty set gains
/// c * (max id over the set), unconditionally.
inline MatrixQ all_max_shift(const MatrixQ& m, const AttentionPattern& pattern, const Rational& c,
                             const IdVector& u) {
    if (pattern.sets.size() != m.cols()) throw config_error("all_max_shift: pattern size mismatch");
    if (u.size() != m.rows()) throw config_error("all_max_shift: id vector length mismatch");
    MatrixQ out = m;
    for (std::size_t k = 0; k < m.cols(); ++k) {
        const auto& set = pattern.sets[k];
        if (set.empty()) continue;
        for (std::size_t j : set)
            if (j >= m.cols()) throw config_error("all_max_shift: pattern index out of range");
        const auto [lo, hi] = detail::min_max_id(m, set, u);
        out(0, k) += c * hi;
    }
    return out;
}

struct ShiftLayer {
    bool selective = true;
    AttentionPattern pattern;
    Rational c;
    Rational b_lo, b_hi;    // selective only
    std::size_t target = 0;  // selective: which column this layer may shift
    std::string name;
};

struct ShiftSchedule {
    std::size_t n = 0, d = 0;
    Rational delta;
    Rational c_selective, c_allmax;
    std::size_t selective_count = 0, allmax_count = 0;
    std::vector<ShiftLayer> layers;
};

/// Builds the full layer sequence: (n-1) * q^d selective layers followed by
/// n all-max layers with the successor pattern.
inline ShiftSchedule build_schedule(const VerifierConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n, d = cfg.d;
    const Rational q = 1 / cfg.delta;
    const Rational c_sel = rational_pow(q, static_cast<unsigned>(d));
    const Rational c_am =
        2 * Rational(n) * Rational(n) * rational_pow(q, static_cast<unsigned>(n * d + 1));

    // Bit budget: final ids scale like c_am^n, everything else is lower order.
    const std::size_t est_bits = cfg.n * bit_length(c_am) + bit_length(Rational(n) * c_sel) + 64;
    if (est_bits > cfg.max_bits)
        throw budget_error("build_schedule: estimated scalar bit length " + std::to_string(est_bits) +
                           " exceeds budget " + std::to_string(cfg.max_bits));

    // Per-column id lattice: q^d points spaced delta, starting at the
    // embedded offset (t-1) * span where span = 1 + q + ... + q^(d-1).
    Rational span = 0;
    {
        Rational p = 1;
        for (std::size_t i = 0; i < d; ++i) {
            span += p;
            p *= q;
        }
    }
    BigInt lattice_points = 1;
    for (std::size_t i = 0; i < d; ++i) lattice_points *= cfg.qinv();

    ShiftSchedule sched;
    sched.n = n;
    sched.d = d;
    sched.delta = cfg.delta;
    sched.c_selective = c_sel;
    sched.c_allmax = c_am;
    const Rational half = cfg.delta / 2;
    for (std::size_t t = 1; t < n; ++t) {
        const Rational offset = Rational(t - 1) * span;
        Rational b = offset;
        for (BigInt j = 0; j < lattice_points; ++j, b += cfg.delta) {
            ShiftLayer layer;
            layer.selective = true;
            layer.target = t;
            layer.c = c_sel;
            layer.b_lo = b - half;
            layer.b_hi = b + half;
            layer.pattern.n = n;
            layer.pattern.sets.resize(n);
            layer.pattern.sets[t] = {t - 1, t};
            layer.pattern.sets[t - 1] = {t - 1};
            layer.name = "selective[target=" + std::to_string(t) + ",b=" + to_string(b) + "]";
            sched.layers.push_back(std::move(layer));
            ++sched.selective_count;
        }
    }
    for (std::size_t round = 0; round < n; ++round) {
        ShiftLayer layer;
        layer.selective = false;
        layer.c = c_am;
        layer.pattern.n = n;
        layer.pattern.sets.resize(n);
        for (std::size_t k = 0; k < n; ++k) layer.pattern.sets[k] = {(k + 1) % n};
        layer.name = "allmax[" + std::to_string(round) + "]";
        sched.layers.push_back(std::move(layer));
        ++sched.allmax_count;
    }
    return sched;
}

namespace detail {

struct MapTrace {
    IdVector post_selective;
    IdVector final_ids;
    bool ordering_ok = true;
    std::string failure;  // names the offending layer when a check fails
};

/// Runs the schedule and checks the selective-phase invariants: each target
/// column is shifted by exactly one of its layers, its id strictly exceeds the
/// predecessor's after its block, and the post-selective ids are strictly
/// increasing. Violations are recorded, not thrown.
inline MapTrace run_schedule(MatrixQ m, const ShiftSchedule& sched, const IdVector& u) {
    MapTrace trace;
    std::vector<std::size_t> shifts_seen(sched.n, 0);
    std::size_t layer_index = 0;
    auto record = [&trace](const std::string& msg) {
        trace.ordering_ok = false;
        if (trace.failure.empty()) trace.failure = msg;
    };
    for (const ShiftLayer& layer : sched.layers) {
        if (layer.selective) {
            const Rational before = column_id(m, layer.target, u);
            m = selective_shift(m, layer.pattern, layer.c, layer.b_lo, layer.b_hi, u);
            const Rational after = column_id(m, layer.target, u);
            if (after != before) {
                ++shifts_seen[layer.target];
                if (shifts_seen[layer.target] > 1)
                    record(layer.name + ": target shifted more than once");
                const Rational pred = column_id(m, layer.target - 1, u);
                if (!(after > pred))
                    record(layer.name + ": shifted id does not exceed predecessor id");
            }
            const bool last_selective = (layer_index + 1 == sched.selective_count);
            if (last_selective) {
                trace.post_selective = all_column_ids(m, u);
                for (std::size_t t = 1; t < sched.n; ++t) {
                    if (shifts_seen[t] != 1)
                        record("selective phase: column " + std::to_string(t) + " shifted " +
                               std::to_string(shifts_seen[t]) + " times, expected exactly once");
                    if (!(trace.post_selective[t] > trace.post_selective[t - 1]))
                        record("selective phase: ids not strictly increasing at column " +
                               std::to_string(t));
                }
            }
        } else {
            m = all_max_shift(m, layer.pattern, layer.c, u);
        }
        ++layer_index;
    }
    if (trace.post_selective.empty()) trace.post_selective = all_column_ids(m, u);
    trace.final_ids = all_column_ids(m, u);
    return trace;
}

}  // namespace detail

/// Public id map: applies the whole schedule to an embedded grid input and
/// returns the final column ids. Any intermediate invariant violation raises
/// schedule_error naming the layer.
inline IdVector contextual_map(const MatrixQ& m, const ShiftSchedule& sched, const IdVector& u) {
    if (m.cols() != sched.n) throw config_error("contextual_map: column count mismatch");
    detail::MapTrace trace = detail::run_schedule(m, sched, u);
    if (!trace.ordering_ok) throw schedule_error("contextual_map: " + trace.failure);
    return trace.final_ids;
}

struct CertificateReport {
    std::size_t n = 0, d = 0;
    std::string delta;
    bool skip_allmax = false;
    std::uint64_t inputs = 0;
    std::uint64_t ids = 0;
    bool rule1_pass = true;      // ids distinct within every input
    bool rule2_pass = true;      // ids distinct across inputs
    bool ordering_pass = true;   // selective phase invariants on every input
    bool dominance_pass = true;  // final ids inside predicted intervals
    bool dominance_checked = false;
    std::string min_gap_exact;
    double min_gap_approx = 0.0;
    std::vector<std::string> witnesses;
    std::uint64_t violation_count = 0;
    double wall_ms = 0.0;

    bool pass() const { return rule1_pass && rule2_pass && ordering_pass && dominance_pass; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config"] = {{"n", n}, {"d", d}, {"delta", delta}};
        j["skip_allmax"] = skip_allmax;
        j["inputs"] = inputs;
        j["ids"] = ids;
        j["checks"] = {{"rule1_distinct_within_input", rule1_pass},
                       {"rule2_distinct_across_inputs", rule2_pass},
                       {"post_selective_ordering", ordering_pass},
                       {"dominance_interval", dominance_checked ? nlohmann::json(dominance_pass)
                                                                : nlohmann::json("skipped")}};
        j["pass"] = pass();
        j["min_id_gap"] = {{"exact", min_gap_exact}, {"approx", min_gap_approx}};
        j["violations"] = violation_count;
        j["witnesses"] = witnesses;
        j["wall_ms"] = wall_ms;
        return j;
    }
};

namespace detail {

inline std::string grid_to_string(const MatrixQ& g) {
    std::ostringstream os;
    for (std::size_t j = 0; j < g.cols(); ++j) {
        os << (j ? " (" : "(");
        for (std::size_t i = 0; i < g.rows(); ++i) os << (i ? "," : "") << g(i, j).str();
        os << ")";
    }
    return os.str();
}

}  // namespace detail

/// Exhaustive certificate: enumerates every grid input, runs the schedule in
/// exact arithmetic, and checks both distinctness rules plus the structural
/// invariants. Enumeration size is q^(d*n); configs beyond max_inputs raise
/// budget_error.
inline CertificateReport verify_contextual_mapping(const VerifierConfig& cfg,
                                                   bool skip_allmax = false) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = cfg.n, d = cfg.d;
    const std::uint64_t q = cfg.qinv().convert_to<std::uint64_t>();

    // q^(d*n) with overflow guard against the enumeration budget.
    std::uint64_t total = 1;
    for (std::size_t i = 0; i < d * n; ++i) {
        if (total > cfg.max_inputs / q + 1) {
            total = cfg.max_inputs + 1;
            break;
        }
        total *= q;
    }
    if (total > cfg.max_inputs)
        throw budget_error("verify_contextual_mapping: grid enumeration needs " +
                           std::to_string(total) + " inputs, budget is " +
                           std::to_string(cfg.max_inputs));

    ShiftSchedule sched = build_schedule(cfg);
    if (skip_allmax) {
        sched.layers.resize(sched.selective_count);
        sched.allmax_count = 0;
    }
    const IdVector u = id_dot(d, cfg.delta);
    const MatrixQ e = verifier_embedding(n, d);
    const Rational c_am_pow = rational_pow(sched.c_allmax, static_cast<unsigned>(n));

    CertificateReport report;
    report.n = n;
    report.d = d;
    report.delta = to_string(cfg.delta);
    report.skip_allmax = skip_allmax;
    report.inputs = total;
    report.dominance_checked = !skip_allmax;

    auto add_witness = [&report](const std::string& w) {
        ++report.violation_count;
        if (report.witnesses.size() < 8) report.witnesses.push_back(w);
    };

    struct IdRecord {
        Rational id;
        std::uint64_t input;
        std::size_t col;
    };
    std::vector<IdRecord> records;
    records.reserve(total * n);
    std::vector<std::string> grids(total);

    for (std::uint64_t index = 0; index < total; ++index) {
        // Decode the input index as base-q digits, column-major.
        MatrixQ g(d, n);
        std::uint64_t rest = index;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < d; ++i) {
                g(i, j) = Rational(rest % q) * cfg.delta;
                rest /= q;
            }
        grids[index] = detail::grid_to_string(g);
        const MatrixQ m = add(g, e);

        const detail::MapTrace trace = detail::run_schedule(m, sched, u);
        if (!trace.ordering_ok) {
            report.ordering_pass = false;
            add_witness("input " + std::to_string(index) + " grid " + grids[index] + ": " +
                        trace.failure);
        }
        if (!skip_allmax) {
            for (std::size_t k = 0; k < n; ++k) {
                const Rational lo = c_am_pow * trace.post_selective[k];
                const Rational hi = c_am_pow * (trace.post_selective[k] + cfg.delta);
                if (!(trace.final_ids[k] >= lo && trace.final_ids[k] <= hi)) {
                    report.dominance_pass = false;
                    add_witness("input " + std::to_string(index) + " column " + std::to_string(k) +
                                ": final id " + to_string(trace.final_ids[k]) +
                                " outside dominance interval [" + to_string(lo) + ", " +
                                to_string(hi) + "]");
                }
            }
        }
        for (std::size_t k = 0; k < n; ++k)
            records.push_back({trace.final_ids[k], index, k});
    }

    report.ids = records.size();
    std::sort(records.begin(), records.end(),
              [](const IdRecord& a, const IdRecord& b) { return a.id < b.id; });
    bool have_gap = false;
    Rational min_gap = 0;
    for (std::size_t t = 1; t < records.size(); ++t) {
        const IdRecord& prev = records[t - 1];
        const IdRecord& cur = records[t];
        const Rational gap = cur.id - prev.id;
        if (gap == 0) {
            if (prev.input == cur.input) {
                report.rule1_pass = false;
                add_witness("input " + std::to_string(cur.input) + " grid " + grids[cur.input] +
                            ": columns " + std::to_string(prev.col) + " and " +
                            std::to_string(cur.col) + " share id " + to_string(cur.id));
            } else {
                report.rule2_pass = false;
                add_witness("inputs " + std::to_string(prev.input) + " grid " + grids[prev.input] +
                            " and " + std::to_string(cur.input) + " grid " + grids[cur.input] +
                            " share id " + to_string(cur.id) + " (columns " +
                            std::to_string(prev.col) + ", " + std::to_string(cur.col) + ")");
            }
        }
        if (!have_gap || gap < min_gap) {
            min_gap = gap;
            have_gap = true;
        }
    }
    if (have_gap) {
        report.min_gap_exact = to_string(min_gap);
        report.min_gap_approx = to_double(min_gap);
    }
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
    return report;
}

}  // namespace sattn
