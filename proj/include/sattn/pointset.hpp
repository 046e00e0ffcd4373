#pragma once

// Point cloud container, synthetic cloud generation, and the on-disk formats:
// .xyz text files (one point per line: x y z f1 ... fd) and a JSON dataset
// manifest listing per-class files and labels.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/rng.hpp"

namespace sattn {

/// A set of n points. Coordinates are 3 x n, features d x n with d >= 0;
/// columns are points. Feature count may be zero (coordinates only).
struct PointSet {
    MatrixD coords;    // 3 x n
    MatrixD features;  // d x n, d may be 0
    std::optional<int> label;

    std::size_t count() const { return coords.cols(); }
    std::size_t feature_dim() const { return features.rows(); }

    void validate() const {
        if (coords.rows() != 3) throw config_error("PointSet: coords must have 3 rows");
        if (coords.cols() < 2) throw config_error("PointSet: need at least 2 points");
        if (features.rows() > 0 && features.cols() != coords.cols())
            throw config_error("PointSet: feature column count does not match point count");
        if (!all_finite(coords) || !all_finite(features))
            throw config_error("PointSet: non-finite entry");
    }
};

enum class Shape { SphereSurface, CubeSurface, TwoClusterGaussian };

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::SphereSurface: return "sphere";
        case Shape::CubeSurface: return "cube";
        case Shape::TwoClusterGaussian: return "two_cluster";
    }
    return "?";
}

inline Shape shape_from_name(const std::string& name) {
    if (name == "sphere") return Shape::SphereSurface;
    if (name == "cube") return Shape::CubeSurface;
    if (name == "two_cluster") return Shape::TwoClusterGaussian;
    throw config_error("unknown shape: " + name + " (expected sphere|cube|two_cluster)");
}

/// Recipe for a labeled synthetic dataset. One class per listed shape.
/// Canonical sizes: unit sphere; cube surface [-1,1]^3; two Gaussian clusters
/// at (+-0.75, 0, 0) with spread 0.25. Gaussian noise with noise_sigma is
/// added to coordinates after the surface sample. Features are the surface
/// normal of the noiseless point (constant (0,0,1) for the cluster class).
struct SyntheticSpec {
    std::vector<Shape> class_shapes;
    std::size_t points_per_cloud = 256;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void sample_point(Shape shape, Rng& rng, double* xyz, double* normal) {
    switch (shape) {
        case Shape::SphereSurface: {
            double v[3], norm2;
            do {
                for (double& c : v) c = rng.gaussian();
                norm2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            } while (norm2 < 1e-24);
            const double inv = 1.0 / std::sqrt(norm2);
            for (int i = 0; i < 3; ++i) xyz[i] = normal[i] = v[i] * inv;
            break;
        }
        case Shape::CubeSurface: {
            const auto face = rng.uniform_index(6);
            const std::size_t axis = face / 2;
            const double sign = (face % 2 == 0) ? 1.0 : -1.0;
            const double u = rng.next_double() * 2.0 - 1.0;
            const double v = rng.next_double() * 2.0 - 1.0;
            double* uv = xyz;
            for (std::size_t i = 0, k = 0; i < 3; ++i) {
                if (i == axis) continue;
                uv[i] = (k++ == 0) ? u : v;
            }
            xyz[axis] = sign;
            normal[0] = normal[1] = normal[2] = 0.0;
            normal[axis] = sign;
            break;
        }
        case Shape::TwoClusterGaussian: {
            const double cx = (rng.uniform_index(2) == 0) ? -0.75 : 0.75;
            xyz[0] = cx + rng.gaussian() * 0.25;
            xyz[1] = rng.gaussian() * 0.25;
            xyz[2] = rng.gaussian() * 0.25;
            normal[0] = normal[1] = 0.0;
            normal[2] = 1.0;
            break;
        }
    }
}

}  // namespace detail

/// One cloud of the given shape. Deterministic in (spec.seed, class_index,
/// cloud_index): reruns produce bit-identical clouds.
inline PointSet generate_cloud(const SyntheticSpec& spec, std::size_t class_index,
                               std::size_t cloud_index) {
    if (class_index >= spec.class_shapes.size())
        throw config_error("generate_cloud: class index out of range");
    if (spec.points_per_cloud < 2) throw config_error("generate_cloud: need at least 2 points");
    Rng rng(derive_seed(spec.seed, class_index + 1, cloud_index + 1));
    const Shape shape = spec.class_shapes[class_index];
    const std::size_t n = spec.points_per_cloud;
    PointSet ps;
    ps.coords = MatrixD(3, n);
    ps.features = MatrixD(3, n);
    for (std::size_t j = 0; j < n; ++j) {
        double xyz[3], normal[3];
        detail::sample_point(shape, rng, xyz, normal);
        for (int i = 0; i < 3; ++i) {
            ps.coords(i, j) = xyz[i] + rng.gaussian() * spec.noise_sigma;
            ps.features(i, j) = normal[i];
        }
    }
    ps.label = static_cast<int>(class_index);
    return ps;
}

/// clouds_per_class labeled clouds for every class, class-major order.
inline std::vector<PointSet> generate_synthetic(const SyntheticSpec& spec,
                                                std::size_t clouds_per_class) {
    if (spec.class_shapes.empty()) throw config_error("generate_synthetic: no classes");
    std::vector<PointSet> out;
    out.reserve(spec.class_shapes.size() * clouds_per_class);
    for (std::size_t c = 0; c < spec.class_shapes.size(); ++c)
        for (std::size_t k = 0; k < clouds_per_class; ++k) out.push_back(generate_cloud(spec, c, k));
    return out;
}

/// Writes one point per line, 17 significant digits (doubles round-trip exactly).
inline void write_xyz(std::ostream& os, const PointSet& ps) {
    char buf[32];
    for (std::size_t j = 0; j < ps.count(); ++j) {
        for (std::size_t i = 0; i < 3; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", ps.coords(i, j));
            os << (i ? " " : "") << buf;
        }
        for (std::size_t i = 0; i < ps.feature_dim(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", ps.features(i, j));
            os << " " << buf;
        }
        os << "\n";
    }
}

inline void write_xyz(const std::string& path, const PointSet& ps) {
    std::ofstream f(path);
    if (!f) throw parse_error("cannot open for writing: " + path);
    write_xyz(f, ps);
    if (!f.good()) throw parse_error("write failed: " + path);
}

/// Parses an .xyz stream. Every data line must carry the same field count,
/// at least 3. Blank lines are ignored. Errors carry 1-based line numbers.
inline PointSet read_xyz(std::istream& is, const std::string& name = "<stream>") {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    std::size_t fields = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::vector<double> vals;
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(tok, &used);
            } catch (const std::exception&) {
                throw parse_error(name + ":" + std::to_string(lineno) + ": not a number: " + tok);
            }
            if (used != tok.size())
                throw parse_error(name + ":" + std::to_string(lineno) + ": not a number: " + tok);
            vals.push_back(v);
        }
        if (vals.empty()) continue;
        if (vals.size() < 3)
            throw parse_error(name + ":" + std::to_string(lineno) + ": expected at least 3 fields, got " +
                              std::to_string(vals.size()));
        if (fields == 0) fields = vals.size();
        if (vals.size() != fields)
            throw parse_error(name + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(fields) + " fields, got " + std::to_string(vals.size()));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw parse_error(name + ": no points");
    const std::size_t n = rows.size(), d = fields - 3;
    PointSet ps;
    ps.coords = MatrixD(3, n);
    ps.features = MatrixD(d, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < 3; ++i) ps.coords(i, j) = rows[j][i];
        for (std::size_t i = 0; i < d; ++i) ps.features(i, j) = rows[j][3 + i];
    }
    return ps;
}

inline PointSet read_xyz_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw parse_error("cannot open: " + path);
    return read_xyz(f, path);
}

/// One class entry of a dataset manifest.
struct ManifestClass {
    int label = 0;
    std::string name;
    std::vector<std::string> files;  // relative to the manifest's directory
};

inline void write_manifest(const std::string& path, const std::vector<ManifestClass>& classes) {
    nlohmann::json j;
    j["version"] = 1;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : classes)
        j["classes"].push_back({{"label", c.label}, {"name", c.name}, {"files", c.files}});
    std::ofstream f(path);
    if (!f) throw parse_error("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

inline std::vector<ManifestClass> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw parse_error("cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": invalid JSON: " + e.what());
    }
    if (!j.contains("classes") || !j["classes"].is_array())
        throw parse_error(path + ": missing \"classes\" array");
    std::vector<ManifestClass> out;
    for (const auto& jc : j["classes"]) {
        ManifestClass c;
        c.label = jc.at("label").get<int>();
        c.name = jc.value("name", std::string{});
        for (const auto& fp : jc.at("files")) c.files.push_back(fp.get<std::string>());
        out.push_back(std::move(c));
    }
    return out;
}

/// Reads every file referenced by a manifest, attaching labels.
/// Relative file paths resolve against the manifest's directory.
inline std::vector<PointSet> load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<PointSet> out;
    for (const auto& c : read_manifest(manifest_path)) {
        for (const auto& file : c.files) {
            fs::path p(file);
            if (p.is_relative()) p = base / p;
            PointSet ps = read_xyz_file(p.string());
            ps.label = c.label;
            ps.validate();
            out.push_back(std::move(ps));
        }
    }
    if (out.empty()) throw parse_error(manifest_path + ": manifest lists no files");
    return out;
}

}  // namespace sattn
