#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rpnet/geometry.hpp"
#include "rpnet/nn.hpp"
#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

namespace rpnet {

// ---------------------------------------------------------------------------
// Toy datasets: unit-scale shapes sampled on their surfaces. Classification
// labels whole clouds; segmentation scenes place a shape on a ground plane
// and label every point.
// ---------------------------------------------------------------------------

enum class ShapeKind { sphere, cube, cylinder, torus, plane };

inline ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "sphere") return ShapeKind::sphere;
    if (s == "cube") return ShapeKind::cube;
    if (s == "cylinder") return ShapeKind::cylinder;
    if (s == "torus") return ShapeKind::torus;
    if (s == "plane") return ShapeKind::plane;
    throw ConfigError("unknown shape kind '" + s + "'");
}

inline const char* to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::cube: return "cube";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::torus: return "torus";
        case ShapeKind::plane: return "plane";
    }
    return "?";
}

enum class DataTask { classify, segment };

struct ToyDatasetSpec {
    DataTask task = DataTask::classify;
    std::vector<ShapeKind> classes{ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder};
    std::size_t points_per_cloud = 256;
    std::size_t clouds_per_class = 100;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (points_per_cloud < 64) throw ConfigError("points_per_cloud must be >= 64");
        if (classes.empty()) throw ConfigError("toy dataset needs at least one class");
        if (clouds_per_class < 1) throw ConfigError("clouds_per_class must be >= 1");
    }
};

// Uniform point on the surface of each unit-scale shape.
inline void sample_surface_point(ShapeKind kind, Rng& rng, double* xyz) {
    switch (kind) {
        case ShapeKind::sphere: {
            // Marsaglia (1972) rejection sampling
            double x1, x2, rsq;
            do {
                x1 = rng.uniform(-1.0, 1.0);
                x2 = rng.uniform(-1.0, 1.0);
                rsq = x1 * x1 + x2 * x2;
            } while (rsq >= 1.0);
            const double root = std::sqrt(1.0 - rsq);
            xyz[0] = 2.0 * x1 * root;
            xyz[1] = 2.0 * x2 * root;
            xyz[2] = 1.0 - 2.0 * rsq;
            break;
        }
        case ShapeKind::cube: {
            // pick a face, then a uniform point on it
            const std::size_t face = static_cast<std::size_t>(rng.uniform_index(6));
            const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
            const double s = (face % 2 == 0) ? 1.0 : -1.0;
            switch (face / 2) {
                case 0: xyz[0] = s; xyz[1] = u; xyz[2] = v; break;
                case 1: xyz[0] = u; xyz[1] = s; xyz[2] = v; break;
                default: xyz[0] = u; xyz[1] = v; xyz[2] = s; break;
            }
            break;
        }
        case ShapeKind::cylinder: {
            // lateral surface and both caps, area-weighted (r=1, h=2)
            const double lateral = 2.0 * 3.141592653589793 * 2.0;
            const double caps = 2.0 * 3.141592653589793;
            if (rng.uniform() < lateral / (lateral + caps)) {
                const double a = rng.uniform(0.0, 2.0 * 3.141592653589793);
                xyz[0] = std::cos(a);
                xyz[1] = rng.uniform(-1.0, 1.0);
                xyz[2] = std::sin(a);
            } else {
                const double a = rng.uniform(0.0, 2.0 * 3.141592653589793);
                const double r = std::sqrt(rng.uniform());
                xyz[0] = r * std::cos(a);
                xyz[1] = rng.uniform() < 0.5 ? 1.0 : -1.0;
                xyz[2] = r * std::sin(a);
            }
            break;
        }
        case ShapeKind::torus: {
            // major radius 0.7, minor 0.3; rejection on the minor angle keeps
            // the surface density uniform
            const double major = 0.7, minor = 0.3;
            const double u = rng.uniform(0.0, 2.0 * 3.141592653589793);
            double v;
            do {
                v = rng.uniform(0.0, 2.0 * 3.141592653589793);
            } while (rng.uniform() > (major + minor * std::cos(v)) / (major + minor));
            xyz[0] = (major + minor * std::cos(v)) * std::cos(u);
            xyz[1] = minor * std::sin(v);
            xyz[2] = (major + minor * std::cos(v)) * std::sin(u);
            break;
        }
        case ShapeKind::plane: {
            xyz[0] = rng.uniform(-1.0, 1.0);
            xyz[1] = 0.0;
            xyz[2] = rng.uniform(-1.0, 1.0);
            break;
        }
    }
}

inline PointCloud make_shape_cloud(ShapeKind kind, std::size_t n, Rng& rng) {
    PointCloud cloud;
    cloud.coords = Tensor({n, 3});
    for (std::size_t i = 0; i < n; ++i) sample_surface_point(kind, rng, cloud.coords.data() + i * 3);
    return cloud;
}

struct Dataset {
    std::vector<PointCloud> clouds;
    std::vector<int> cloud_labels;  // classification; empty for segmentation
    std::size_t num_classes = 0;
};

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

// Segmentation scene: one shape resting on a ground plane, per-point labels
// 0 = plane, 1.. = shape class.
inline PointCloud make_scene_cloud(ShapeKind kind, std::size_t n, Rng& rng) {
    PointCloud cloud;
    cloud.coords = Tensor({n, 3});
    cloud.labels.resize(n);
    const std::size_t shape_points = n / 2;
    const double cx = rng.uniform(-0.5, 0.5);
    const double cz = rng.uniform(-0.5, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
        double* p = cloud.coords.data() + i * 3;
        if (i < shape_points) {
            sample_surface_point(kind, rng, p);
            // rest the unit shape on the plane, shifted inside the scene
            p[0] = p[0] * 0.5 + cx;
            p[1] = p[1] * 0.5 + 0.55;
            p[2] = p[2] * 0.5 + cz;
            cloud.labels[i] = 1;
        } else {
            p[0] = rng.uniform(-1.5, 1.5);
            p[1] = 0.0;
            p[2] = rng.uniform(-1.5, 1.5);
            cloud.labels[i] = 0;
        }
    }
    return cloud;
}

// Deterministic generation: each cloud derives its own stream from
// (seed, class, instance), then an 80/20 split by seeded shuffle.
inline TrainTestSplit generate_toy(const ToyDatasetSpec& spec) {
    spec.validate();
    Rng root(spec.rng_seed);
    Dataset all;
    all.num_classes = spec.task == DataTask::classify ? spec.classes.size() : 2;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        Rng class_rng = root.split("class").split(c);
        for (std::size_t i = 0; i < spec.clouds_per_class; ++i) {
            Rng cloud_rng = class_rng.split(i);
            if (spec.task == DataTask::classify) {
                all.clouds.push_back(make_shape_cloud(spec.classes[c], spec.points_per_cloud, cloud_rng));
                all.cloud_labels.push_back(static_cast<int>(c));
            } else {
                all.clouds.push_back(make_scene_cloud(spec.classes[c], spec.points_per_cloud, cloud_rng));
            }
        }
    }

    std::vector<std::size_t> order(all.clouds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = root.split("split");
    shuffle_rng.shuffle(order);

    TrainTestSplit split;
    split.train.num_classes = split.test.num_classes = all.num_classes;
    const std::size_t train_count = (order.size() * 8) / 10;
    for (std::size_t r = 0; r < order.size(); ++r) {
        Dataset& dst = r < train_count ? split.train : split.test;
        dst.clouds.push_back(all.clouds[order[r]]);
        if (spec.task == DataTask::classify) dst.cloud_labels.push_back(all.cloud_labels[order[r]]);
    }
    return split;
}

// ---------------------------------------------------------------------------
// Training augmentation: uniform scale in [0.8, 1.25], per-axis shift in
// [-0.1, 0.1], then point dropout with a ratio drawn from [0, 0.875].
// Dropped points are replaced by the first surviving point so N is fixed.
// ---------------------------------------------------------------------------

inline PointCloud augment(const PointCloud& cloud, Rng& rng) {
    PointCloud out = cloud;
    const std::size_t n = cloud.n_points();
    const double s = rng.uniform(0.8, 1.25);
    double shift[3];
    for (double& d : shift) d = rng.uniform(-0.1, 0.1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < 3; ++d)
            out.coords.at(i, d) = cloud.coords.at(i, d) * s + shift[d];

    const double ratio = rng.uniform(0.0, 0.875);
    std::vector<bool> dropped(n, false);
    std::size_t first_kept = n;
    for (std::size_t i = 0; i < n; ++i) {
        dropped[i] = rng.uniform() < ratio;
        if (!dropped[i] && first_kept == n) first_kept = i;
    }
    if (first_kept == n) first_kept = 0, dropped[0] = false;  // keep at least one
    for (std::size_t i = 0; i < n; ++i) {
        if (!dropped[i]) continue;
        for (std::size_t d = 0; d < 3; ++d) out.coords.at(i, d) = out.coords.at(first_kept, d);
        if (out.has_labels()) out.labels[i] = out.labels[first_kept];
        if (out.has_feats())
            for (std::size_t d = 0; d < out.feats.extent(1); ++d)
                out.feats.at(i, d) = out.feats.at(first_kept, d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rigid and order perturbations for robustness studies.
// ---------------------------------------------------------------------------

enum class PerturbKind { permute, translate, rotate_y, rescale, jitter_noise, point_dropout };

struct PerturbationSpec {
    PerturbKind kind = PerturbKind::permute;
    double magnitude = 0.0;  // degrees for rotate_y, offset for translate, factor for rescale
    std::uint64_t seed = 0;  // permute order
};

// out[i] = cloud[perm[i]]; features and labels move with their points.
inline PointCloud permute_points(const PointCloud& cloud, const std::vector<std::size_t>& perm) {
    const std::size_t n = cloud.n_points();
    if (perm.size() != n) throw ShapeError("permutation length mismatch");
    PointCloud out = cloud;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = perm[i];
        for (std::size_t d = 0; d < 3; ++d) out.coords.at(i, d) = cloud.coords.at(src, d);
        if (cloud.has_labels()) out.labels[i] = cloud.labels[src];
        if (cloud.has_feats())
            for (std::size_t d = 0; d < cloud.feats.extent(1); ++d)
                out.feats.at(i, d) = cloud.feats.at(src, d);
    }
    return out;
}

// Clockwise rotation about +Y: (x,y,z) -> (x cos + z sin, y, -x sin + z cos).
inline void rotate_y_point(double theta_rad, double& x, double& y, double& z) {
    const double c = std::cos(theta_rad), s = std::sin(theta_rad);
    const double nx = x * c + z * s;
    const double nz = -x * s + z * c;
    x = nx;
    z = nz;
    (void)y;
}

inline PointCloud apply_rigid(const PointCloud& cloud, const PerturbationSpec& p) {
    PointCloud out = cloud;
    const std::size_t n = cloud.n_points();
    switch (p.kind) {
        case PerturbKind::translate:
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t d = 0; d < 3; ++d) out.coords.at(i, d) += p.magnitude;
            break;
        case PerturbKind::rotate_y: {
            const double theta = p.magnitude * 3.141592653589793 / 180.0;
            for (std::size_t i = 0; i < n; ++i) {
                double x = out.coords.at(i, 0), y = out.coords.at(i, 1), z = out.coords.at(i, 2);
                rotate_y_point(theta, x, y, z);
                out.coords.at(i, 0) = x;
                out.coords.at(i, 1) = y;
                out.coords.at(i, 2) = z;
            }
            break;
        }
        case PerturbKind::rescale:
            for (std::size_t i = 0; i < n * 3; ++i) out.coords[i] *= p.magnitude;
            break;
        case PerturbKind::permute: {
            std::vector<std::size_t> perm(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            Rng rng(p.seed);
            rng.shuffle(perm);
            out = permute_points(cloud, perm);
            break;
        }
        default:
            throw ConfigError("apply_rigid handles permute/translate/rotate_y/rescale only");
    }
    return out;
}

// Replace a fraction of points with Gaussian-jittered copies.
inline PointCloud add_noise(const PointCloud& cloud, double sigma, double fraction, Rng& rng) {
    if (sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
    if (fraction < 0.0 || fraction > 1.0) throw ConfigError("noise fraction must be in [0,1]");
    PointCloud out = cloud;
    if (sigma == 0.0 || fraction == 0.0) return out;
    const std::size_t n = cloud.n_points();
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() >= fraction) continue;
        for (std::size_t d = 0; d < 3; ++d) out.coords.at(i, d) += sigma * rng.normal();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Point cloud file I/O.
// xyz text: one point per line, 3 coords, optional feature columns, optional
// trailing integer label. Binary: magic "RPCD", version u32, N u64, C u64,
// has_labels u8, then f64 coords, f64 features, i32 labels (little-endian).
// ---------------------------------------------------------------------------

inline constexpr char kCloudMagic[4] = {'R', 'P', 'C', 'D'};
inline constexpr std::uint32_t kCloudVersion = 1;

enum class CloudFormat { xyz_text, bin };

inline void io_write(const std::string& path, const PointCloud& cloud, CloudFormat format) {
    const std::size_t n = cloud.n_points();
    const std::size_t c = cloud.has_feats() ? cloud.feats.extent(1) : 0;
    if (format == CloudFormat::xyz_text) {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + path);
        char buf[64];
        for (std::size_t i = 0; i < n; ++i) {
            std::string line;
            for (std::size_t d = 0; d < 3; ++d) {
                std::snprintf(buf, sizeof buf, "%.17g", cloud.coords.at(i, d));
                line += buf;
                line += d + 1 < 3 || c || cloud.has_labels() ? " " : "";
            }
            for (std::size_t d = 0; d < c; ++d) {
                std::snprintf(buf, sizeof buf, "%.17g", cloud.feats.at(i, d));
                line += buf;
                if (d + 1 < c || cloud.has_labels()) line += " ";
            }
            if (cloud.has_labels()) line += std::to_string(cloud.labels[i]);
            os << line << "\n";
        }
        if (!os) throw IoError("write failure: " + path);
        return;
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kCloudMagic, 4);
    detail::write_u32(os, kCloudVersion);
    detail::write_u64(os, n);
    detail::write_u64(os, c);
    os.put(cloud.has_labels() ? '\1' : '\0');
    for (std::size_t i = 0; i < n * 3; ++i) detail::write_f64(os, cloud.coords[i]);
    for (std::size_t i = 0; i < n * c; ++i) detail::write_f64(os, cloud.feats[i]);
    if (cloud.has_labels())
        for (std::size_t i = 0; i < n; ++i) detail::write_u32(os, static_cast<std::uint32_t>(cloud.labels[i]));
    if (!os) throw IoError("write failure: " + path);
}

inline PointCloud io_read(const std::string& path, CloudFormat format, bool text_has_labels = false) {
    if (format == CloudFormat::bin) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, kCloudMagic, 4) != 0)
            throw IoError("bad point-cloud magic in " + path);
        const std::uint32_t version = detail::read_u32(is);
        if (version != kCloudVersion) throw IoError("unsupported point-cloud version");
        const std::uint64_t n = detail::read_u64(is);
        const std::uint64_t c = detail::read_u64(is);
        const int has_labels = is.get();
        if (n == 0) throw ParseError("empty point cloud in " + path);
        PointCloud cloud;
        cloud.coords = Tensor({static_cast<std::size_t>(n), 3});
        for (std::size_t i = 0; i < n * 3; ++i) cloud.coords[i] = detail::read_f64(is);
        if (c) {
            cloud.feats = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(c)});
            for (std::size_t i = 0; i < n * c; ++i) cloud.feats[i] = detail::read_f64(is);
        }
        if (has_labels == 1) {
            cloud.labels.resize(n);
            for (std::size_t i = 0; i < n; ++i)
                cloud.labels[i] = static_cast<int>(detail::read_u32(is));
        }
        return cloud;
    }

    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<double> coords;
    std::vector<double> feats;
    std::vector<int> labels;
    std::size_t feat_cols = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (!ls.eof())
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed value");
        const std::size_t label_cols = text_has_labels ? 1 : 0;
        if (vals.size() < 3 + label_cols)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected at least " +
                             std::to_string(3 + label_cols) + " columns, got " +
                             std::to_string(vals.size()));
        const std::size_t fc = vals.size() - 3 - label_cols;
        if (coords.empty()) {
            feat_cols = fc;
        } else if (fc != feat_cols) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": inconsistent column count");
        }
        coords.insert(coords.end(), vals.begin(), vals.begin() + 3);
        feats.insert(feats.end(), vals.begin() + 3, vals.begin() + 3 + fc);
        if (text_has_labels) {
            const double lv = vals.back();
            if (lv != std::floor(lv))
                throw ParseError(path + ":" + std::to_string(line_no) + ": label is not an integer");
            labels.push_back(static_cast<int>(lv));
        }
    }
    if (coords.empty()) throw ParseError(path + ": no points");
    const std::size_t n = coords.size() / 3;
    PointCloud cloud;
    cloud.coords = Tensor({n, 3}, std::move(coords));
    if (feat_cols) cloud.feats = Tensor({n, feat_cols}, std::move(feats));
    cloud.labels = std::move(labels);
    return cloud;
}

}  // namespace rpnet
