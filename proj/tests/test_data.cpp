#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "rpnet/data.hpp"
#include "rpnet/gradcheck.hpp"

using namespace rpnet;

namespace {

bool clouds_bit_equal(const PointCloud& a, const PointCloud& b) {
    if (!a.coords.same_shape(b.coords)) return false;
    for (std::size_t i = 0; i < a.coords.size(); ++i)
        if (a.coords[i] != b.coords[i]) return false;
    if (a.labels != b.labels) return false;
    if (a.has_feats() != b.has_feats()) return false;
    if (a.has_feats())
        for (std::size_t i = 0; i < a.feats.size(); ++i)
            if (a.feats[i] != b.feats[i]) return false;
    return true;
}

double max_pairwise_dist_change(const Tensor& a, const Tensor& b, double factor) {
    double worst = 0.0;
    const std::size_t n = a.extent(0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double da = 0.0, db = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double xa = a.at(i, d) - a.at(j, d);
                const double xb = b.at(i, d) - b.at(j, d);
                da += xa * xa;
                db += xb * xb;
            }
            worst = std::max(worst, std::abs(std::sqrt(db) - factor * std::sqrt(da)));
        }
    return worst;
}

}  // namespace

// ------------------------------- generation ---------------------------------

TEST(ToyData, SpherePointsLieOnUnitSurface) {
    Rng rng(1);
    PointCloud cloud = make_shape_cloud(ShapeKind::sphere, 256, rng);
    for (std::size_t i = 0; i < 256; ++i) {
        double norm = 0.0;
        for (std::size_t d = 0; d < 3; ++d) norm += cloud.coords.at(i, d) * cloud.coords.at(i, d);
        EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
    }
}

TEST(ToyData, GenerationIsBitReproducible) {
    ToyDatasetSpec spec;
    spec.points_per_cloud = 64;
    spec.clouds_per_class = 4;
    spec.rng_seed = 17;
    TrainTestSplit a = generate_toy(spec);
    TrainTestSplit b = generate_toy(spec);
    ASSERT_EQ(a.train.clouds.size(), b.train.clouds.size());
    for (std::size_t i = 0; i < a.train.clouds.size(); ++i)
        EXPECT_TRUE(clouds_bit_equal(a.train.clouds[i], b.train.clouds[i]));
    EXPECT_EQ(a.train.cloud_labels, b.train.cloud_labels);
}

TEST(ToyData, SplitIsEightyTwenty) {
    ToyDatasetSpec spec;
    spec.points_per_cloud = 64;
    spec.clouds_per_class = 10;
    TrainTestSplit split = generate_toy(spec);
    EXPECT_EQ(split.train.clouds.size(), 24u);  // 30 clouds total
    EXPECT_EQ(split.test.clouds.size(), 6u);
}

TEST(ToyData, SegmentScenesCarryBothClasses) {
    ToyDatasetSpec spec;
    spec.task = DataTask::segment;
    spec.classes = {ShapeKind::sphere};
    spec.points_per_cloud = 128;
    spec.clouds_per_class = 3;
    TrainTestSplit split = generate_toy(spec);
    for (const PointCloud& cloud : split.train.clouds) {
        std::set<int> seen(cloud.labels.begin(), cloud.labels.end());
        EXPECT_GE(seen.size(), 2u);
    }
    EXPECT_EQ(split.train.num_classes, 2u);
}

TEST(ToyData, UnknownShapeNameRejected) {
    EXPECT_THROW(shape_kind_from_string("icosahedron"), ConfigError);
}

TEST(ToyData, TooFewPointsRejected) {
    ToyDatasetSpec spec;
    spec.points_per_cloud = 32;
    EXPECT_THROW(generate_toy(spec), ConfigError);
}

TEST(ToyData, AllShapeKindsSampleFinite) {
    Rng rng(2);
    for (ShapeKind kind : {ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder,
                           ShapeKind::torus, ShapeKind::plane}) {
        PointCloud cloud = make_shape_cloud(kind, 128, rng);
        EXPECT_TRUE(cloud.coords.all_finite()) << to_string(kind);
    }
}

// ------------------------------ augmentation --------------------------------

TEST(Augment, KeepsPointCountAndStaysFinite) {
    Rng gen(3);
    PointCloud cloud = make_shape_cloud(ShapeKind::cube, 128, gen);
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng = Rng(100).split(trial);
        PointCloud out = augment(cloud, rng);
        EXPECT_EQ(out.n_points(), 128u);
        EXPECT_TRUE(out.coords.all_finite());
    }
}

TEST(Augment, PureScaleMultipliesAllPairwiseDistances) {
    Rng gen(4);
    PointCloud cloud = make_shape_cloud(ShapeKind::sphere, 64, gen);
    // scale by hand with the same formula the augmenter uses
    PointCloud scaled = cloud;
    for (std::size_t i = 0; i < scaled.coords.size(); ++i) scaled.coords[i] *= 0.8;
    EXPECT_LT(max_pairwise_dist_change(cloud.coords, scaled.coords, 0.8), 1e-12);
}

TEST(Augment, DropoutReplacementKeepsLabelsAligned) {
    Rng gen(5);
    PointCloud cloud = make_scene_cloud(ShapeKind::sphere, 128, gen);
    Rng rng(6);
    PointCloud out = augment(cloud, rng);
    ASSERT_EQ(out.labels.size(), 128u);
    // replaced points must carry the replacement's label: every (coords,label)
    // pair must appear in the augmented cloud consistently
    for (std::size_t i = 0; i < 128; ++i)
        for (std::size_t j = i + 1; j < 128; ++j) {
            bool same = true;
            for (std::size_t d = 0; d < 3; ++d)
                same = same && out.coords.at(i, d) == out.coords.at(j, d);
            if (same) EXPECT_EQ(out.labels[i], out.labels[j]);
        }
}

// ----------------------------- rigid transforms ------------------------------

TEST(Rigid, RotateNinetyDegreesHandInstance) {
    PointCloud cloud;
    cloud.coords = Tensor::matrix({{1.0, 0.0, 0.0}});
    PerturbationSpec p;
    p.kind = PerturbKind::rotate_y;
    p.magnitude = 90.0;
    PointCloud out = apply_rigid(cloud, p);
    EXPECT_NEAR(out.coords.at(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(out.coords.at(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(out.coords.at(0, 2), -1.0, 1e-12);
}

TEST(Rigid, TransformsPreservePairwiseDistances) {
    Rng gen(7);
    PointCloud cloud = make_shape_cloud(ShapeKind::torus, 64, gen);
    for (auto [kind, mag] : std::vector<std::pair<PerturbKind, double>>{
             {PerturbKind::rotate_y, 37.0}, {PerturbKind::translate, 0.2}}) {
        PerturbationSpec p;
        p.kind = kind;
        p.magnitude = mag;
        PointCloud out = apply_rigid(cloud, p);
        EXPECT_LT(max_pairwise_dist_change(cloud.coords, out.coords, 1.0), 1e-12);
    }
}

TEST(Rigid, FullTurnReturnsToStart) {
    Rng gen(8);
    PointCloud cloud = make_shape_cloud(ShapeKind::cylinder, 64, gen);
    PerturbationSpec p;
    p.kind = PerturbKind::rotate_y;
    p.magnitude = 360.0;
    PointCloud out = apply_rigid(cloud, p);
    EXPECT_LT(max_abs_diff(cloud.coords, out.coords), 1e-9);
}

TEST(Rigid, PermutationMovesLabelsWithPoints) {
    Rng gen(9);
    PointCloud cloud = make_scene_cloud(ShapeKind::cube, 128, gen);
    PerturbationSpec p;
    p.kind = PerturbKind::permute;
    p.seed = 11;
    PointCloud out = apply_rigid(cloud, p);
    // every original (point, label) pair must exist in the output
    for (std::size_t i = 0; i < 128; ++i) {
        bool found = false;
        for (std::size_t j = 0; j < 128 && !found; ++j) {
            bool same = true;
            for (std::size_t d = 0; d < 3; ++d)
                same = same && cloud.coords.at(i, d) == out.coords.at(j, d);
            if (same && cloud.labels[i] == out.labels[j]) found = true;
        }
        EXPECT_TRUE(found) << "point " << i;
    }
}

// --------------------------------- noise -------------------------------------

TEST(Noise, ZeroSigmaIsIdentity) {
    Rng gen(10);
    PointCloud cloud = make_shape_cloud(ShapeKind::sphere, 64, gen);
    Rng rng(1);
    PointCloud out = add_noise(cloud, 0.0, 0.5, rng);
    EXPECT_TRUE(clouds_bit_equal(cloud, out));
}

TEST(Noise, ZeroFractionIsIdentity) {
    Rng gen(11);
    PointCloud cloud = make_shape_cloud(ShapeKind::sphere, 64, gen);
    Rng rng(2);
    PointCloud out = add_noise(cloud, 0.1, 0.0, rng);
    EXPECT_TRUE(clouds_bit_equal(cloud, out));
}

TEST(Noise, EmpiricalSigmaWithinFivePercent) {
    PointCloud cloud;
    cloud.coords = Tensor::zeros({100000, 3});
    Rng rng(3);
    const double sigma = 0.05;
    PointCloud out = add_noise(cloud, sigma, 1.0, rng);
    for (std::size_t d = 0; d < 3; ++d) {
        double sq = 0.0;
        for (std::size_t i = 0; i < 100000; ++i) sq += out.coords.at(i, d) * out.coords.at(i, d);
        const double est = std::sqrt(sq / 100000.0);
        EXPECT_NEAR(est, sigma, 0.05 * sigma);
    }
}

// ---------------------------------- io ---------------------------------------

TEST(Io, BinaryRoundTripIsBitExact) {
    Rng gen(12);
    PointCloud cloud = make_scene_cloud(ShapeKind::sphere, 128, gen);
    cloud.feats = random_tensor(gen, {128, 4});
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_test.rpcd";
    io_write(path, cloud, CloudFormat::bin);
    PointCloud back = io_read(path, CloudFormat::bin);
    EXPECT_TRUE(clouds_bit_equal(cloud, back));
    std::remove(path.c_str());
}

TEST(Io, TextLineWithLabelParses) {
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_label.xyz";
    {
        std::ofstream os(path);
        os << "1.0 2.0 3.0 7\n0.5 0.25 -1.0 2\n";
    }
    PointCloud cloud = io_read(path, CloudFormat::xyz_text, /*text_has_labels=*/true);
    ASSERT_EQ(cloud.n_points(), 2u);
    EXPECT_EQ(cloud.coords.at(0, 0), 1.0);
    EXPECT_EQ(cloud.coords.at(0, 2), 3.0);
    EXPECT_EQ(cloud.labels[0], 7);
    EXPECT_EQ(cloud.labels[1], 2);
    EXPECT_FALSE(cloud.has_feats());
    std::remove(path.c_str());
}

TEST(Io, TextRoundTripWithinTolerance) {
    Rng gen(13);
    PointCloud cloud = make_shape_cloud(ShapeKind::torus, 64, gen);
    cloud.feats = random_tensor(gen, {64, 2});
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_text.xyz";
    io_write(path, cloud, CloudFormat::xyz_text);
    PointCloud back = io_read(path, CloudFormat::xyz_text);
    EXPECT_LT(max_abs_diff(cloud.coords, back.coords), 1e-12);
    EXPECT_LT(max_abs_diff(cloud.feats, back.feats), 1e-12);
    std::remove(path.c_str());
}

TEST(Io, EmptyFileIsParseError) {
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_empty.xyz";
    { std::ofstream os(path); }
    EXPECT_THROW(io_read(path, CloudFormat::xyz_text), ParseError);
    std::remove(path.c_str());
}

TEST(Io, MalformedLineNamesLineNumber) {
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_bad.xyz";
    {
        std::ofstream os(path);
        os << "1.0 2.0 3.0\n1.0 banana 3.0\n";
    }
    try {
        io_read(path, CloudFormat::xyz_text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
    }
    std::remove(path.c_str());
}

TEST(Io, BadMagicIsFormatError) {
    const std::string path = std::filesystem::temp_directory_path() / "rpnet_io_magic.rpcd";
    {
        std::ofstream os(path, std::ios::binary);
        os << "XXXXjunkjunkjunk";
    }
    EXPECT_THROW(io_read(path, CloudFormat::bin), IoError);
    std::remove(path.c_str());
}
