#include "support.hpp"

#include <chrono>

using namespace targetgrasp;
using namespace targetgrasp::testing;

TEST(Project, OpticalAxisMapsToPrincipalPoint)
{
    const Pixel p = project({0, 0, 1}, camera500());
    EXPECT_DOUBLE_EQ(p.u, 320.0);
    EXPECT_DOUBLE_EQ(p.v, 240.0);
}

TEST(Project, OffAxisPoint)
{
    const Pixel p = project({1, 0, 2}, camera500());
    EXPECT_DOUBLE_EQ(p.u, 570.0);
    EXPECT_DOUBLE_EQ(p.v, 240.0);
}

TEST(Project, BehindCameraThrows)
{
    try {
        project({0, 0, -1}, camera500());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
    }
    EXPECT_THROW(project({0, 0, 0}, camera500()), Error);
}

TEST(Deproject, PrincipalPointRay)
{
    const Point3 p = deproject(320, 240, 1.0, camera500());
    EXPECT_EQ(p, Point3(0, 0, 1));
}

TEST(Deproject, InversePinhole)
{
    const Point3 p = deproject(570, 240, 2.0, camera500());
    EXPECT_NEAR((p - Point3(1, 0, 2)).norm(), 0.0, 1e-12);
}

TEST(Deproject, NonPositiveDepthThrows)
{
    EXPECT_THROW(deproject(1, 1, 0.0, camera500()), Error);
    EXPECT_THROW(deproject(1, 1, -2.0, camera500()), Error);
}

TEST(Deproject, RoundTripOfFixedPoint)
{
    const CameraIntrinsics k;
    const Point3 p(0.3, -0.2, 0.7);
    const Pixel px = project(p, k);
    EXPECT_LE((deproject(px.u, px.v, p.z(), k) - p).norm(), 1e-9);
}

TEST(ProjectDeproject, RandomRoundTripsAreIdentity)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2.0, 2.0), z(0.05, 5.0), px(0.0, 640.0), py(0.0, 480.0);
    const CameraIntrinsics k;
    for (int i = 0; i < 10000; ++i) {
        const Point3 p(u(rng), u(rng), z(rng));
        const Pixel q = project(p, k);
        EXPECT_LE((deproject(q.u, q.v, p.z(), k) - p).norm(), 1e-9 * p.norm());
        const double a = px(rng), b = py(rng), d = z(rng);
        const Pixel r = project(deproject(a, b, d, k), k);
        EXPECT_LE(std::hypot(r.u - a, r.v - b), 1e-9 * std::hypot(a, b));
    }
}

TEST(PixelInBBox, HalfOpenEdges)
{
    const BBox2D b{0, 0, 20, 20};
    EXPECT_TRUE(pixelInBBox(10, 10, b));
    EXPECT_FALSE(pixelInBBox(20, 10, b));
    EXPECT_FALSE(pixelInBBox(10, 20, b));
    EXPECT_TRUE(pixelInBBox(0, 0, b));
    EXPECT_FALSE(pixelInBBox(-1e-9, 5, b));
}

TEST(PixelInBBox, AdjacentBoxesPartition)
{
    const BBox2D left{0, 0, 10, 10}, right{10, 0, 20, 10};
    for (double u = 0.0; u < 20.0; u += 0.25)
        EXPECT_NE(pixelInBBox(u, 5, left), pixelInBBox(u, 5, right)) << u;
}

TEST(TransformCloud, Identity)
{
    PointCloud c;
    c.points = {{1, 2, 3}, {-1, 0, 0.5}};
    const auto out = transformCloud(c, Pose());
    EXPECT_EQ(out.points, c.points);
}

TEST(TransformCloud, PureTranslation)
{
    PointCloud c;
    c.points = {{0, 0, 0}};
    EXPECT_EQ(transformCloud(c, Pose::fromTranslation({0, 0, 1})).points[0], Point3(0, 0, 1));
}

TEST(TransformCloud, QuarterTurnAboutZ)
{
    PointCloud c;
    c.points = {{1, 0, 0}};
    const auto out = transformCloud(c, Pose(axisAngle(Vec3::UnitZ(), M_PI / 2), Point3::Zero()));
    EXPECT_LE((out.points[0] - Point3(0, 1, 0)).norm(), 1e-9);
}

TEST(TransformCloud, KeepsObjectIds)
{
    PointCloud c;
    c.points = {{1, 0, 0}, {0, 1, 0}};
    c.objectIds = std::vector<int>{3, 4};
    EXPECT_EQ(transformCloud(c, Pose::fromTranslation({1, 1, 1})).objectIds, c.objectIds);
}

TEST(Pose, RejectsNonRotation)
{
    Mat3 m = Mat3::Identity();
    m(0, 0) = -1.0; // reflection
    EXPECT_THROW(Pose(m, Point3::Zero()), Error);
    m = Mat3::Identity() * 1.001;
    EXPECT_THROW(Pose(m, Point3::Zero()), Error);
    EXPECT_THROW(Pose(Mat3::Identity(), Point3(0, NAN, 0)), Error);
}

TEST(Pose, InverseAndCompositionOnRandomSamples)
{
    std::mt19937_64 rng(2);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 10000; ++i) {
        const Pose t(randomRotation(rng), randomVec(rng, -1, 1));
        const Point3 p = randomVec(rng, -2, 2);
        const Point3 back = t.inverse().apply(t.apply(p));
        EXPECT_LE((back - p).norm(), 1e-9 * std::max(1.0, p.norm()));
        const Pose id = t * t.inverse();
        EXPECT_LE((id.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LE(id.translation().norm(), 1e-9);
    }
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);
}

TEST(TransformCloud, ForwardThenInverseRestoresPoints)
{
    std::mt19937_64 rng(3);
    PointCloud c;
    for (int i = 0; i < 1000; ++i)
        c.points.push_back(randomVec(rng, -1, 1));
    const Pose t(randomRotation(rng), randomVec(rng, -3, 3));
    const auto back = transformCloud(transformCloud(c, t), t.inverse());
    for (std::size_t i = 0; i < c.size(); ++i)
        EXPECT_LE((back.points[i] - c.points[i]).norm(), 1e-9);
}

TEST(Pose, FromApproximateRepairsDrift)
{
    Mat3 r = axisAngle(Vec3(1, 2, 3), 0.7);
    r(0, 1) += 1e-7;
    EXPECT_FALSE(isRotation(r));
    EXPECT_TRUE(isRotation(Pose::fromApproximate(r, Point3::Zero()).rotation()));
}

TEST(GraspCandidate, WidthMatchesContactsAtConstruction)
{
    std::mt19937_64 rng(4);
    for (int i = 0; i < 1000; ++i) {
        const Point3 a = randomVec(rng, -0.1, 0.1), b = randomVec(rng, -0.1, 0.1);
        const auto g = makeGrasp(Pose(randomRotation(rng), 0.5 * (a + b)), a, b, 0.5);
        EXPECT_NEAR((g.contactA - g.contactB).norm(), g.width, 1e-6);
    }
}

TEST(GraspCandidate, ValidityChecksWidthAndScore)
{
    const GripperModel gm;
    auto g = makeGrasp(Pose(), {0, 0, 0}, {0.05, 0, 0}, 0.5);
    EXPECT_TRUE(isValid(g, gm));
    g.score = 1.5;
    EXPECT_FALSE(isValid(g, gm));
    EXPECT_FALSE(isValid(makeGrasp(Pose(), {0, 0, 0}, {0.09, 0, 0}, 0.5), gm));
    EXPECT_FALSE(isValid(makeGrasp(Pose(), {0, 0, 0}, {0, 0, 0}, 0.5), gm));
}

TEST(BBox2D, Validity)
{
    EXPECT_TRUE((BBox2D{0, 0, 1, 1}).valid());
    EXPECT_FALSE((BBox2D{1, 0, 1, 1}).valid());
    EXPECT_FALSE((BBox2D{0, 2, 1, 1}).valid());
    EXPECT_FALSE((BBox2D{0, 0, INFINITY, 1}).valid());
}

TEST(CameraIntrinsics, Validation)
{
    CameraIntrinsics k;
    EXPECT_NO_THROW(k.validate());
    k.fx = 0;
    EXPECT_THROW(k.validate(), Error);
    k = CameraIntrinsics{};
    k.cx = 700;
    EXPECT_THROW(k.validate(), Error);
}
