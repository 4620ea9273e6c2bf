#include "support.hpp"

#include "targetgrasp/grasp_oracle.hpp"

using namespace targetgrasp;
using namespace targetgrasp::testing;

namespace {

SceneObject object(int id, const Shape& shape, const Pose& pose)
{
    SceneObject o;
    o.id = id;
    o.name = "obj" + std::to_string(id);
    o.shape = shape;
    o.pose = pose;
    return o;
}

/// 6 x 4 x 8 cm box at depth 0.5, axis aligned.
Scene boxScene()
{
    Scene s;
    s.objects.push_back(object(1, Shape::box(0.06, 0.04, 0.08), Pose(Mat3::Identity(), {0, 0, 0.5})));
    return s;
}

GraspCandidate graspBetween(const Point3& a, const Point3& b)
{
    return makeGrasp(Pose(Mat3::Identity(), 0.5 * (a + b)), a, b, 1.0);
}

Scene transformed(Scene s, const Pose& t)
{
    for (auto& o : s.objects)
        o.pose = t * o.pose;
    return s;
}

GraspCandidate transformed(const GraspCandidate& g, const Pose& t)
{
    return makeGrasp(t * g.pose, t.apply(g.contactA), t.apply(g.contactB), g.score);
}

/// Surface point of `o` in direction `dir` from its center (local frame), in camera frame.
Point3 surfacePoint(const SceneObject& o, const Vec3& localDir)
{
    const Vec3 d = localDir.normalized();
    double t = 0.0;
    switch (o.shape.kind) {
    case ShapeKind::Sphere: t = o.shape.radius; break;
    case ShapeKind::Box: {
        t = std::numeric_limits<double>::infinity();
        const Vec3 h(0.5 * o.shape.dx, 0.5 * o.shape.dy, 0.5 * o.shape.dz);
        for (int a = 0; a < 3; ++a)
            if (std::abs(d[a]) > 1e-12)
                t = std::min(t, h[a] / std::abs(d[a]));
        break;
    }
    case ShapeKind::Cylinder: {
        const double radial = std::hypot(d.x(), d.y());
        t = std::min(radial > 1e-12 ? o.shape.radius / radial : 1e300,
                     std::abs(d.z()) > 1e-12 ? 0.5 * o.shape.height / std::abs(d.z()) : 1e300);
        break;
    }
    }
    return o.pose.apply(t * d);
}

/// Random scene of two separated objects plus a grasp that is near-antipodal
/// on the first object, jittered so both outcomes occur.
std::pair<Scene, GraspCandidate> randomCase(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto randomShape = [&] {
        const int k = static_cast<int>(u(rng) * 3);
        if (k == 0)
            return Shape::box(0.02 + 0.05 * u(rng), 0.02 + 0.05 * u(rng), 0.02 + 0.05 * u(rng));
        if (k == 1)
            return Shape::cylinder(0.01 + 0.025 * u(rng), 0.03 + 0.1 * u(rng));
        return Shape::sphere(0.01 + 0.03 * u(rng));
    };
    Scene s;
    s.objects.push_back(object(1, randomShape(), Pose(randomRotation(rng), randomVec(rng, -0.05, 0.05) + Vec3(0, 0, 0.6))));
    s.objects.push_back(object(2, randomShape(), Pose(randomRotation(rng), Vec3(0.3, 0.0, 0.6))));
    const auto& o = s.objects[0];
    const Vec3 dir = randomVec(rng, -1.0, 1.0);
    const Vec3 jitter = 0.4 * u(rng) * randomVec(rng, -1.0, 1.0);
    Point3 a = surfacePoint(o, dir);
    Point3 b = surfacePoint(o, -dir + jitter);
    if (u(rng) < 0.1) // off-surface contact
        b += 0.01 * randomVec(rng, -1.0, 1.0);
    if (u(rng) < 0.1) // second contact on the other object
        b = surfacePoint(s.objects[1], -dir);
    return {s, graspBetween(a, b)};
}

} // namespace

TEST(GraspOracle, OppositeFacesSucceed)
{
    const Scene s = boxScene();
    EXPECT_TRUE(graspSuccess(s, graspBetween({-0.03, 0, 0.5}, {0.03, 0, 0.5}), 0.5));
    EXPECT_TRUE(graspSuccess(s, graspBetween({0, -0.02, 0.5}, {0, 0.02, 0.5}), 0.5));
    const auto v = judgeGrasp(s, graspBetween({-0.03, 0, 0.5}, {0.03, 0, 0.5}), {});
    EXPECT_EQ(v.objectA, 1);
    EXPECT_EQ(v.objectB, 1);
    EXPECT_NEAR(v.angleA, 0.0, 1e-12);
    EXPECT_NEAR(v.angleB, 0.0, 1e-12);
}

TEST(GraspOracle, AdjacentFacesExceedCone)
{
    const Scene s = boxScene();
    // Face centers of +x and +y: the closing line is about 34 degrees off the +x inward normal.
    const GraspCandidate g = graspBetween({0.03, 0, 0.5}, {0, 0.02, 0.5});
    const double expected = std::atan2(0.02, 0.03); // angle between -x and (B - A) at A
    const auto v = judgeGrasp(s, g, {});
    EXPECT_NEAR(v.angleA, std::acos(Vec3(-1, 0, 0).dot((g.contactB - g.contactA).normalized())), 1e-12);
    EXPECT_NEAR(v.angleA, expected, 1e-12);
    EXPECT_GT(v.angleA, std::atan(0.5));
    EXPECT_FALSE(v.success);
    EXPECT_FALSE(graspSuccess(s, g, 0.5));
    // Once the cone is wide enough on both sides the same contacts hold.
    EXPECT_TRUE(graspSuccess(s, g, std::tan(std::max(v.angleA, v.angleB)) * 1.01));
}

TEST(GraspOracle, TwoObjectsFail)
{
    Scene s = boxScene();
    s.objects.push_back(object(2, Shape::box(0.06, 0.04, 0.08), Pose(Mat3::Identity(), {0.1, 0, 0.5})));
    // Outer faces of two neighboring boxes, 7 cm apart and aligned.
    const auto v = judgeGrasp(s, graspBetween({0.03, 0, 0.5}, {0.07, 0, 0.5}), {});
    EXPECT_FALSE(v.success);
    EXPECT_EQ(v.objectA, 1);
    EXPECT_EQ(v.objectB, 2);
}

TEST(GraspOracle, OffSurfaceAndTooWide)
{
    const Scene s = boxScene();
    EXPECT_FALSE(graspSuccess(s, graspBetween({-0.035, 0, 0.5}, {0.03, 0, 0.5}), 0.5));
    EXPECT_TRUE(graspSuccess(s, graspBetween({-0.032, 0, 0.5}, {0.03, 0, 0.5}), 0.5));
    GripperModel narrow;
    narrow.maxWidth = 0.05;
    EXPECT_FALSE(graspSuccess(s, graspBetween({-0.03, 0, 0.5}, {0.03, 0, 0.5}), 0.5, narrow));
    EXPECT_ERROR_CODE(graspSuccess(s, graspBetween({-0.03, 0, 0.5}, {0.03, 0, 0.5}), 0.0), ErrorCode::InvalidArgument);
}

TEST(GraspOracle, SwapSymmetry)
{
    std::mt19937_64 rng(101);
    int successes = 0;
    for (int n = 0; n < 1000; ++n) {
        const auto [s, g] = randomCase(rng);
        const GraspCandidate swapped = graspBetween(g.contactB, g.contactA);
        const bool ok = graspSuccess(s, g, 0.5);
        EXPECT_EQ(ok, graspSuccess(s, swapped, 0.5)) << n;
        successes += ok;
    }
    EXPECT_GT(successes, 100);
    EXPECT_LT(successes, 900);
}

TEST(GraspOracle, RigidMotionInvariance)
{
    std::mt19937_64 rng(202);
    int successes = 0;
    for (int n = 0; n < 1000; ++n) {
        const auto [s, g] = randomCase(rng);
        const Pose t(randomRotation(rng), randomVec(rng, -1.0, 1.0));
        const bool ok = graspSuccess(s, g, 0.5);
        EXPECT_EQ(ok, graspSuccess(transformed(s, t), transformed(g, t), 0.5)) << n;
        successes += ok;
    }
    EXPECT_GT(successes, 100);
}

TEST(GraspOracle, MonotoneInFriction)
{
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> mu(0.05, 2.0);
    for (int n = 0; n < 1000; ++n) {
        const auto [s, g] = randomCase(rng);
        double m1 = mu(rng), m2 = mu(rng);
        if (m1 > m2)
            std::swap(m1, m2);
        if (graspSuccess(s, g, m1)) {
            EXPECT_TRUE(graspSuccess(s, g, m2)) << n;
        }
    }
}
