#pragma once

#include <gtest/gtest.h>
#include <json.hpp>

#include <optional>
#include <random>
#include <string>

#include "targetgrasp/geometry.hpp"
#include "targetgrasp/scene.hpp"

namespace targetgrasp::testing {

/// Runs f and returns the ErrorCode it threw; fails the test when nothing is thrown.
template <typename F>
std::optional<ErrorCode> thrownCode(F&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

#define EXPECT_ERROR_CODE(expr, code) EXPECT_EQ(::targetgrasp::testing::thrownCode([&] { (void)(expr); }), code)

inline std::string dataPath(const std::string& rel) { return std::string(TARGETGRASP_DATA_DIR) + "/" + rel; }

inline Mat3 randomRotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline Vec3 randomVec(std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    return {u(rng), u(rng), u(rng)};
}

/// Camera with fx = fy = 500, principal point (320, 240).
inline CameraIntrinsics camera500()
{
    CameraIntrinsics k;
    k.fx = k.fy = 500.0;
    return k;
}

/// Points on the rectangle x in [x0, x1], y in [y0, y1] at depth z, on a grid of `step`.
inline PointCloud planePatch(double x0, double x1, double y0, double y1, double z, double step)
{
    PointCloud c;
    for (double x = x0; x <= x1 + 1e-12; x += step)
        for (double y = y0; y <= y1 + 1e-12; y += step)
            c.points.emplace_back(x, y, z);
    return c;
}

/// Plate in the plane x = x0 spanning y and z.
inline PointCloud sidePlate(double x0, double y0, double y1, double z0, double z1, double step)
{
    PointCloud c;
    for (double y = y0; y <= y1 + 1e-12; y += step)
        for (double z = z0; z <= z1 + 1e-12; z += step)
            c.points.emplace_back(x0, y, z);
    return c;
}

inline PointCloud merge(PointCloud a, const PointCloud& b)
{
    a.points.insert(a.points.end(), b.points.begin(), b.points.end());
    return a;
}

inline nlohmann::json sphereSpec(double r, const Point3& center, const char* name = "ball")
{
    return {{"id", 1},
            {"name", name},
            {"color", {{"label", "red"}, {"rgb", {200, 30, 30}}}},
            {"shape", {{"type", "sphere"}, {"radius", r}}},
            {"pose", {{"translation", {center.x(), center.y(), center.z()}}}}};
}

} // namespace targetgrasp::testing
