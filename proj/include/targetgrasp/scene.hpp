#pragma once

// Synthetic desk workspaces built from primitive shapes with semantic
// metadata, rendered to an RGB raster and a visibility-culled point cloud.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/image.hpp"

namespace targetgrasp {

inline constexpr int kTableId = 0;
inline constexpr int kBackgroundId = -1;
inline constexpr double kDefaultSamplesPerM2 = 1e5;
/// Depth guard band used by the visibility test.
inline constexpr double kVisibilityGuard = 0.005;

enum class ShapeKind { Box, Cylinder, Sphere };

/// Local frame: box centered at origin with full extents (dx, dy, dz);
/// cylinder axis along local z, centered; sphere centered.
struct Shape {
    ShapeKind kind = ShapeKind::Sphere;
    double dx = 0.0, dy = 0.0, dz = 0.0; // box extents
    double radius = 0.0;                 // cylinder, sphere
    double height = 0.0;                 // cylinder

    static Shape box(double dx, double dy, double dz) { return {ShapeKind::Box, dx, dy, dz, 0.0, 0.0}; }
    static Shape cylinder(double r, double h) { return {ShapeKind::Cylinder, 0.0, 0.0, 0.0, r, h}; }
    static Shape sphere(double r) { return {ShapeKind::Sphere, 0.0, 0.0, 0.0, r, 0.0}; }

    bool valid() const
    {
        switch (kind) {
        case ShapeKind::Box: return dx > 0.0 && dy > 0.0 && dz > 0.0;
        case ShapeKind::Cylinder: return radius > 0.0 && height > 0.0;
        case ShapeKind::Sphere: return radius > 0.0;
        }
        return false;
    }

    double largestDimension() const
    {
        switch (kind) {
        case ShapeKind::Box: return std::max({dx, dy, dz});
        case ShapeKind::Cylinder: return std::max(2.0 * radius, height);
        case ShapeKind::Sphere: return 2.0 * radius;
        }
        return 0.0;
    }

    double volume() const
    {
        switch (kind) {
        case ShapeKind::Box: return dx * dy * dz;
        case ShapeKind::Cylinder: return std::numbers::pi * radius * radius * height;
        case ShapeKind::Sphere: return 4.0 / 3.0 * std::numbers::pi * radius * radius * radius;
        }
        return 0.0;
    }

    double boundingRadius() const
    {
        switch (kind) {
        case ShapeKind::Box: return 0.5 * std::sqrt(dx * dx + dy * dy + dz * dz);
        case ShapeKind::Cylinder: return std::sqrt(radius * radius + 0.25 * height * height);
        case ShapeKind::Sphere: return radius;
        }
        return 0.0;
    }
};

struct ColorLabel {
    std::string label;
    Rgb rgb;
};

struct SceneObject {
    int id = 1;
    std::string name;
    std::vector<std::string> synonyms;
    ColorLabel color;
    std::set<std::string> capabilities;
    Shape shape;
    Pose pose; // object-to-camera
};

/// Finite tabletop rectangle. Table frame: x right, y away from the camera,
/// z up (toward the camera side); origin where the optical axis meets it.
struct Table {
    Pose pose; // table-to-camera
    double sizeX = 0.9;
    double sizeY = 0.7;
    Rgb color{186, 160, 122};
    double distance = 0.6;
    double elevationDeg = 70.0;

    /// Camera looking at the table origin from `distance`, with the optical
    /// axis at `elevationDeg` above the table plane.
    static Table looking(double distance, double elevationDeg, double sizeX = 0.9, double sizeY = 0.7)
    {
        const double e = elevationDeg * std::numbers::pi / 180.0;
        const Vec3 xT(1.0, 0.0, 0.0);
        const Vec3 zT(0.0, -std::cos(e), -std::sin(e));
        const Vec3 yT = zT.cross(xT);
        Mat3 r;
        r.col(0) = xT;
        r.col(1) = yT;
        r.col(2) = zT;
        Table t;
        t.pose = Pose::fromApproximate(r, Point3(0.0, 0.0, distance));
        t.sizeX = sizeX;
        t.sizeY = sizeY;
        t.distance = distance;
        t.elevationDeg = elevationDeg;
        return t;
    }

    Vec3 upInCamera() const { return pose.rotation().col(2); }
};

/// Plane n.p + offset = 0 in camera frame, n pointing toward the camera side.
struct Plane {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;

    double signedDistance(const Point3& p) const { return normal.dot(p) + offset; }
};

struct Scene {
    std::vector<SceneObject> objects;
    CameraIntrinsics camera;
    std::optional<Table> table;
    double samplesPerM2 = kDefaultSamplesPerM2;
    Rgb background{110, 110, 110};
    std::uint64_t seed = 0;

    std::optional<Plane> tablePlane() const
    {
        if (!table)
            return std::nullopt;
        const Vec3 n = table->upInCamera();
        return Plane{n, -n.dot(table->pose.translation())};
    }

    const SceneObject* find(int id) const
    {
        for (const auto& o : objects)
            if (o.id == id)
                return &o;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Ray casting and surface queries (object local frames)

namespace shapes {

inline constexpr double kRayEpsilon = 1e-9;

/// Smallest t > eps with o + t d on the surface; d need not be unit length.
inline std::optional<double> intersect(const Shape& s, const Point3& o, const Vec3& d)
{
    std::optional<double> best;
    auto consider = [&](double t) {
        if (t > kRayEpsilon && (!best || t < *best))
            best = t;
    };
    switch (s.kind) {
    case ShapeKind::Sphere: {
        const double a = d.squaredNorm();
        const double b = 2.0 * o.dot(d);
        const double c = o.squaredNorm() - s.radius * s.radius;
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0)
            return std::nullopt;
        const double sq = std::sqrt(disc);
        consider((-b - sq) / (2.0 * a));
        consider((-b + sq) / (2.0 * a));
        return best;
    }
    case ShapeKind::Box: {
        const Vec3 h(0.5 * s.dx, 0.5 * s.dy, 0.5 * s.dz);
        double tmin = -std::numeric_limits<double>::infinity();
        double tmax = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
            if (std::abs(d[i]) < 1e-15) {
                if (std::abs(o[i]) > h[i])
                    return std::nullopt;
                continue;
            }
            double t1 = (-h[i] - o[i]) / d[i];
            double t2 = (h[i] - o[i]) / d[i];
            if (t1 > t2)
                std::swap(t1, t2);
            tmin = std::max(tmin, t1);
            tmax = std::min(tmax, t2);
        }
        if (tmin > tmax)
            return std::nullopt;
        consider(tmin);
        consider(tmax);
        return best;
    }
    case ShapeKind::Cylinder: {
        const double hz = 0.5 * s.height;
        const double a = d.x() * d.x() + d.y() * d.y();
        if (a > 1e-18) {
            const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
            const double c = o.x() * o.x() + o.y() * o.y() - s.radius * s.radius;
            const double disc = b * b - 4.0 * a * c;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)})
                    if (std::abs(o.z() + t * d.z()) <= hz)
                        consider(t);
            }
        }
        if (std::abs(d.z()) > 1e-15) {
            for (double zc : {-hz, hz}) {
                const double t = (zc - o.z()) / d.z();
                const double x = o.x() + t * d.x(), y = o.y() + t * d.y();
                if (x * x + y * y <= s.radius * s.radius)
                    consider(t);
            }
        }
        return best;
    }
    }
    return std::nullopt;
}

struct SurfaceQuery {
    double distance = 0.0; // unsigned distance to the surface
    Vec3 normal;           // outward unit normal at the closest surface point
};

inline SurfaceQuery closestSurface(const Shape& s, const Point3& p)
{
    switch (s.kind) {
    case ShapeKind::Sphere: {
        const double rho = p.norm();
        const Vec3 n = rho > 1e-15 ? Vec3(p / rho) : Vec3::UnitZ();
        return {std::abs(rho - s.radius), n};
    }
    case ShapeKind::Box: {
        const Vec3 h(0.5 * s.dx, 0.5 * s.dy, 0.5 * s.dz);
        const Vec3 excess = p.cwiseAbs() - h;
        if (excess.maxCoeff() > 0.0) {
            const Vec3 q = p.cwiseMax(-h).cwiseMin(h);
            const Vec3 diff = p - q;
            return {diff.norm(), diff.normalized()};
        }
        int axis = 0;
        for (int i = 1; i < 3; ++i)
            if (-excess[i] < -excess[axis])
                axis = i;
        Vec3 n = Vec3::Zero();
        n[axis] = p[axis] >= 0.0 ? 1.0 : -1.0;
        return {-excess[axis], n};
    }
    case ShapeKind::Cylinder: {
        const double hz = 0.5 * s.height;
        const double rho = std::hypot(p.x(), p.y());
        const Vec3 radial = rho > 1e-15 ? Vec3(p.x() / rho, p.y() / rho, 0.0) : Vec3::UnitX();
        const Vec3 axial(0.0, 0.0, p.z() >= 0.0 ? 1.0 : -1.0);
        const double er = rho - s.radius;
        const double ez = std::abs(p.z()) - hz;
        if (er <= 0.0 && ez <= 0.0)
            return -er < -ez ? SurfaceQuery{-er, radial} : SurfaceQuery{-ez, axial};
        if (er > 0.0 && ez <= 0.0)
            return {er, radial};
        if (ez > 0.0 && er <= 0.0)
            return {ez, axial};
        const Point3 q(radial.x() * s.radius, radial.y() * s.radius, axial.z() * hz);
        const Vec3 diff = p - q;
        return {diff.norm(), diff.normalized()};
    }
    }
    return {};
}

/// Deterministic surface samples in the local frame.
inline std::vector<Point3> sampleSurface(const Shape& s, double samplesPerM2)
{
    std::vector<Point3> out;
    const double lin = std::sqrt(samplesPerM2);
    auto count = [&](double length, int minimum) {
        return std::max(minimum, static_cast<int>(std::lround(length * lin)));
    };
    switch (s.kind) {
    case ShapeKind::Box: {
        const Vec3 h(0.5 * s.dx, 0.5 * s.dy, 0.5 * s.dz);
        for (int axis = 0; axis < 3; ++axis) {
            const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
            const int n1 = count(2.0 * h[a1], 1), n2 = count(2.0 * h[a2], 1);
            for (double sign : {-1.0, 1.0})
                for (int i = 0; i < n1; ++i)
                    for (int j = 0; j < n2; ++j) {
                        Point3 p;
                        p[axis] = sign * h[axis];
                        p[a1] = -h[a1] + (i + 0.5) * 2.0 * h[a1] / n1;
                        p[a2] = -h[a2] + (j + 0.5) * 2.0 * h[a2] / n2;
                        out.push_back(p);
                    }
        }
        break;
    }
    case ShapeKind::Cylinder: {
        const double hz = 0.5 * s.height;
        const int nTheta = count(2.0 * std::numbers::pi * s.radius, 3);
        const int nZ = count(s.height, 1);
        for (int k = 0; k < nZ; ++k) {
            const double z = -hz + (k + 0.5) * s.height / nZ;
            for (int i = 0; i < nTheta; ++i) {
                const double th = 2.0 * std::numbers::pi * (i + 0.5 * (k % 2)) / nTheta;
                out.emplace_back(s.radius * std::cos(th), s.radius * std::sin(th), z);
            }
        }
        const int rings = count(s.radius, 1);
        for (double zc : {-hz, hz})
            for (int k = 0; k < rings; ++k) {
                const double r = (k + 0.5) * s.radius / rings;
                const int n = count(2.0 * std::numbers::pi * r, 1);
                for (int i = 0; i < n; ++i) {
                    const double th = 2.0 * std::numbers::pi * i / n;
                    out.emplace_back(r * std::cos(th), r * std::sin(th), zc);
                }
            }
        break;
    }
    case ShapeKind::Sphere: {
        const int n = count(std::sqrt(4.0 * std::numbers::pi) * s.radius, 1);
        const int total = std::max(1, n * n);
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < total; ++i) {
            const double z = 1.0 - 2.0 * (i + 0.5) / total;
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double th = golden * i;
            out.emplace_back(s.radius * r * std::cos(th), s.radius * r * std::sin(th), s.radius * z);
        }
        break;
    }
    }
    return out;
}

} // namespace shapes

// ---------------------------------------------------------------------------
// Scene-level ray casting

struct RayHit {
    double t = std::numeric_limits<double>::infinity(); // camera-frame depth when d.z == 1
    int id = kBackgroundId;
};

/// Nearest surface hit along the ray origin + t*d (camera frame).
inline RayHit castRay(const Scene& s, const Point3& origin, const Vec3& d)
{
    RayHit hit;
    for (const auto& obj : s.objects) {
        const Mat3 rt = obj.pose.rotation().transpose();
        const Point3 o = rt * (origin - obj.pose.translation());
        if (auto t = shapes::intersect(obj.shape, o, rt * d); t && *t < hit.t)
            hit = {*t, obj.id};
    }
    if (s.table) {
        const Mat3 rt = s.table->pose.rotation().transpose();
        const Point3 o = rt * (origin - s.table->pose.translation());
        const Vec3 dl = rt * d;
        if (std::abs(dl.z()) > 1e-15) {
            const double t = -o.z() / dl.z();
            const Point3 p = o + t * dl;
            if (t > shapes::kRayEpsilon && t < hit.t && std::abs(p.x()) <= 0.5 * s.table->sizeX &&
                std::abs(p.y()) <= 0.5 * s.table->sizeY)
                hit = {t, kTableId};
        }
    }
    return hit;
}

/// Per-pixel nearest hit through pixel centers.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<int> ids;

    double depthAt(int i, int j) const { return depth[static_cast<std::size_t>(j) * width + i]; }
    int idAt(int i, int j) const { return ids[static_cast<std::size_t>(j) * width + i]; }
};

inline DepthMap renderDepth(const Scene& s)
{
    const auto& k = s.camera;
    DepthMap m;
    m.width = k.width;
    m.height = k.height;
    m.depth.assign(static_cast<std::size_t>(k.width) * k.height, std::numeric_limits<double>::infinity());
    m.ids.assign(m.depth.size(), kBackgroundId);
    for (int j = 0; j < k.height; ++j)
        for (int i = 0; i < k.width; ++i) {
            // d.z == 1, so the ray parameter equals camera depth.
            const Vec3 d((i + 0.5 - k.cx) / k.fx, (j + 0.5 - k.cy) / k.fy, 1.0);
            const RayHit h = castRay(s, Point3::Zero(), d);
            const auto idx = static_cast<std::size_t>(j) * k.width + i;
            m.depth[idx] = h.t;
            m.ids[idx] = h.id;
        }
    return m;
}

/// Surface samples of every object plus the table, culled to the image, to
/// front-facing surface and to the nearest visible surface (with the 5 mm
/// guard band).
inline PointCloud renderCloud(const Scene& s, double samplesPerM2, const DepthMap& depth)
{
    if (!(samplesPerM2 > 0.0))
        fail(ErrorCode::InvalidArgument, "samplesPerM2 must be positive");
    const auto& k = s.camera;
    PointCloud cloud;
    cloud.objectIds.emplace();
    auto addSamples = [&](const std::vector<Point3>& local, const Pose& pose, int id, const Shape* shape) {
        for (const auto& lp : local) {
            const Point3 p = pose.apply(lp);
            if (!(p.z() > 0.0))
                continue;
            const Vec3 n = shape ? pose.applyDirection(shapes::closestSurface(*shape, lp).normal)
                                 : pose.applyDirection(Vec3::UnitZ());
            if (!(n.dot(p) < 0.0))
                continue;
            const Pixel px = project(p, k);
            if (!k.contains(px))
                continue;
            const int i = static_cast<int>(px.u), j = static_cast<int>(px.v);
            if (p.z() > depth.depthAt(i, j) + kVisibilityGuard)
                continue;
            cloud.points.push_back(p);
            cloud.objectIds->push_back(id);
        }
    };
    for (const auto& obj : s.objects)
        addSamples(shapes::sampleSurface(obj.shape, samplesPerM2), obj.pose, obj.id, &obj.shape);
    if (s.table) {
        const double lin = std::sqrt(samplesPerM2);
        const int nx = std::max(1, static_cast<int>(std::lround(s.table->sizeX * lin)));
        const int ny = std::max(1, static_cast<int>(std::lround(s.table->sizeY * lin)));
        std::vector<Point3> local;
        local.reserve(static_cast<std::size_t>(nx) * ny);
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                local.emplace_back(-0.5 * s.table->sizeX + (i + 0.5) * s.table->sizeX / nx,
                                   -0.5 * s.table->sizeY + (j + 0.5) * s.table->sizeY / ny, 0.0);
        addSamples(local, s.table->pose, kTableId, nullptr);
    }
    if (cloud.empty())
        fail(ErrorCode::EmptyScene, "no visible surface points");
    return cloud;
}

inline PointCloud renderCloud(const Scene& s, double samplesPerM2)
{
    return renderCloud(s, samplesPerM2, renderDepth(s));
}

inline RgbImage renderImage(const Scene& s, const DepthMap& depth)
{
    RgbImage img(s.camera.width, s.camera.height, s.background);
    for (int j = 0; j < depth.height; ++j)
        for (int i = 0; i < depth.width; ++i) {
            const int id = depth.idAt(i, j);
            if (id == kTableId && s.table)
                img.set(i, j, s.table->color);
            else if (const auto* o = id > 0 ? s.find(id) : nullptr)
                img.set(i, j, o->color.rgb);
        }
    return img;
}

inline RgbImage renderImage(const Scene& s) { return renderImage(s, renderDepth(s)); }

/// Tight pixel box over the object's visible cloud samples.
inline BBox2D groundTruthBBox(const Scene& s, int objectId, const PointCloud& cloud)
{
    if (objectId != kTableId && !s.find(objectId))
        fail(ErrorCode::UnknownObject, "no object with id " + std::to_string(objectId));
    if (objectId == kTableId && !s.table)
        fail(ErrorCode::UnknownObject, "scene has no table");
    if (!cloud.objectIds)
        fail(ErrorCode::InvalidArgument, "cloud carries no object ids");
    int i0 = std::numeric_limits<int>::max(), j0 = i0, i1 = std::numeric_limits<int>::min(), j1 = i1;
    for (std::size_t n = 0; n < cloud.size(); ++n) {
        if ((*cloud.objectIds)[n] != objectId)
            continue;
        const Pixel px = project(cloud.points[n], s.camera);
        const int i = static_cast<int>(std::floor(px.u)), j = static_cast<int>(std::floor(px.v));
        i0 = std::min(i0, i);
        j0 = std::min(j0, j);
        i1 = std::max(i1, i);
        j1 = std::max(j1, j);
    }
    if (i1 < i0)
        fail(ErrorCode::NotVisible, "object " + std::to_string(objectId) + " is fully occluded");
    return {static_cast<double>(std::max(0, i0)), static_cast<double>(std::max(0, j0)),
            static_cast<double>(std::min(s.camera.width, i1 + 1)), static_cast<double>(std::min(s.camera.height, j1 + 1))};
}

inline BBox2D groundTruthBBox(const Scene& s, int objectId)
{
    if (objectId != kTableId && !s.find(objectId))
        fail(ErrorCode::UnknownObject, "no object with id " + std::to_string(objectId));
    return groundTruthBBox(s, objectId, renderCloud(s, s.samplesPerM2));
}

/// Object whose surface lies within `tolerance` of p (nearest wins); the
/// table counts as id 0. Returns kBackgroundId when none.
inline int objectAt(const Scene& s, const Point3& p, double tolerance = 0.003)
{
    int best = kBackgroundId;
    double bestDist = tolerance;
    for (const auto& obj : s.objects) {
        const Point3 local = obj.pose.inverse().apply(p);
        const double d = shapes::closestSurface(obj.shape, local).distance;
        if (d <= bestDist) {
            bestDist = d;
            best = obj.id;
        }
    }
    if (s.table) {
        const Point3 local = s.table->pose.inverse().apply(p);
        if (std::abs(local.x()) <= 0.5 * s.table->sizeX && std::abs(local.y()) <= 0.5 * s.table->sizeY &&
            std::abs(local.z()) < bestDist)
            best = kTableId;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Scene spec (JSON)

namespace scene_detail {

using nlohmann::json;

[[noreturn]] inline void malformed(const std::string& path, const std::string& what)
{
    fail(ErrorCode::MalformedSpec, path + ": " + what);
}

inline double number(const json& j, const std::string& key, const std::string& path)
{
    if (!j.contains(key) || !j.at(key).is_number())
        malformed(path + "." + key, "expected a number");
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v))
        malformed(path + "." + key, "must be finite");
    return v;
}

inline double numberOr(const json& j, const std::string& key, double fallback, const std::string& path)
{
    return j.contains(key) ? number(j, key, path) : fallback;
}

inline Rgb rgb(const json& j, const std::string& path)
{
    if (!j.is_array() || j.size() != 3)
        malformed(path, "expected [r, g, b]");
    Rgb c;
    std::uint8_t* dst[3] = {&c.r, &c.g, &c.b};
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number_integer() || j[i].get<int>() < 0 || j[i].get<int>() > 255)
            malformed(path + "[" + std::to_string(i) + "]", "expected an integer in 0..255");
        *dst[i] = static_cast<std::uint8_t>(j[i].get<int>());
    }
    return c;
}

inline Vec3 vec3(const json& j, const std::string& path)
{
    if (!j.is_array() || j.size() != 3)
        malformed(path, "expected a 3-vector");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number())
            malformed(path + "[" + std::to_string(i) + "]", "expected a number");
        v[i] = j[i].get<double>();
    }
    if (!isFinite(v))
        malformed(path, "must be finite");
    return v;
}

inline Shape shape(const json& j, const std::string& path)
{
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
        malformed(path + ".type", "expected box, cylinder or sphere");
    const auto type = j.at("type").get<std::string>();
    Shape s;
    if (type == "box") {
        const Vec3 size = vec3(j.value("size", json()), path + ".size");
        s = Shape::box(size.x(), size.y(), size.z());
    } else if (type == "cylinder") {
        s = Shape::cylinder(number(j, "radius", path), number(j, "height", path));
    } else if (type == "sphere") {
        s = Shape::sphere(number(j, "radius", path));
    } else {
        malformed(path + ".type", "unknown shape '" + type + "'");
    }
    if (!s.valid())
        malformed(path, "dimensions must be positive");
    return s;
}

/// Object-to-table pose for an object resting on the tabletop.
inline Pose restingPose(const Shape& s, double x, double y, double yawDeg, bool lying)
{
    const double yaw = yawDeg * std::numbers::pi / 180.0;
    Mat3 r = axisAngle(Vec3::UnitZ(), yaw);
    double z = 0.0;
    switch (s.kind) {
    case ShapeKind::Box: z = 0.5 * s.dz; break;
    case ShapeKind::Sphere: z = s.radius; break;
    case ShapeKind::Cylinder:
        if (lying) {
            // Axis along the table x direction before the yaw.
            r = r * axisAngle(Vec3::UnitY(), 0.5 * std::numbers::pi);
            z = s.radius;
        } else {
            z = 0.5 * s.height;
        }
        break;
    }
    return Pose::fromApproximate(r, Point3(x, y, z));
}

inline double footprintRadius(const Shape& s, bool lying)
{
    switch (s.kind) {
    case ShapeKind::Box: return 0.5 * std::hypot(s.dx, s.dy);
    case ShapeKind::Sphere: return s.radius;
    case ShapeKind::Cylinder: return lying ? std::hypot(0.5 * s.height, s.radius) : s.radius;
    }
    return 0.0;
}

class Uniform {
public:
    explicit Uniform(std::uint64_t seed) : rng_(seed) {}
    double operator()(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 rng_;
};

} // namespace scene_detail

/// Placement region (table frame) used for objects without an explicit pose.
struct PlacementRegion {
    double xMin = -0.2, xMax = 0.2, yMin = -0.12, yMax = 0.18;
};

inline Scene buildScene(const nlohmann::json& spec, const PlacementRegion& region = {})
{
    using namespace scene_detail;
    if (!spec.is_object())
        malformed("$", "scene spec must be a JSON object");
    Scene s;
    if (spec.contains("camera")) {
        const auto& c = spec.at("camera");
        const std::string p = "$.camera";
        s.camera.fx = number(c, "fx", p);
        s.camera.fy = number(c, "fy", p);
        s.camera.cx = number(c, "cx", p);
        s.camera.cy = number(c, "cy", p);
        s.camera.width = static_cast<int>(number(c, "width", p));
        s.camera.height = static_cast<int>(number(c, "height", p));
        try {
            s.camera.validate();
        } catch (const Error& e) {
            malformed(p, e.what());
        }
    }
    if (spec.contains("seed")) {
        if (!spec.at("seed").is_number_unsigned() && !spec.at("seed").is_number_integer())
            malformed("$.seed", "expected a non-negative integer");
        s.seed = spec.at("seed").get<std::uint64_t>();
    }
    s.samplesPerM2 = numberOr(spec, "samplesPerM2", kDefaultSamplesPerM2, "$");
    if (!(s.samplesPerM2 > 0.0))
        malformed("$.samplesPerM2", "must be positive");
    if (spec.contains("background"))
        s.background = rgb(spec.at("background"), "$.background");
    if (spec.contains("table") && !spec.at("table").is_null()) {
        const auto& t = spec.at("table");
        const std::string p = "$.table";
        if (!t.is_object())
            malformed(p, "expected an object or null");
        Table table = Table::looking(numberOr(t, "distance", 0.6, p), numberOr(t, "elevationDeg", 70.0, p),
                                     numberOr(t, "sizeX", 0.9, p), numberOr(t, "sizeY", 0.7, p));
        if (!(table.distance > 0.0) || !(table.elevationDeg > 0.0 && table.elevationDeg <= 90.0) ||
            !(table.sizeX > 0.0) || !(table.sizeY > 0.0))
            malformed(p, "distance/size must be positive and elevation in (0, 90]");
        if (t.contains("rgb"))
            table.color = rgb(t.at("rgb"), p + ".rgb");
        s.table = table;
    }

    if (!spec.contains("objects"))
        return s;
    const auto& objects = spec.at("objects");
    if (!objects.is_array())
        malformed("$.objects", "expected an array");

    Uniform uniform(s.seed);
    std::vector<std::pair<Vec3, double>> footprints; // table-frame (x, y), radius
    std::set<int> ids;
    for (std::size_t n = 0; n < objects.size(); ++n) {
        const auto& o = objects[n];
        const std::string p = "$.objects[" + std::to_string(n) + "]";
        if (!o.is_object())
            malformed(p, "expected an object");
        SceneObject obj;
        if (!o.contains("id") || !o.at("id").is_number_integer())
            malformed(p + ".id", "expected an integer");
        obj.id = o.at("id").get<int>();
        if (obj.id <= 0)
            malformed(p + ".id", "ids must be >= 1 (0 is the table)");
        if (!ids.insert(obj.id).second)
            malformed(p + ".id", "duplicate id " + std::to_string(obj.id));
        if (!o.contains("name") || !o.at("name").is_string() || o.at("name").get<std::string>().empty())
            malformed(p + ".name", "expected a non-empty string");
        obj.name = o.at("name").get<std::string>();
        if (o.contains("synonyms")) {
            if (!o.at("synonyms").is_array())
                malformed(p + ".synonyms", "expected an array of strings");
            for (const auto& syn : o.at("synonyms")) {
                if (!syn.is_string())
                    malformed(p + ".synonyms", "expected an array of strings");
                obj.synonyms.push_back(syn.get<std::string>());
            }
        }
        if (o.contains("color")) {
            const auto& c = o.at("color");
            if (!c.is_object() || !c.contains("label") || !c.at("label").is_string())
                malformed(p + ".color.label", "expected a string");
            obj.color.label = c.at("label").get<std::string>();
            obj.color.rgb = rgb(c.value("rgb", json()), p + ".color.rgb");
        }
        if (o.contains("capabilities")) {
            if (!o.at("capabilities").is_array())
                malformed(p + ".capabilities", "expected an array of strings");
            for (const auto& cap : o.at("capabilities")) {
                if (!cap.is_string())
                    malformed(p + ".capabilities", "expected an array of strings");
                obj.capabilities.insert(cap.get<std::string>());
            }
        }
        obj.shape = shape(o.value("shape", json()), p + ".shape");

        if (o.contains("pose")) {
            const auto& ps = o.at("pose");
            Mat3 r = Mat3::Identity();
            if (ps.contains("rotation")) {
                const auto& rj = ps.at("rotation");
                if (!rj.is_array() || rj.size() != 9)
                    malformed(p + ".pose.rotation", "expected 9 numbers (row-major)");
                for (int i = 0; i < 9; ++i) {
                    if (!rj[i].is_number())
                        malformed(p + ".pose.rotation", "expected 9 numbers (row-major)");
                    r(i / 3, i % 3) = rj[i].get<double>();
                }
            }
            const Vec3 t = vec3(ps.value("translation", json()), p + ".pose.translation");
            if (!isRotation(r))
                malformed(p + ".pose.rotation", "not orthonormal with det +1 (tolerance 1e-9)");
            obj.pose = Pose(r, t);
        } else {
            if (!s.table)
                malformed(p, "objects without a pose need a table to rest on");
            double x, y, yaw;
            bool lying = false;
            if (o.contains("placement")) {
                const auto& pl = o.at("placement");
                const std::string pp = p + ".placement";
                x = number(pl, "x", pp);
                y = number(pl, "y", pp);
                yaw = numberOr(pl, "yawDeg", 0.0, pp);
                lying = pl.value("lying", false);
                footprints.emplace_back(Vec3(x, y, 0.0), footprintRadius(obj.shape, lying));
            } else {
                const double radius = footprintRadius(obj.shape, false);
                bool placed = false;
                for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                    x = uniform(region.xMin, region.xMax);
                    y = uniform(region.yMin, region.yMax);
                    yaw = uniform(0.0, 360.0);
                    placed = std::all_of(footprints.begin(), footprints.end(), [&](const auto& f) {
                        return std::hypot(f.first.x() - x, f.first.y() - y) > f.second + radius + 0.01;
                    });
                }
                if (!placed)
                    malformed(p, "could not find a free random placement");
                footprints.emplace_back(Vec3(x, y, 0.0), radius);
            }
            obj.pose = s.table->pose * restingPose(obj.shape, x, y, yaw, lying);
        }
        if (obj.pose.translation().z() - obj.shape.boundingRadius() <= 0.0)
            malformed(p, "object must lie entirely in front of the camera");
        s.objects.push_back(std::move(obj));
    }
    return s;
}

} // namespace targetgrasp
