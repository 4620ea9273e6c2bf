#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "targetgrasp/error.hpp"

namespace targetgrasp {

/// Camera frame: z forward, x right, y down; image origin at the top-left
/// corner, pixel (i, j) covers [i, i+1) x [j, j+1).
using Point3 = Eigen::Vector3d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Pixel {
    double u = 0.0;
    double v = 0.0;
};

struct CameraIntrinsics {
    double fx = 615.0;
    double fy = 615.0;
    double cx = 320.0;
    double cy = 240.0;
    int width = 640;
    int height = 480;

    void validate() const
    {
        if (!(fx > 0.0) || !(fy > 0.0))
            fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
        if (width <= 0 || height <= 0)
            fail(ErrorCode::InvalidArgument, "image size must be positive");
        if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
            fail(ErrorCode::InvalidArgument, "principal point outside the image");
    }

    bool contains(const Pixel& px) const
    {
        return px.u >= 0.0 && px.u < width && px.v >= 0.0 && px.v < height;
    }
};

inline bool isFinite(const Point3& p)
{
    return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

inline constexpr double kRotationTolerance = 1e-9;

inline bool isRotation(const Mat3& r, double tol = kRotationTolerance)
{
    if (!r.allFinite())
        return false;
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

/// Rigid transform p -> rotation * p + translation.
class Pose {
public:
    Pose() = default;

    Pose(const Mat3& rotation, const Point3& translation) : rotation_(rotation), translation_(translation)
    {
        if (!isRotation(rotation_))
            fail(ErrorCode::InvalidArgument, "rotation is not orthonormal with det +1");
        if (!isFinite(translation_))
            fail(ErrorCode::InvalidArgument, "translation must be finite");
    }

    static Pose fromTranslation(const Point3& t) { return Pose(Mat3::Identity(), t); }

    /// Re-orthonormalizes a nearly orthonormal matrix before validating it.
    static Pose fromApproximate(const Mat3& rotation, const Point3& translation)
    {
        Eigen::Quaterniond q(rotation);
        q.normalize();
        return Pose(q.toRotationMatrix(), translation);
    }

    const Mat3& rotation() const { return rotation_; }
    const Point3& translation() const { return translation_; }

    Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }
    Vec3 applyDirection(const Vec3& d) const { return rotation_ * d; }

    Pose inverse() const
    {
        Pose out;
        out.rotation_ = rotation_.transpose();
        out.translation_ = -(out.rotation_ * translation_);
        return out;
    }

    /// (*this) * other: apply other first.
    Pose operator*(const Pose& other) const
    {
        Pose out;
        out.rotation_ = rotation_ * other.rotation_;
        out.translation_ = rotation_ * other.translation_ + translation_;
        return out;
    }

private:
    Mat3 rotation_ = Mat3::Identity();
    Point3 translation_ = Point3::Zero();
};

struct PointCloud {
    std::vector<Point3> points;
    std::optional<std::vector<int>> objectIds;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void validate() const
    {
        if (objectIds && objectIds->size() != points.size())
            fail(ErrorCode::InvalidArgument, "objectIds length differs from points length");
        for (const auto& p : points)
            if (!isFinite(p))
                fail(ErrorCode::InvalidArgument, "point cloud contains non-finite coordinates");
    }

    PointCloud subset(const std::vector<std::size_t>& indices) const
    {
        PointCloud out;
        out.points.reserve(indices.size());
        for (auto i : indices)
            out.points.push_back(points[i]);
        if (objectIds) {
            out.objectIds.emplace();
            out.objectIds->reserve(indices.size());
            for (auto i : indices)
                out.objectIds->push_back((*objectIds)[i]);
        }
        return out;
    }
};

/// Half-open pixel region [x1, x2) x [y1, y2).
struct BBox2D {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    bool valid() const
    {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 &&
               y1 < y2;
    }

    bool intersectsImage(const CameraIntrinsics& k) const
    {
        return valid() && x2 > 0.0 && y2 > 0.0 && x1 < k.width && y1 < k.height;
    }

    Pixel center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }

    bool operator==(const BBox2D&) const = default;
};

struct GripperModel {
    double maxWidth = 0.08;
    double fingerDepth = 0.03;
    double fingerThickness = 0.005;
    double palmClearance = 0.01;

    void validate() const
    {
        if (!(maxWidth > 0.0) || !(fingerDepth > 0.0) || !(fingerThickness > 0.0) || !(palmClearance > 0.0))
            fail(ErrorCode::InvalidArgument, "gripper dimensions must be positive");
    }
};

/// Gripper frame: closing axis = x (contactA -> contactB), approach axis = z.
struct GraspCandidate {
    Pose pose;
    double width = 0.0;
    double score = 0.0;
    Point3 contactA = Point3::Zero();
    Point3 contactB = Point3::Zero();

    const Point3& position() const { return pose.translation(); }
    Vec3 closingAxis() const { return pose.rotation().col(0); }
    Vec3 approachAxis() const { return pose.rotation().col(2); }
};

inline constexpr double kContactWidthTolerance = 1e-6;

inline bool isValid(const GraspCandidate& g, const GripperModel& gripper)
{
    return g.width > 0.0 && g.width <= gripper.maxWidth && g.score >= 0.0 && g.score <= 1.0 &&
           std::abs((g.contactA - g.contactB).norm() - g.width) <= kContactWidthTolerance;
}

/// Builds a candidate whose width is derived from the contacts, so the
/// contact/width invariant holds by construction.
inline GraspCandidate makeGrasp(const Pose& pose, const Point3& contactA, const Point3& contactB, double score)
{
    GraspCandidate g;
    g.pose = pose;
    g.contactA = contactA;
    g.contactB = contactB;
    g.width = (contactB - contactA).norm();
    g.score = score;
    return g;
}

inline Pixel project(const Point3& p, const CameraIntrinsics& k)
{
    if (!(p.z() > 0.0))
        fail(ErrorCode::NonPositiveDepth, "cannot project a point with z <= 0");
    return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

inline Point3 deproject(double u, double v, double depth, const CameraIntrinsics& k)
{
    if (!(depth > 0.0))
        fail(ErrorCode::NonPositiveDepth, "depth must be positive");
    return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

inline bool pixelInBBox(double u, double v, const BBox2D& b)
{
    return b.x1 <= u && u < b.x2 && b.y1 <= v && v < b.y2;
}

inline bool pixelInBBox(const Pixel& px, const BBox2D& b) { return pixelInBBox(px.u, px.v, b); }

/// True when p is in front of the camera and its projection falls inside b.
inline bool projectsInto(const Point3& p, const BBox2D& b, const CameraIntrinsics& k)
{
    return p.z() > 0.0 && pixelInBBox(project(p, k), b);
}

inline PointCloud transformCloud(const PointCloud& c, const Pose& t)
{
    PointCloud out;
    out.points.reserve(c.points.size());
    for (const auto& p : c.points)
        out.points.push_back(t.apply(p));
    out.objectIds = c.objectIds;
    return out;
}

/// Rotation about a unit axis; used by scene authoring and tests.
inline Mat3 axisAngle(const Vec3& axis, double angle)
{
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

} // namespace targetgrasp
