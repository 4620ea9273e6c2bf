#pragma once

// Simulated execution: a grasp succeeds when both contacts sit on the same
// object and each lies inside its friction cone along the closing line.

#include <cmath>
#include <limits>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/scene.hpp"

namespace targetgrasp {

struct GraspOracleParams {
    double mu = 0.5;
    double contactTolerance = 0.003;

    void validate() const
    {
        if (!(mu > 0.0))
            fail(ErrorCode::InvalidArgument, "friction coefficient must be positive");
        if (!(contactTolerance > 0.0))
            fail(ErrorCode::InvalidArgument, "contact tolerance must be positive");
    }
};

struct ContactQuery {
    int objectId = kBackgroundId;
    Vec3 outwardNormal = Vec3::Zero(); // camera frame
    double distance = std::numeric_limits<double>::infinity();
};

/// Nearest object surface to p among scene objects (the table excluded).
inline ContactQuery nearestObjectSurface(const Scene& s, const Point3& p)
{
    ContactQuery best;
    for (const auto& o : s.objects) {
        const auto q = shapes::closestSurface(o.shape, o.pose.inverse().apply(p));
        if (q.distance < best.distance || (q.distance == best.distance && o.id < best.objectId))
            best = {o.id, o.pose.applyDirection(q.normal), q.distance};
    }
    return best;
}

struct GraspVerdict {
    bool success = false;
    int objectA = kBackgroundId;
    int objectB = kBackgroundId;
    double angleA = 0.0; // radians between inward normal and closing line
    double angleB = 0.0;
    std::string reason;
};

inline GraspVerdict judgeGrasp(const Scene& s, const GraspCandidate& g, const GripperModel& gripper,
                               const GraspOracleParams& params = {})
{
    params.validate();
    GraspVerdict v;
    const auto a = nearestObjectSurface(s, g.contactA);
    const auto b = nearestObjectSurface(s, g.contactB);
    if (a.distance <= params.contactTolerance)
        v.objectA = a.objectId;
    if (b.distance <= params.contactTolerance)
        v.objectB = b.objectId;
    const Vec3 ab = g.contactB - g.contactA;
    const double width = ab.norm();
    if (!(width > 0.0) || width > gripper.maxWidth) {
        v.reason = "width outside (0, maxWidth]";
        return v;
    }
    if (v.objectA == kBackgroundId || v.objectB == kBackgroundId) {
        v.reason = "contact not on an object surface";
        return v;
    }
    if (v.objectA != v.objectB) {
        v.reason = "contacts on different objects";
        return v;
    }
    const Vec3 d = ab / width;
    auto angle = [](const Vec3& x, const Vec3& y) { return std::acos(std::clamp(x.dot(y), -1.0, 1.0)); };
    // Finger A pushes along +d, finger B along -d; both must push inward.
    v.angleA = angle(-a.outwardNormal, d);
    v.angleB = angle(-b.outwardNormal, -d);
    const double cone = std::atan(params.mu);
    if (v.angleA > cone || v.angleB > cone) {
        v.reason = "contact outside the friction cone";
        return v;
    }
    v.success = true;
    return v;
}

inline bool graspSuccess(const Scene& s, const GraspCandidate& g, double mu, const GripperModel& gripper = {})
{
    GraspOracleParams p;
    p.mu = mu;
    return judgeGrasp(s, g, gripper, p).success;
}

} // namespace targetgrasp
