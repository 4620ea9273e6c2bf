#pragma once

// JSON encodings of the value types exchanged with files, the transcript and
// the HTTP API.

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <string>

#include "targetgrasp/detect.hpp"
#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/grasp_oracle.hpp"
#include "targetgrasp/proposer.hpp"

namespace targetgrasp::jsonio {

using nlohmann::json;

[[noreturn]] inline void bad(const std::string& path, const std::string& what)
{
    fail(ErrorCode::InvalidArgument, path + ": " + what);
}

inline const json& member(const json& j, const std::string& key, const std::string& path)
{
    if (!j.is_object() || !j.contains(key))
        bad(path + "." + key, "missing");
    return j.at(key);
}

inline double num(const json& j, const std::string& path)
{
    if (!j.is_number())
        bad(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        bad(path, "must be finite");
    return v;
}

inline json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec(const json& j, const std::string& path)
{
    if (!j.is_array() || j.size() != 3)
        bad(path, "expected 3 numbers");
    return {num(j[0], path + "[0]"), num(j[1], path + "[1]"), num(j[2], path + "[2]")};
}

inline json bbox(const BBox2D& b) { return {{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}}; }

inline BBox2D bbox(const json& j, const std::string& path)
{
    BBox2D b{num(member(j, "x1", path), path + ".x1"), num(member(j, "y1", path), path + ".y1"),
             num(member(j, "x2", path), path + ".x2"), num(member(j, "y2", path), path + ".y2")};
    if (!b.valid())
        bad(path, "box needs x1 < x2 and y1 < y2");
    return b;
}

inline json rotation(const Mat3& r)
{
    json a = json::array();
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            a.push_back(r(i, k));
    return a;
}

inline Mat3 rotation(const json& j, const std::string& path)
{
    if (!j.is_array() || j.size() != 9)
        bad(path, "expected 9 numbers (row-major)");
    Mat3 r;
    for (int i = 0; i < 9; ++i)
        r(i / 3, i % 3) = num(j[i], path);
    return r;
}

inline json candidate(const GraspCandidate& g)
{
    return {{"position", vec(g.position())},
            {"rotation", rotation(g.pose.rotation())},
            {"width", g.width},
            {"score", g.score},
            {"contacts", json::array({vec(g.contactA), vec(g.contactB)})}};
}

inline GraspCandidate candidate(const json& j, const std::string& path = "candidate")
{
    const Mat3 r = rotation(member(j, "rotation", path), path + ".rotation");
    if (!isRotation(r))
        bad(path + ".rotation", "not orthonormal with det +1");
    const auto& c = member(j, "contacts", path);
    if (!c.is_array() || c.size() != 2)
        bad(path + ".contacts", "expected two points");
    GraspCandidate g = makeGrasp(Pose(r, vec(member(j, "position", path), path + ".position")),
                                 vec(c[0], path + ".contacts[0]"), vec(c[1], path + ".contacts[1]"),
                                 num(member(j, "score", path), path + ".score"));
    return g;
}

inline json candidates(const std::vector<GraspCandidate>& cs)
{
    json a = json::array();
    for (const auto& c : cs)
        a.push_back(candidate(c));
    return a;
}

inline json triage(const Triage& t)
{
    json j = {{"kind", toString(t.kind())}};
    if (t.isTarget()) {
        j["bbox"] = bbox(t.bbox());
        j["label"] = t.label();
        if (t.objectId)
            j["objectId"] = *t.objectId;
    } else {
        j["message"] = t.message();
    }
    return j;
}

inline Triage triage(const json& j, const std::string& path = "triage")
{
    const auto& k = member(j, "kind", path);
    if (!k.is_string())
        bad(path + ".kind", "expected a string");
    const auto kind = k.get<std::string>();
    if (kind == "Target") {
        Triage t = Triage::target(bbox(member(j, "bbox", path), path + ".bbox"), j.value("label", "target"));
        if (j.contains("objectId"))
            t.objectId = j.at("objectId").get<int>();
        return t;
    }
    const auto& m = member(j, "message", path);
    if (!m.is_string())
        bad(path + ".message", "expected a string");
    if (kind == "NoTarget")
        return Triage::noTarget(m.get<std::string>());
    if (kind == "Irrelevant")
        return Triage::irrelevant(m.get<std::string>());
    bad(path + ".kind", "unknown triage kind '" + kind + "'");
}

inline json camera(const CameraIntrinsics& k)
{
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics camera(const json& j, const std::string& path = "camera")
{
    CameraIntrinsics k;
    k.fx = num(member(j, "fx", path), path + ".fx");
    k.fy = num(member(j, "fy", path), path + ".fy");
    k.cx = num(member(j, "cx", path), path + ".cx");
    k.cy = num(member(j, "cy", path), path + ".cy");
    k.width = static_cast<int>(num(member(j, "width", path), path + ".width"));
    k.height = static_cast<int>(num(member(j, "height", path), path + ".height"));
    k.validate();
    return k;
}

inline json gripper(const GripperModel& g)
{
    return {{"maxWidth", g.maxWidth},
            {"fingerDepth", g.fingerDepth},
            {"fingerThickness", g.fingerThickness},
            {"palmClearance", g.palmClearance}};
}

inline GripperModel gripper(const json& j, const std::string& path = "gripper")
{
    GripperModel g;
    if (!j.is_object())
        bad(path, "expected an object");
    if (j.contains("maxWidth")) g.maxWidth = num(j.at("maxWidth"), path + ".maxWidth");
    if (j.contains("fingerDepth")) g.fingerDepth = num(j.at("fingerDepth"), path + ".fingerDepth");
    if (j.contains("fingerThickness")) g.fingerThickness = num(j.at("fingerThickness"), path + ".fingerThickness");
    if (j.contains("palmClearance")) g.palmClearance = num(j.at("palmClearance"), path + ".palmClearance");
    g.validate();
    return g;
}

inline constexpr double kDeg = std::numbers::pi / 180.0;

inline json proposer(const ProposerParams& p)
{
    return {{"kNeighbors", p.kNeighbors},
            {"approachBins", p.approachBins},
            {"antipodalAngleTolDeg", p.antipodalAngleTol / kDeg},
            {"depthClusterGap", p.depthClusterGap},
            {"depthClustering", p.depthClustering},
            {"seedLimit", p.seedLimit},
            {"orientationSeeds", p.orientationSeeds},
            {"jawClearance", p.jawClearance},
            {"corridorLength", p.corridorLength},
            {"corridorHalfWidth", p.corridorHalfWidth},
            {"obstructionNorm", p.obstructionNorm},
            {"removeSupportPlane", p.removeSupportPlane},
            {"planeThreshold", p.planeThreshold},
            {"planeIterations", p.planeIterations},
            {"planeMinInlierFraction", p.planeMinInlierFraction},
            {"planeSeed", p.planeSeed},
            {"cropBeforeScoring", p.cropBeforeScoring},
            {"gripper", gripper(p.gripper)}};
}

/// Unspecified fields keep their defaults.
inline ProposerParams proposer(const json& j, const std::string& path = "proposer")
{
    ProposerParams p;
    if (!j.is_object())
        bad(path, "expected an object");
    auto integer = [&](const char* key, auto& field) {
        if (!j.contains(key))
            return;
        if (!j.at(key).is_number_integer())
            bad(path + "." + key, "expected an integer");
        field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    auto real = [&](const char* key, double& field) {
        if (j.contains(key))
            field = num(j.at(key), path + "." + key);
    };
    auto flag = [&](const char* key, bool& field) {
        if (!j.contains(key))
            return;
        if (!j.at(key).is_boolean())
            bad(path + "." + key, "expected true or false");
        field = j.at(key).get<bool>();
    };
    integer("kNeighbors", p.kNeighbors);
    integer("approachBins", p.approachBins);
    if (j.contains("antipodalAngleTolDeg"))
        p.antipodalAngleTol = num(j.at("antipodalAngleTolDeg"), path + ".antipodalAngleTolDeg") * kDeg;
    real("depthClusterGap", p.depthClusterGap);
    flag("depthClustering", p.depthClustering);
    integer("seedLimit", p.seedLimit);
    integer("orientationSeeds", p.orientationSeeds);
    real("jawClearance", p.jawClearance);
    real("corridorLength", p.corridorLength);
    real("corridorHalfWidth", p.corridorHalfWidth);
    real("obstructionNorm", p.obstructionNorm);
    flag("removeSupportPlane", p.removeSupportPlane);
    real("planeThreshold", p.planeThreshold);
    integer("planeIterations", p.planeIterations);
    real("planeMinInlierFraction", p.planeMinInlierFraction);
    integer("planeSeed", p.planeSeed);
    flag("cropBeforeScoring", p.cropBeforeScoring);
    if (j.contains("gripper"))
        p.gripper = gripper(j.at("gripper"), path + ".gripper");
    p.validate();
    return p;
}

inline json oracle(const GraspOracleParams& o) { return {{"mu", o.mu}, {"contactTolerance", o.contactTolerance}}; }

inline GraspOracleParams oracle(const json& j, const std::string& path = "oracle")
{
    GraspOracleParams o;
    if (!j.is_object())
        bad(path, "expected an object");
    if (j.contains("mu")) o.mu = num(j.at("mu"), path + ".mu");
    if (j.contains("contactTolerance")) o.contactTolerance = num(j.at("contactTolerance"), path + ".contactTolerance");
    o.validate();
    return o;
}

} // namespace targetgrasp::jsonio
