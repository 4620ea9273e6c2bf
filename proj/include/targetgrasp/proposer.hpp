#pragma once

// Analytic three-stage grasp proposer: seed scoring, the bounding-box point
// filter, orientation generation, and refinement with a collision check,
// followed by max-score selection.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/spatial_grid.hpp"

namespace targetgrasp {

struct ScoredPoint {
    Point3 point;
    Vec3 normal;
    double seedScore = 0.0;
    std::size_t sourceIndex = 0; // index into the cloud the seed was scored on
};

struct ProposerParams {
    int kNeighbors = 16;
    int approachBins = 8;
    double antipodalAngleTol = 30.0 * std::numbers::pi / 180.0;
    double depthClusterGap = 0.02;
    bool depthClustering = true;
    std::size_t seedLimit = 16384;
    std::size_t orientationSeeds = 512; // best kept seeds forwarded to orientation generation
    GripperModel gripper;

    // Refinement.
    double jawClearance = 0.002;   // finger inner faces sit this far outside each contact
    double corridorLength = 0.10;  // approach corridor behind the palm
    double corridorHalfWidth = 0.02;
    double obstructionNorm = 40.0; // corridor points that count as full obstruction

    // Support-plane removal before seed scoring.
    bool removeSupportPlane = true;
    double planeThreshold = 0.003;
    int planeIterations = 200;
    double planeMinInlierFraction = 0.3;
    std::uint64_t planeSeed = 7;

    // Ablation: crop the cloud to the box before seed scoring instead of
    // filtering the scored seeds.
    bool cropBeforeScoring = false;

    void validate() const
    {
        gripper.validate();
        if (kNeighbors < 3)
            fail(ErrorCode::InvalidArgument, "kNeighbors must be >= 3");
        if (approachBins < 1)
            fail(ErrorCode::InvalidArgument, "approachBins must be >= 1");
        if (!(antipodalAngleTol > 0.0 && antipodalAngleTol < 0.5 * std::numbers::pi))
            fail(ErrorCode::InvalidArgument, "antipodalAngleTol must be in (0, pi/2)");
        if (!(depthClusterGap > 0.0))
            fail(ErrorCode::InvalidArgument, "depthClusterGap must be positive");
        if (seedLimit == 0 || orientationSeeds == 0)
            fail(ErrorCode::InvalidArgument, "seedLimit and orientationSeeds must be positive");
        if (!(jawClearance >= 0.0) || !(corridorLength > 0.0) || !(corridorHalfWidth > 0.0) ||
            !(obstructionNorm > 0.0))
            fail(ErrorCode::InvalidArgument, "refinement parameters must be positive");
        if (!(planeThreshold > 0.0) || planeIterations < 1 || !(planeMinInlierFraction > 0.0))
            fail(ErrorCode::InvalidArgument, "plane removal parameters must be positive");
    }
};

/// A cloud with per-point unit normals and a neighbor index.
struct OrientedCloud {
    PointCloud cloud;
    std::vector<Vec3> normals;
    SpatialGrid grid;

    std::size_t size() const { return cloud.size(); }

    OrientedCloud subset(const std::vector<std::size_t>& indices, double cellSize = 0.02) const
    {
        OrientedCloud out;
        out.cloud = cloud.subset(indices);
        out.normals.reserve(indices.size());
        for (auto i : indices)
            out.normals.push_back(normals[i]);
        out.grid = SpatialGrid(out.cloud.points, cellSize);
        return out;
    }
};

inline constexpr double kGridCell = 0.02;

// ---------------------------------------------------------------------------
// Preprocessing

/// Per-point normal from the k-NN covariance (smallest eigenvector), oriented
/// toward the camera so that normal . point < 0.
inline std::vector<Vec3> estimateNormals(const PointCloud& c, int k, const SpatialGrid& grid)
{
    if (k < 3 || c.size() < static_cast<std::size_t>(k))
        fail(ErrorCode::CloudTooSmall,
             "need at least k >= 3 points (k=" + std::to_string(k) + ", size=" + std::to_string(c.size()) + ")");
    std::vector<Vec3> normals(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto nn = grid.nearest(c.points[i], static_cast<std::size_t>(k));
        Point3 mean = Point3::Zero();
        for (auto j : nn)
            mean += c.points[j];
        mean /= static_cast<double>(nn.size());
        Mat3 cov = Mat3::Zero();
        for (auto j : nn) {
            const Vec3 d = c.points[j] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es;
        es.computeDirect(cov);
        Vec3 n = es.eigenvectors().col(0).normalized();
        if (!n.allFinite())
            n = -c.points[i].normalized();
        if (n.dot(c.points[i]) > 0.0)
            n = -n;
        normals[i] = n;
    }
    return normals;
}

inline std::vector<Vec3> estimateNormals(const PointCloud& c, int k)
{
    if (k < 3 || c.size() < static_cast<std::size_t>(std::max(k, 3)))
        fail(ErrorCode::CloudTooSmall, "cloud smaller than k");
    return estimateNormals(c, k, SpatialGrid(c.points, kGridCell));
}

inline OrientedCloud orient(PointCloud c, int k)
{
    OrientedCloud out;
    out.grid = SpatialGrid(c.points, kGridCell);
    out.normals = estimateNormals(c, k, out.grid);
    out.cloud = std::move(c);
    return out;
}

/// Drops the dominant plane (the tabletop) found by seeded RANSAC when it
/// holds at least planeMinInlierFraction of the points.
inline PointCloud removeDominantPlane(const PointCloud& c, const ProposerParams& params)
{
    const std::size_t n = c.size();
    if (n < 3)
        return c;
    std::mt19937_64 rng(params.planeSeed);
    // Score hypotheses on a strided subsample; the final split uses all points.
    const std::size_t stride = std::max<std::size_t>(1, n / 20000);
    std::size_t bestCount = 0;
    Vec3 bestN = Vec3::UnitZ();
    double bestD = 0.0;
    for (int it = 0; it < params.planeIterations; ++it) {
        const Point3& a = c.points[rng() % n];
        const Point3& b = c.points[rng() % n];
        const Point3& d = c.points[rng() % n];
        Vec3 nrm = (b - a).cross(d - a);
        if (nrm.norm() < 1e-12)
            continue;
        nrm.normalize();
        const double off = -nrm.dot(a);
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; i += stride)
            if (std::abs(nrm.dot(c.points[i]) + off) <= params.planeThreshold)
                ++count;
        if (count > bestCount) {
            bestCount = count;
            bestN = nrm;
            bestD = off;
        }
    }
    std::vector<std::size_t> keep;
    keep.reserve(n);
    std::size_t inliers = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(bestN.dot(c.points[i]) + bestD) <= params.planeThreshold)
            ++inliers;
        else
            keep.push_back(i);
    }
    if (static_cast<double>(inliers) < params.planeMinInlierFraction * static_cast<double>(n))
        return c;
    return c.subset(keep);
}

// ---------------------------------------------------------------------------
// Seed scoring

/// min(|n_p . d|, |n_q . d|) with d the unit p -> q direction.
inline double antipodality(const Point3& p, const Vec3& np, const Point3& q, const Vec3& nq)
{
    const Vec3 d = (q - p).normalized();
    return std::min(std::abs(np.dot(d)), std::abs(nq.dot(d)));
}

namespace proposer_detail {

struct Partner {
    std::size_t index = 0;
    double antipodality = 0.0;
    bool found = false;
};

/// Best partner of p inside `oc`: antipodality >= cos(tol), 0 < |p - q| <= w_max.
/// Ties resolve to the smallest index.
inline Partner bestPartner(const Point3& p, const Vec3& np, const OrientedCloud& oc, const ProposerParams& params)
{
    const double wmax = params.gripper.maxWidth;
    const double minAnti = std::cos(params.antipodalAngleTol);
    Partner best;
    oc.grid.forEachCell(p, wmax, [&](const Point3& center, double halfDiag, std::span<const std::uint32_t> idx) {
        const Vec3 oc2 = center - p;
        const double dist = oc2.norm();
        if (dist - halfDiag > wmax)
            return;
        if (dist > halfDiag) {
            // Upper bound of |n_p . d| over the cell.
            const double bound = (std::abs(np.dot(oc2)) + halfDiag) / (dist - halfDiag);
            if (bound < minAnti || (best.found && bound < best.antipodality))
                return;
        }
        for (auto j : idx) {
            const Vec3 d = oc.cloud.points[j] - p;
            const double len = d.norm();
            if (!(len > 1e-9) || len > wmax)
                continue;
            const Vec3 u = d / len;
            const double a = std::min(std::abs(np.dot(u)), std::abs(oc.normals[j].dot(u)));
            if (a < minAnti)
                continue;
            if (!best.found || a > best.antipodality || (a == best.antipodality && j < best.index))
                best = {j, a, true};
        }
    });
    return best;
}

} // namespace proposer_detail

/// Seed score = best antipodality over admissible partners (0 when none),
/// sorted descending (ties by index) and truncated to seedLimit.
inline std::vector<ScoredPoint> scoreSeeds(const OrientedCloud& oc, const ProposerParams& params)
{
    if (oc.size() < 2)
        fail(ErrorCode::CloudTooSmall, "seed scoring needs at least two points");
    std::vector<ScoredPoint> seeds(oc.size());
    for (std::size_t i = 0; i < oc.size(); ++i) {
        const auto partner = proposer_detail::bestPartner(oc.cloud.points[i], oc.normals[i], oc, params);
        seeds[i] = {oc.cloud.points[i], oc.normals[i], partner.found ? partner.antipodality : 0.0, i};
    }
    std::stable_sort(seeds.begin(), seeds.end(),
                     [](const ScoredPoint& a, const ScoredPoint& b) { return a.seedScore > b.seedScore; });
    if (seeds.size() > params.seedLimit)
        seeds.resize(params.seedLimit);
    return seeds;
}

inline std::vector<ScoredPoint> scoreSeeds(const PointCloud& c, const ProposerParams& params)
{
    if (c.size() < static_cast<std::size_t>(params.kNeighbors))
        fail(ErrorCode::CloudTooSmall, "cloud smaller than kNeighbors");
    return scoreSeeds(orient(c, params.kNeighbors), params);
}

// ---------------------------------------------------------------------------
// Bounding-box filter (between seed scoring and orientation generation)

namespace proposer_detail {

/// Splits ascending depths into clusters at gaps > tau; returns [lo, hi] of
/// the cluster containing the smallest depth.
inline std::pair<double, double> nearestDepthCluster(std::vector<double> z, double tau)
{
    std::sort(z.begin(), z.end());
    std::size_t end = 1;
    while (end < z.size() && z[end] - z[end - 1] <= tau)
        ++end;
    return {z.front(), z[end - 1]};
}

} // namespace proposer_detail

/// Keeps seeds projecting inside the box, then (when clusterGap is set) only
/// the depth cluster nearest the camera. Relative order is preserved.
inline std::vector<ScoredPoint> filterByBBox(const std::vector<ScoredPoint>& seeds, const BBox2D& b,
                                             const CameraIntrinsics& k, std::optional<double> clusterGap)
{
    std::vector<ScoredPoint> inside;
    for (const auto& s : seeds)
        if (projectsInto(s.point, b, k))
            inside.push_back(s);
    if (inside.empty())
        fail(ErrorCode::EmptyAfterFilter, "no seed projects inside the detected box");
    if (!clusterGap)
        return inside;
    std::vector<double> z;
    z.reserve(inside.size());
    for (const auto& s : inside)
        z.push_back(s.point.z());
    const auto [lo, hi] = proposer_detail::nearestDepthCluster(std::move(z), *clusterGap);
    std::vector<ScoredPoint> out;
    for (const auto& s : inside)
        if (s.point.z() >= lo && s.point.z() <= hi)
            out.push_back(s);
    return out;
}

inline std::vector<ScoredPoint> filterByBBox(const std::vector<ScoredPoint>& seeds, const BBox2D& b,
                                             const CameraIntrinsics& k, const ProposerParams& params)
{
    return filterByBBox(seeds, b, k,
                        params.depthClustering ? std::optional<double>(params.depthClusterGap) : std::nullopt);
}

/// Cloud points inside the box whose depth cluster overlaps the kept seeds:
/// the partner region for orientation generation.
inline OrientedCloud cropToDetectedRange(const OrientedCloud& oc, const BBox2D& b, const CameraIntrinsics& k,
                                         const std::vector<ScoredPoint>& keptSeeds, const ProposerParams& params)
{
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < oc.size(); ++i)
        if (projectsInto(oc.cloud.points[i], b, k))
            inside.push_back(i);
    if (!params.depthClustering || keptSeeds.empty() || inside.empty())
        return oc.subset(inside);
    double seedLo = keptSeeds.front().point.z(), seedHi = seedLo;
    for (const auto& s : keptSeeds) {
        seedLo = std::min(seedLo, s.point.z());
        seedHi = std::max(seedHi, s.point.z());
    }
    std::vector<std::size_t> order = inside;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
        return oc.cloud.points[a].z() < oc.cloud.points[c].z();
    });
    std::vector<char> keep(oc.size(), 0);
    std::size_t begin = 0;
    while (begin < order.size()) {
        std::size_t end = begin + 1;
        while (end < order.size() &&
               oc.cloud.points[order[end]].z() - oc.cloud.points[order[end - 1]].z() <= params.depthClusterGap)
            ++end;
        const double lo = oc.cloud.points[order[begin]].z(), hi = oc.cloud.points[order[end - 1]].z();
        if (hi >= seedLo && lo <= seedHi)
            for (std::size_t i = begin; i < end; ++i)
                keep[order[i]] = 1;
        begin = end;
    }
    std::vector<std::size_t> out;
    for (auto i : inside)
        if (keep[i])
            out.push_back(i);
    return oc.subset(out);
}

// ---------------------------------------------------------------------------
// Orientation generation

/// Unit vectors orthogonal to `axis`, evenly spaced in angle, with a fixed
/// reference so the output is deterministic.
inline std::vector<Vec3> approachDirections(const Vec3& axis, int bins)
{
    Vec3 ref = Vec3::UnitZ();
    if (std::abs(axis.dot(ref)) > 0.9)
        ref = Vec3::UnitY();
    const Vec3 e1 = axis.cross(ref).normalized();
    const Vec3 e2 = axis.cross(e1).normalized();
    std::vector<Vec3> out;
    out.reserve(bins);
    for (int b = 0; b < bins; ++b) {
        const double th = 2.0 * std::numbers::pi * b / bins;
        out.push_back(std::cos(th) * e1 + std::sin(th) * e2);
    }
    return out;
}

inline Mat3 gripperRotation(const Vec3& closing, const Vec3& approach)
{
    Mat3 r;
    r.col(0) = closing;
    r.col(1) = approach.cross(closing);
    r.col(2) = approach;
    return r;
}

/// Pairs every seed with its best antipodal partner in `region` and emits one
/// candidate per approach bin (closing = x, approach = z), positioned at the seed.
inline std::vector<GraspCandidate> proposeOrientations(const std::vector<ScoredPoint>& seeds,
                                                       const OrientedCloud& region, const ProposerParams& params)
{
    if (seeds.empty())
        fail(ErrorCode::NoCandidates, "no seeds to orient");
    std::vector<GraspCandidate> out;
    for (const auto& s : seeds) {
        const auto partner = proposer_detail::bestPartner(s.point, s.normal, region, params);
        if (!partner.found)
            continue;
        const Point3& q = region.cloud.points[partner.index];
        const Vec3 closing = (q - s.point).normalized();
        const double score = std::clamp(s.seedScore * partner.antipodality, 0.0, 1.0);
        for (const auto& approach : approachDirections(closing, params.approachBins))
            out.push_back(makeGrasp(Pose::fromApproximate(gripperRotation(closing, approach), s.point), s.point, q,
                                    score));
    }
    if (out.empty())
        fail(ErrorCode::NoCandidates, "no seed has an antipodal partner in the detected range");
    return out;
}

inline std::vector<GraspCandidate> proposeOrientations(const std::vector<ScoredPoint>& seeds, const PointCloud& c,
                                                       const ProposerParams& params)
{
    return proposeOrientations(seeds, orient(c, params.kNeighbors), params);
}

// ---------------------------------------------------------------------------
// Refinement

/// Gripper body in the gripper frame: two finger boxes, the palm slab, the
/// jaw opening between the fingers, and the approach corridor behind the palm.
struct GripperVolumes {
    double inner;     // |x| of the finger inner faces
    double outer;     // |x| of the finger outer faces
    double halfY;     // finger/palm half extent along y
    double zTip;      // fingertip
    double zPalm;     // palm/finger junction
    double zBack;     // back of the palm
    double corridorHalfY;
    double zCorridorEnd;

    GripperVolumes(double width, const ProposerParams& params)
    {
        const auto& g = params.gripper;
        inner = 0.5 * width + params.jawClearance;
        outer = inner + g.fingerThickness;
        halfY = 0.5 * g.fingerThickness;
        zTip = 0.5 * g.fingerThickness;
        zPalm = -g.fingerDepth;
        zBack = zPalm - g.palmClearance;
        corridorHalfY = params.corridorHalfWidth;
        zCorridorEnd = zBack - params.corridorLength;
    }

    /// Camera-frame axis-aligned bounds of every volume for a gripper at `pose`.
    std::pair<Point3, Point3> bounds(const Mat3& r, const Point3& center) const
    {
        const Vec3 half(outer, std::max(halfY, corridorHalfY), 0.5 * (zTip - zCorridorEnd));
        const Point3 mid = center + r * Vec3(0.0, 0.0, 0.5 * (zTip + zCorridorEnd));
        const Vec3 ext = r.cwiseAbs() * half;
        return {mid - ext, mid + ext};
    }

    bool collides(const Point3& local) const
    {
        const double ax = std::abs(local.x());
        if (std::abs(local.y()) > halfY)
            return false;
        const double z = local.z();
        const bool finger = ax >= inner && ax <= outer && z >= zPalm && z <= zTip;
        const bool palm = ax <= outer && z >= zBack && z < zPalm;
        return finger || palm;
    }

    bool inCorridor(const Point3& local) const
    {
        return std::abs(local.x()) <= outer && std::abs(local.y()) <= corridorHalfY && local.z() < zBack &&
               local.z() >= zCorridorEnd;
    }
};

struct RefineStats {
    bool collided = false;
    std::size_t corridorPoints = 0;
};

/// Collision and corridor counts for one candidate centered at the contact
/// midpoint.
inline RefineStats evaluateGripper(const GraspCandidate& g, const SpatialGrid& grid, const ProposerParams& params)
{
    const Point3 center = 0.5 * (g.contactA + g.contactB);
    const GripperVolumes vol(g.width, params);
    const Mat3 rt = g.pose.rotation().transpose();
    RefineStats stats;
    const auto [lo, hi] = vol.bounds(g.pose.rotation(), center);
    grid.forEachCellInBox(lo, hi, [&](const Point3&, double, std::span<const std::uint32_t> idx) {
        if (stats.collided)
            return;
        for (auto i : idx) {
            const Point3 local = rt * (grid.point(i) - center);
            if (vol.collides(local)) {
                stats.collided = true;
                return;
            }
            if (vol.inCorridor(local))
                ++stats.corridorPoints;
        }
    });
    return stats;
}

/// Snaps centers to the contact midpoint, drops colliding candidates and
/// scales survivors by (1 - normalized corridor obstruction).
inline std::vector<GraspCandidate> refine(const std::vector<GraspCandidate>& cands, const SpatialGrid& grid,
                                          const ProposerParams& params)
{
    std::vector<GraspCandidate> out;
    for (const auto& c : cands) {
        GraspCandidate g = c;
        g.pose = Pose(c.pose.rotation(), 0.5 * (c.contactA + c.contactB));
        const auto stats = evaluateGripper(g, grid, params);
        if (stats.collided)
            continue;
        const double obstruction = std::min(1.0, static_cast<double>(stats.corridorPoints) / params.obstructionNorm);
        g.score = std::clamp(c.score * (1.0 - obstruction), 0.0, 1.0);
        out.push_back(g);
    }
    return out;
}

inline std::vector<GraspCandidate> refine(const std::vector<GraspCandidate>& cands, const PointCloud& c,
                                          const ProposerParams& params)
{
    return refine(cands, SpatialGrid(c.points, kGridCell), params);
}

// ---------------------------------------------------------------------------
// Selection

/// Total order used for selection: higher score first, then smaller
/// |position|, then lexicographically smaller position, rotation, width.
inline bool selectionBefore(const GraspCandidate& a, const GraspCandidate& b)
{
    if (a.score != b.score)
        return a.score > b.score;
    const double na = a.position().norm(), nb = b.position().norm();
    if (na != nb)
        return na < nb;
    const Point3 pa = a.position(), pb = b.position();
    if (pa != pb)
        return std::lexicographical_compare(pa.data(), pa.data() + 3, pb.data(), pb.data() + 3);
    const Mat3 ra = a.pose.rotation(), rb = b.pose.rotation();
    if (ra != rb)
        return std::lexicographical_compare(ra.data(), ra.data() + 9, rb.data(), rb.data() + 9);
    return a.width < b.width;
}

inline std::size_t selectBestIndex(const std::vector<GraspCandidate>& cands)
{
    if (cands.empty())
        fail(ErrorCode::NoCandidates, "no grasp candidates to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
        if (selectionBefore(cands[i], cands[best]))
            best = i;
    return best;
}

inline GraspCandidate selectBest(const std::vector<GraspCandidate>& cands) { return cands[selectBestIndex(cands)]; }

/// Candidates ordered by the selection order (best first).
inline std::vector<GraspCandidate> rankCandidates(std::vector<GraspCandidate> cands)
{
    std::stable_sort(cands.begin(), cands.end(), selectionBefore);
    return cands;
}

} // namespace targetgrasp
