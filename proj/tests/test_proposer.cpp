#include "support.hpp"

#include "targetgrasp/proposer.hpp"

#include <algorithm>
#include <map>
#include <numeric>

using namespace targetgrasp;
using namespace targetgrasp::testing;

namespace {

/// Fibonacci samples of the camera-facing half of a sphere.
PointCloud frontHemisphere(const Point3& center, double r, int n)
{
    PointCloud c;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = -1.0 + (i + 0.5) / n; // in (-1, 0): toward the camera
        const double rho = std::sqrt(1.0 - z * z);
        const double th = golden * i;
        c.points.push_back(center + r * Vec3(rho * std::cos(th), rho * std::sin(th), z));
    }
    return c;
}

/// Plates at x = +-gap/2 facing each other, 0.06 m square, centered at depth 0.5.
PointCloud plates(double gap, double step = 0.005)
{
    return merge(sidePlate(-0.5 * gap, -0.03, 0.03, 0.47, 0.53, step),
                 sidePlate(0.5 * gap, -0.03, 0.03, 0.47, 0.53, step));
}

ProposerParams noPlane()
{
    ProposerParams p;
    p.removeSupportPlane = false;
    return p;
}

/// Exhaustive seed score over all pairs, same admissibility rule.
std::vector<double> bruteForceScores(const OrientedCloud& oc, const ProposerParams& params)
{
    const double minAnti = std::cos(params.antipodalAngleTol);
    std::vector<double> out(oc.size(), 0.0);
    for (std::size_t i = 0; i < oc.size(); ++i)
        for (std::size_t j = 0; j < oc.size(); ++j) {
            const Vec3 d = oc.cloud.points[j] - oc.cloud.points[i];
            const double len = d.norm();
            if (i == j || len > params.gripper.maxWidth || len <= 1e-9)
                continue;
            const double a = antipodality(oc.cloud.points[i], oc.normals[i], oc.cloud.points[j], oc.normals[j]);
            if (a >= minAnti)
                out[i] = std::max(out[i], a);
        }
    return out;
}

BBox2D randomBox(std::mt19937_64& rng, const CameraIntrinsics& k)
{
    std::uniform_real_distribution<double> u(0.0, k.width), v(0.0, k.height);
    double a = u(rng), b = u(rng), c = v(rng), d = v(rng);
    if (a > b)
        std::swap(a, b);
    if (c > d)
        std::swap(c, d);
    return {a, c, b + 1.0, d + 1.0};
}

std::vector<ScoredPoint> randomSeeds(std::mt19937_64& rng, std::size_t n)
{
    std::uniform_real_distribution<double> xy(-0.6, 0.6), z(0.3, 2.0), s(0.0, 1.0);
    std::vector<ScoredPoint> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = {Point3(xy(rng), xy(rng), z(rng)), -Vec3::UnitZ(), s(rng), i};
    return out;
}

GraspCandidate candidateAt(const Point3& p, double score, const Mat3& r = Mat3::Identity())
{
    return makeGrasp(Pose(r, p), p - 0.01 * r.col(0), p + 0.01 * r.col(0), score);
}

bool sameCandidate(const GraspCandidate& a, const GraspCandidate& b)
{
    return a.position() == b.position() && a.pose.rotation() == b.pose.rotation() && a.width == b.width;
}

} // namespace

// ---------------------------------------------------------------------------
// Normals

TEST(Normals, PlaneFacesCamera)
{
    const PointCloud c = planePatch(-0.1, 0.1, -0.1, 0.1, 1.0, 0.01);
    for (const auto& n : estimateNormals(c, 16))
        EXPECT_LT((n - Vec3(0, 0, -1)).norm(), 1e-3);
}

TEST(Normals, SphereMatchesAnalyticOutwardNormal)
{
    const Point3 center(0.05, -0.02, 0.6);
    const PointCloud c = frontHemisphere(center, 0.04, 3000);
    const auto normals = estimateNormals(c, 16);
    const double tol = std::cos(5.0 * std::numbers::pi / 180.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        // Visible surface: the outward normal (p - center) faces the camera.
        const Vec3 analytic = (c.points[i] - center).normalized();
        if (analytic.dot(-c.points[i].normalized()) < 0.2)
            continue; // grazing rim, neighborhoods are one-sided
        EXPECT_GE(normals[i].dot(analytic), tol) << i;
        EXPECT_LT(normals[i].dot(c.points[i]), 0.0);
    }
}

TEST(Normals, TooSmallCloud)
{
    PointCloud c;
    c.points = {{0, 0, 1}, {0.1, 0, 1}};
    EXPECT_ERROR_CODE(estimateNormals(c, 3), ErrorCode::CloudTooSmall);
    EXPECT_ERROR_CODE(estimateNormals(planePatch(0, 0.1, 0, 0.1, 1, 0.01), 2), ErrorCode::CloudTooSmall);
}

// ---------------------------------------------------------------------------
// Seed scoring

TEST(Seeds, ParallelPlatesMatchBruteForce)
{
    const auto params = noPlane();
    const OrientedCloud oc = orient(plates(0.05), params.kNeighbors);
    const auto oracle = bruteForceScores(oc, params);
    const auto seeds = scoreSeeds(oc, params);
    ASSERT_EQ(seeds.size(), oc.size());
    for (const auto& s : seeds) {
        EXPECT_NEAR(s.seedScore, oracle[s.sourceIndex], 1e-12);
        const Point3& p = oc.cloud.points[s.sourceIndex];
        const bool interior = std::abs(p.y()) < 0.025 && std::abs(p.z() - 0.5) < 0.025;
        if (interior) {
            EXPECT_GE(s.seedScore, 0.95);
        }
    }
    EXPECT_TRUE(std::is_sorted(seeds.begin(), seeds.end(),
                               [](const auto& a, const auto& b) { return a.seedScore > b.seedScore; }));
}

TEST(Seeds, SinglePlateHasNoPartner)
{
    for (const auto& s : scoreSeeds(sidePlate(0.0, -0.03, 0.03, 0.47, 0.53, 0.005), noPlane()))
        EXPECT_EQ(s.seedScore, 0.0);
}

TEST(Seeds, PlatesWiderThanGripperScoreZero)
{
    for (const auto& s : scoreSeeds(plates(0.10), noPlane()))
        EXPECT_EQ(s.seedScore, 0.0);
}

TEST(Seeds, TruncatedToLimit)
{
    auto params = noPlane();
    params.seedLimit = 7;
    EXPECT_EQ(scoreSeeds(plates(0.05), params).size(), 7u);
}

TEST(Seeds, SupportPlaneRemoved)
{
    // Dense table under a small block: the table is the dominant plane.
    const PointCloud table = planePatch(-0.2, 0.2, -0.2, 0.2, 0.8, 0.005);
    const PointCloud block = plates(0.04);
    const PointCloud kept = removeDominantPlane(merge(table, block), ProposerParams{});
    EXPECT_EQ(kept.size(), block.size());
}

// ---------------------------------------------------------------------------
// Box filter

TEST(Filter, MatchesNaiveProjectAndTest)
{
    std::mt19937_64 rng(2024);
    const CameraIntrinsics k;
    int nonEmpty = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto seeds = randomSeeds(rng, 400);
        const BBox2D box = randomBox(rng, k);
        std::vector<std::size_t> naive;
        for (const auto& s : seeds) {
            const double u = k.fx * s.point.x() / s.point.z() + k.cx;
            const double v = k.fy * s.point.y() / s.point.z() + k.cy;
            if (u >= box.x1 && u < box.x2 && v >= box.y1 && v < box.y2)
                naive.push_back(s.sourceIndex);
        }
        if (naive.empty()) {
            EXPECT_ERROR_CODE(filterByBBox(seeds, box, k, std::nullopt), ErrorCode::EmptyAfterFilter);
            continue;
        }
        ++nonEmpty;
        std::vector<std::size_t> got;
        for (const auto& s : filterByBBox(seeds, box, k, std::nullopt))
            got.push_back(s.sourceIndex);
        EXPECT_EQ(got, naive) << "trial " << trial;
    }
    EXPECT_GT(nonEmpty, 80);
}

TEST(Filter, FullImageKeepsSingleObject)
{
    const CameraIntrinsics k;
    const auto seeds = scoreSeeds(frontHemisphere({0, 0, 0.6}, 0.04, 800), noPlane());
    const auto out = filterByBBox(seeds, {0, 0, double(k.width), double(k.height)}, k, noPlane());
    ASSERT_EQ(out.size(), seeds.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        EXPECT_EQ(out[i].sourceIndex, seeds[i].sourceIndex);
}

TEST(Filter, KeepsFrontClusterOnly)
{
    const CameraIntrinsics k;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> xy(-0.03, 0.03), dz(0.0, 0.04), s(0.0, 1.0);
    std::vector<ScoredPoint> seeds;
    for (std::size_t i = 0; i < 600; ++i) {
        const double base = i % 3 == 0 ? 1.0 : 0.5; // rear object 0.5 m behind
        seeds.push_back({Point3(xy(rng), xy(rng), base + dz(rng)), -Vec3::UnitZ(), s(rng), i});
    }
    const BBox2D box{250, 170, 390, 310};
    const double tau = 0.02;

    std::vector<const ScoredPoint*> inside;
    for (const auto& sp : seeds)
        if (pixelInBBox(project(sp.point, k), box))
            inside.push_back(&sp);
    std::vector<double> z;
    for (auto* sp : inside)
        z.push_back(sp->point.z());
    std::sort(z.begin(), z.end());
    double hi = z.front();
    for (std::size_t i = 1; i < z.size() && z[i] - z[i - 1] <= tau; ++i)
        hi = z[i];
    std::vector<std::size_t> oracle;
    for (auto* sp : inside)
        if (sp->point.z() <= hi)
            oracle.push_back(sp->sourceIndex);

    std::vector<std::size_t> got;
    for (const auto& sp : filterByBBox(seeds, box, k, tau)) {
        got.push_back(sp.sourceIndex);
        EXPECT_LT(sp.point.z(), 0.6);
    }
    EXPECT_EQ(got, oracle);
    EXPECT_FALSE(got.empty());
}

TEST(Filter, EmptyRegion)
{
    const CameraIntrinsics k;
    const auto seeds = scoreSeeds(frontHemisphere({0, 0, 0.6}, 0.04, 400), noPlane());
    EXPECT_ERROR_CODE(filterByBBox(seeds, {0, 0, 40, 40}, k, noPlane()), ErrorCode::EmptyAfterFilter);
}

TEST(Filter, OutputProjectsInsideBox)
{
    std::mt19937_64 rng(77);
    const CameraIntrinsics k;
    for (int trial = 0; trial < 50; ++trial) {
        const auto seeds = randomSeeds(rng, 300);
        const BBox2D box = randomBox(rng, k);
        try {
            for (const auto& s : filterByBBox(seeds, box, k, 0.02))
                EXPECT_TRUE(pixelInBBox(project(s.point, k), box));
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::EmptyAfterFilter);
        }
    }
}

// ---------------------------------------------------------------------------
// Orientation generation

TEST(Orientations, OnePairGivesOneCandidatePerBin)
{
    OrientedCloud region;
    region.cloud.points = {{-0.02, 0, 0.5}, {0.02, 0, 0.5}};
    region.normals = {{1, 0, 0}, {-1, 0, 0}};
    region.grid = SpatialGrid(region.cloud.points, kGridCell);
    const std::vector<ScoredPoint> seeds{{region.cloud.points[0], region.normals[0], 1.0, 0}};
    ProposerParams params;
    params.approachBins = 8;
    const auto cands = proposeOrientations(seeds, region, params);
    ASSERT_EQ(cands.size(), 8u);
    for (const auto& g : cands) {
        EXPECT_DOUBLE_EQ(g.width, cands.front().width);
        EXPECT_NEAR(g.width, 0.04, 1e-12);
        EXPECT_NEAR(g.closingAxis().dot(Vec3::UnitX()), 1.0, 1e-12);
        EXPECT_NEAR(g.approachAxis().dot(g.closingAxis()), 0.0, 1e-12);
        EXPECT_DOUBLE_EQ(g.score, 1.0);
    }
    for (std::size_t i = 1; i < cands.size(); ++i)
        EXPECT_LT(cands[i].approachAxis().dot(cands[0].approachAxis()), 1.0 - 1e-6);
}

TEST(Orientations, PlateClosingAxisFollowsPlateNormal)
{
    const auto params = noPlane();
    const OrientedCloud oc = orient(plates(0.05), params.kNeighbors);
    const auto cands = proposeOrientations(scoreSeeds(oc, params), oc, params);
    ASSERT_FALSE(cands.empty());
    for (const auto& g : cands) {
        EXPECT_GE(std::abs(g.closingAxis().x()), std::cos(params.antipodalAngleTol));
        EXPECT_GT(g.width, 0.0);
        EXPECT_LE(g.width, params.gripper.maxWidth);
        EXPECT_TRUE(isValid(g, params.gripper));
    }
}

TEST(Orientations, NoPartnerOrNoSeeds)
{
    const auto params = noPlane();
    const OrientedCloud oc = orient(sidePlate(0.0, -0.03, 0.03, 0.47, 0.53, 0.005), params.kNeighbors);
    EXPECT_ERROR_CODE(proposeOrientations(scoreSeeds(oc, params), oc, params), ErrorCode::NoCandidates);
    EXPECT_ERROR_CODE(proposeOrientations({}, oc, params), ErrorCode::NoCandidates);
}

// ---------------------------------------------------------------------------
// Refinement

namespace {

struct NaiveRefine {
    bool collided = false;
    std::size_t corridor = 0;
};

/// Per-point classification against the gripper body, written out from the
/// gripper dimensions without the grid.
NaiveRefine naiveRefine(const GraspCandidate& g, const PointCloud& c, const ProposerParams& p)
{
    const Point3 mid = 0.5 * (g.contactA + g.contactB);
    const Mat3 r = g.pose.rotation();
    const double inner = 0.5 * g.width + p.jawClearance;
    const double outer = inner + p.gripper.fingerThickness;
    const double halfT = 0.5 * p.gripper.fingerThickness;
    const double palm = -p.gripper.fingerDepth;
    const double back = palm - p.gripper.palmClearance;
    NaiveRefine out;
    for (const auto& q : c.points) {
        const double x = r.col(0).dot(q - mid), y = r.col(1).dot(q - mid), z = r.col(2).dot(q - mid);
        const bool finger = std::abs(x) >= inner && std::abs(x) <= outer && std::abs(y) <= halfT && z >= palm &&
                            z <= halfT;
        const bool slab = std::abs(x) <= outer && std::abs(y) <= halfT && z >= back && z < palm;
        if (finger || slab)
            out.collided = true;
        if (std::abs(x) <= outer && std::abs(y) <= p.corridorHalfWidth && z < back && z >= back - p.corridorLength)
            ++out.corridor;
    }
    return out;
}

} // namespace

TEST(Refine, WallThroughFingersDiscarded)
{
    const ProposerParams params;
    const GraspCandidate g = makeGrasp(Pose(Mat3::Identity(), {0, 0, 0.5}), {-0.02, 0, 0.5}, {0.02, 0, 0.5}, 0.8);
    PointCloud cloud;
    cloud.points = {g.contactA, g.contactB};
    EXPECT_EQ(refine({g}, cloud, params).size(), 1u);
    // Sheet of points crossing the fingers 2 cm behind the contacts.
    cloud = merge(cloud, planePatch(-0.05, 0.05, -0.05, 0.05, 0.48, 0.004));
    EXPECT_TRUE(refine({g}, cloud, params).empty());
}

TEST(Refine, IsolatedObjectMatchesBruteForce)
{
    const auto params = noPlane();
    const PointCloud ball = frontHemisphere({0.0, 0.0, 0.55}, 0.025, 1500);
    const OrientedCloud oc = orient(ball, params.kNeighbors);
    auto seeds = scoreSeeds(oc, params);
    seeds.resize(std::min<std::size_t>(seeds.size(), 60));
    const auto cands = proposeOrientations(seeds, oc, params);
    const auto refined = refine(cands, ball, params);

    std::size_t expectedSurvivors = 0, free = 0;
    std::size_t j = 0;
    for (const auto& g : cands) {
        const auto naive = naiveRefine(g, ball, params);
        if (naive.collided)
            continue;
        ++expectedSurvivors;
        ASSERT_LT(j, refined.size());
        const auto& r = refined[j++];
        EXPECT_EQ(r.pose.rotation(), g.pose.rotation());
        EXPECT_LT((r.position() - 0.5 * (g.contactA + g.contactB)).norm(), 1e-12);
        const double expected =
            g.score * (1.0 - std::min(1.0, static_cast<double>(naive.corridor) / params.obstructionNorm));
        EXPECT_NEAR(r.score, expected, 1e-12);
        if (r.score >= 0.9 * g.score)
            ++free;
    }
    EXPECT_EQ(refined.size(), expectedSurvivors);
    EXPECT_GT(free, 0u);
}

TEST(Refine, CameraSideApproachKeepsScore)
{
    const auto params = noPlane();
    const PointCloud ball = frontHemisphere({0.0, 0.0, 0.55}, 0.025, 1500);
    // Closing along x through the center, approaching away from the camera.
    const GraspCandidate g = makeGrasp(Pose(Mat3::Identity(), {0, 0, 0.55}), {-0.025, 0, 0.55}, {0.025, 0, 0.55},
                                       0.7);
    const auto out = refine({g}, ball, params);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_GE(out[0].score, 0.9 * g.score);
}

TEST(Refine, EmptyInput)
{
    EXPECT_TRUE(refine({}, planePatch(0, 0.1, 0, 0.1, 1, 0.01), ProposerParams{}).empty());
}

// ---------------------------------------------------------------------------
// Selection

TEST(Select, Argmax)
{
    const std::vector<GraspCandidate> c{candidateAt({0, 0, 0.5}, 0.2), candidateAt({0.1, 0, 0.5}, 0.9),
                                        candidateAt({0.2, 0, 0.5}, 0.5)};
    EXPECT_EQ(selectBestIndex(c), 1u);
    EXPECT_EQ(selectBestIndex({c[2]}), 0u);
    EXPECT_ERROR_CODE(selectBest({}), ErrorCode::NoCandidates);
}

TEST(Select, TieGoesToNearerPosition)
{
    const std::vector<GraspCandidate> c{candidateAt({0, 0, 0.9}, 0.6), candidateAt({0, 0, 0.5}, 0.6)};
    EXPECT_EQ(selectBestIndex(c), 1u);
}

TEST(Select, PermutationAndScalingInvariant)
{
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> grid(0, 5);
    std::uniform_real_distribution<double> lam(0.01, 100.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<GraspCandidate> c;
        for (int i = 0; i < 6; ++i) {
            // Coarse scores and positions so exact ties in both occur.
            const Point3 p(0.05 * grid(rng), 0.05 * grid(rng), 0.5);
            c.push_back(candidateAt(p, 0.1 * grid(rng), randomRotation(rng)));
        }
        for (int i = 0; i < 2; ++i) // same seed, different approach
            c.push_back(candidateAt(c[i].position(), c[i].score, randomRotation(rng)));
        const GraspCandidate best = selectBest(c);
        for (const auto& g : c)
            EXPECT_GE(best.score, g.score);

        std::vector<std::size_t> perm(c.size());
        std::iota(perm.begin(), perm.end(), 0);
        int count = 0;
        do {
            if (count++ % 97 != 0)
                continue;
            std::vector<GraspCandidate> p;
            for (auto i : perm)
                p.push_back(c[i]);
            EXPECT_TRUE(sameCandidate(selectBest(p), best));
        } while (std::next_permutation(perm.begin(), perm.end()));

        for (int s = 0; s < 10; ++s) {
            const double l = lam(rng);
            auto scaled = c;
            for (auto& g : scaled)
                g.score *= l;
            EXPECT_TRUE(sameCandidate(selectBest(scaled), best));
        }
    }
}

TEST(Select, RankingStartsWithSelection)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> s(0.0, 1.0);
    std::vector<GraspCandidate> c;
    for (int i = 0; i < 40; ++i)
        c.push_back(candidateAt(randomVec(rng, -0.2, 0.2) + Vec3(0, 0, 0.6), s(rng)));
    const auto ranked = rankCandidates(c);
    EXPECT_TRUE(sameCandidate(ranked.front(), selectBest(c)));
    for (std::size_t i = 1; i < ranked.size(); ++i)
        EXPECT_GE(ranked[i - 1].score, ranked[i].score);
}

TEST(Params, Validation)
{
    ProposerParams p;
    EXPECT_NO_THROW(p.validate());
    p.kNeighbors = 2;
    EXPECT_ERROR_CODE(p.validate(), ErrorCode::InvalidArgument);
    p = {};
    p.antipodalAngleTol = std::numbers::pi / 2;
    EXPECT_ERROR_CODE(p.validate(), ErrorCode::InvalidArgument);
    p = {};
    p.orientationSeeds = 0;
    EXPECT_ERROR_CODE(p.validate(), ErrorCode::InvalidArgument);
    p = {};
    p.gripper.maxWidth = -1;
    EXPECT_ERROR_CODE(p.validate(), ErrorCode::InvalidArgument);
}
