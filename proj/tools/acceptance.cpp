// Acceptance checks: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: targetgrasp_acceptance <path to targetgrasp cli>

#include <Eigen/Dense>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "targetgrasp/eval.hpp"
#include "targetgrasp/grasp_oracle.hpp"

using namespace targetgrasp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

struct Result {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& why)
    {
        if (!ok && pass) {
            pass = false;
            detail = why;
        }
    }
};

Mat3 randomRotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

Vec3 randomVec(std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    return {u(rng), u(rng), u(rng)};
}

bool naiveInside(const Point3& p, const BBox2D& b, const CameraIntrinsics& k, double tol = 0.0)
{
    if (!(p.z() > 0.0))
        return false;
    const double u = k.fx * p.x() / p.z() + k.cx;
    const double v = k.fy * p.y() / p.z() + k.cy;
    return u >= b.x1 - tol && u < b.x2 + tol && v >= b.y1 - tol && v < b.y2 + tol;
}

Result geometryRoundTrips()
{
    Result r;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> xy(-2.0, 2.0), z(0.05, 5.0), px(0.0, 640.0), py(0.0, 480.0);
    const CameraIntrinsics k;
    double worst = 0.0;
    const auto start = Clock::now();
    for (int i = 0; i < 10000; ++i) {
        const Point3 p(xy(rng), xy(rng), z(rng));
        const Pixel q = project(p, k);
        worst = std::max(worst, (deproject(q.u, q.v, p.z(), k) - p).norm() / p.norm());
        const double a = px(rng), b = py(rng);
        const Pixel back = project(deproject(a, b, z(rng), k), k);
        worst = std::max(worst, std::hypot(back.u - a, back.v - b) / std::max(1.0, std::hypot(a, b)));
        const Pose t(randomRotation(rng), randomVec(rng, -1, 1));
        worst = std::max(worst, (t.inverse().apply(t.apply(p)) - p).norm() / p.norm());
        const Pose id = t * t.inverse();
        worst = std::max(worst, (id.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff());
        worst = std::max(worst, id.translation().norm());
    }
    const double elapsed = seconds(start);
    r.require(worst <= 1e-9, "worst relative error " + std::to_string(worst));
    r.require(elapsed < 1.0, "took " + std::to_string(elapsed) + " s");
    if (r.pass) {
        std::ostringstream d;
        d << "worst " << std::scientific << std::setprecision(2) << worst << ", " << std::fixed << elapsed << " s";
        r.detail = d.str();
    }
    return r;
}

Result filterOracle()
{
    Result r;
    std::mt19937_64 rng(12);
    const CameraIntrinsics k;
    std::uniform_real_distribution<double> xy(-0.6, 0.6), z(0.3, 2.0), s(0.0, 1.0), u(0.0, k.width),
        v(0.0, k.height);
    int empty = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ScoredPoint> seeds(500);
        for (std::size_t i = 0; i < seeds.size(); ++i)
            seeds[i] = {Point3(xy(rng), xy(rng), z(rng)), -Vec3::UnitZ(), s(rng), i};
        double a = u(rng), b = u(rng), c = v(rng), d = v(rng);
        if (a > b)
            std::swap(a, b);
        if (c > d)
            std::swap(c, d);
        const BBox2D box{a, c, b + 1.0, d + 1.0};
        std::set<std::size_t> naive, got;
        for (const auto& sp : seeds)
            if (naiveInside(sp.point, box, k))
                naive.insert(sp.sourceIndex);
        try {
            for (const auto& sp : filterByBBox(seeds, box, k, std::nullopt))
                got.insert(sp.sourceIndex);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyAfterFilter)
                throw;
            ++empty;
        }
        r.require(got == naive, "trial " + std::to_string(trial) + " differs");
    }
    if (r.pass)
        r.detail = "100 pairs, " + std::to_string(empty) + " empty";
    return r;
}

Result selection()
{
    Result r;
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> grid(0, 4);
    std::uniform_real_distribution<double> lam(0.001, 1000.0);
    auto same = [](const GraspCandidate& a, const GraspCandidate& b) {
        return a.position() == b.position() && a.pose.rotation() == b.pose.rotation() && a.width == b.width;
    };
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<GraspCandidate> c;
        for (int i = 0; i < 7; ++i) {
            const Mat3 rot = randomRotation(rng);
            const Point3 p(0.05 * grid(rng), 0.05 * grid(rng), 0.5);
            c.push_back(makeGrasp(Pose(rot, p), p - 0.01 * rot.col(0), p + 0.01 * rot.col(0), 0.1 * grid(rng)));
        }
        const GraspCandidate best = selectBest(c);
        const double top = std::max_element(c.begin(), c.end(), [](auto& a, auto& b) { return a.score < b.score; })->score;
        r.require(best.score == top, "selection is not the maximum score");
        std::vector<std::size_t> perm(c.size());
        std::iota(perm.begin(), perm.end(), 0);
        do {
            std::vector<GraspCandidate> p;
            for (auto i : perm)
                p.push_back(c[i]);
            r.require(same(selectBest(p), best), "permutation changed the selection");
        } while (std::next_permutation(perm.begin(), perm.end()));
        for (int s = 0; s < 20; ++s) {
            auto scaled = c;
            const double l = lam(rng);
            for (auto& g : scaled)
                g.score *= l;
            r.require(same(selectBest(scaled), best), "scaling changed the selection");
        }
    }
    if (r.pass)
        r.detail = "50 sets, all 5040 orders each";
    return r;
}

struct SuiteRun {
    SuiteReport report;
    double seconds = 0.0;
};

const SuiteRun& suiteRun()
{
    static const SuiteRun run = [] {
        OracleDetector d;
        const auto start = Clock::now();
        SuiteRun out;
        out.report = runAllSuites(TARGETGRASP_DATA_DIR "/corpora", d, {});
        out.seconds = seconds(start);
        return out;
    }();
    return run;
}

Result filterSoundness()
{
    Result r;
    const SessionConfig cfg;
    OracleDetector d;
    SceneCache cache;
    std::size_t seeds = 0, contacts = 0;
    for (const auto& dim : suiteDimensions())
        for (const auto& c : loadCorpus(corpusPath(TARGETGRASP_DATA_DIR "/corpora", dim))) {
            const auto data = cache.get(c.scene);
            const auto run = runSession(Instruction(c.instruction), data, d, cfg, true, c.id, nullptr, stepClock());
            if (!run.state.triage || !run.state.triage->isTarget())
                continue;
            const BBox2D box = run.state.triage->bbox();
            for (const auto& e : run.state.transcript)
                if (e.event == "proposer.filter")
                    r.require(e.payload.at("kept").get<std::size_t>() > 0, c.id + ": empty filter record");
            try {
                for (const auto& s : filterByBBox(data->prepare(cfg.proposer)->seeds, box, data->camera, cfg.proposer)) {
                    ++seeds;
                    r.require(naiveInside(s.point, box, data->camera), c.id + ": kept seed outside the box");
                }
            } catch (const Error& e) {
                if (e.code() != ErrorCode::EmptyAfterFilter)
                    throw;
            }
            for (const auto& g : run.state.candidates) {
                contacts += 2;
                r.require(naiveInside(g.contactA, box, data->camera, 1.0) &&
                              naiveInside(g.contactB, box, data->camera, 1.0),
                          c.id + ": contact outside the box");
            }
        }
    for (const auto& rec : suiteRun().report.records)
        r.require(rec.filterSound, rec.spec.id + ": suite flagged the filter");
    if (r.pass)
        r.detail = std::to_string(seeds) + " seeds, " + std::to_string(contacts) + " contacts";
    return r;
}

Result suites()
{
    Result r;
    const auto& run = suiteRun();
    std::ostringstream detail;
    for (const auto& dim : suiteDimensions()) {
        const auto it = run.report.summaries.find(dim);
        r.require(it != run.report.summaries.end(), dim + " missing");
        if (it == run.report.summaries.end())
            continue;
        const auto& s = it->second;
        r.require(s.cases >= 20, dim + ": fewer than 20 cases");
        r.require(s.triageCorrect == s.cases, dim + ": triage category wrong");
        if (dim == "erroneous" || dim == "irrelevant") {
            r.require(s.suspended == s.cases, dim + ": not every case suspended");
            r.require(s.proposerInvocations == 0, dim + ": proposer invoked");
            if (dim == "irrelevant")
                r.require(s.emptyReplies == 0, dim + ": empty reply");
            detail << dim << " " << s.suspended << "/" << s.cases << " suspended; ";
        } else {
            r.require(s.targetCorrect == s.targeted, dim + ": wrong target object");
            r.require(s.graspSuccess * 10 >= s.targeted * 9, dim + ": grasp success below 90%");
            detail << dim << " " << s.graspSuccess << "/" << s.targeted << " grasped; ";
        }
    }
    for (const auto& rec : run.report.records) {
        const auto& cat = rec.outcome.value("category", std::string());
        if (rec.spec.dimension == "erroneous")
            r.require(cat == "NoTarget", rec.spec.id + ": not NoTarget");
        if (rec.spec.dimension == "irrelevant")
            r.require(cat == "Irrelevant", rec.spec.id + ": not Irrelevant");
    }
    r.require(run.seconds < 120.0, "suites took " + std::to_string(run.seconds) + " s");
    if (r.pass)
        r.detail = detail.str() + std::to_string(run.seconds) + " s";
    return r;
}

SceneObject object(int id, const Shape& shape, const Pose& pose)
{
    SceneObject o;
    o.id = id;
    o.name = "obj" + std::to_string(id);
    o.shape = shape;
    o.pose = pose;
    return o;
}

Point3 surfacePoint(const SceneObject& o, const Vec3& localDir)
{
    const Vec3 d = localDir.normalized();
    double t = o.shape.radius;
    if (o.shape.kind == ShapeKind::Box) {
        t = 1e300;
        const Vec3 h(0.5 * o.shape.dx, 0.5 * o.shape.dy, 0.5 * o.shape.dz);
        for (int a = 0; a < 3; ++a)
            if (std::abs(d[a]) > 1e-12)
                t = std::min(t, h[a] / std::abs(d[a]));
    }
    return o.pose.apply(t * d);
}

Result graspOracle()
{
    Result r;
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0), mu(0.05, 2.0);
    int successes = 0;
    for (int n = 0; n < 1000; ++n) {
        auto shape = [&] {
            return u(rng) < 0.5 ? Shape::box(0.02 + 0.05 * u(rng), 0.02 + 0.05 * u(rng), 0.02 + 0.05 * u(rng))
                                : Shape::sphere(0.01 + 0.03 * u(rng));
        };
        Scene s;
        s.objects.push_back(object(1, shape(), Pose(randomRotation(rng), randomVec(rng, -0.05, 0.05) + Vec3(0, 0, 0.6))));
        s.objects.push_back(object(2, shape(), Pose(randomRotation(rng), Vec3(0.3, 0, 0.6))));
        const Vec3 dir = randomVec(rng, -1, 1);
        const Point3 a = surfacePoint(s.objects[0], dir);
        const Point3 b = surfacePoint(s.objects[0], -dir + 0.4 * u(rng) * randomVec(rng, -1, 1));
        const GraspCandidate g = makeGrasp(Pose(Mat3::Identity(), 0.5 * (a + b)), a, b, 1.0);
        const bool ok = graspSuccess(s, g, 0.5);
        successes += ok;

        const GraspCandidate swapped = makeGrasp(g.pose, b, a, 1.0);
        r.require(graspSuccess(s, swapped, 0.5) == ok, "swap changed case " + std::to_string(n));

        const Pose t(randomRotation(rng), randomVec(rng, -1, 1));
        Scene moved = s;
        for (auto& o : moved.objects)
            o.pose = t * o.pose;
        const GraspCandidate gm = makeGrasp(t * g.pose, t.apply(a), t.apply(b), 1.0);
        r.require(graspSuccess(moved, gm, 0.5) == ok, "rigid motion changed case " + std::to_string(n));

        double m1 = mu(rng), m2 = mu(rng);
        if (m1 > m2)
            std::swap(m1, m2);
        r.require(!graspSuccess(s, g, m1) || graspSuccess(s, g, m2), "friction not monotone in case " + std::to_string(n));
    }
    r.require(successes > 50 && successes < 950, "degenerate sample: " + std::to_string(successes) + " successes");
    if (r.pass)
        r.detail = "1000 cases, " + std::to_string(successes) + " successes";
    return r;
}

class Stub {
public:
    using Reply = std::function<void(int, httplib::Response&)>;
    explicit Stub(Reply reply) : reply_(std::move(reply))
    {
        server_.Post("/v1/chat", [this](const httplib::Request&, httplib::Response& res) { reply_(count_++, res); });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~Stub()
    {
        server_.stop();
        thread_.join();
    }
    RemoteEndpoint endpoint(int retries) const
    {
        RemoteEndpoint ep;
        ep.url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat";
        ep.retries = retries;
        ep.backoffSeconds = 0.0;
        ep.timeoutSeconds = 5.0;
        return ep;
    }
    int requests() const { return count_; }

private:
    httplib::Server server_;
    Reply reply_;
    std::atomic<int> count_{0};
    int port_ = 0;
    std::thread thread_;
};

std::optional<ErrorCode> codeOf(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

Result remoteAdapter()
{
    Result r;
    const RgbImage image(640, 480, {90, 90, 90});
    const Instruction mug("Give me the mug.");
    auto text = [](const std::string& t) {
        return [t](int, httplib::Response& res) { res.set_content(json{{"text", t}}.dump(), "application/json"); };
    };
    {
        Stub stub(text("<box>(100,100),(500,500)</box>"));
        const Triage t = remoteTriage(stub.endpoint(0), PromptSet::defaults(), mug, image);
        r.require(t.isTarget() && t.bbox() == BBox2D{64, 48, 320, 240}, "box token mapped to the wrong pixels");
    }
    {
        Stub stub(text("<box>(500,500),(100,100)</box>"));
        r.require(codeOf([&] { remoteTriage(stub.endpoint(2), PromptSet::defaults(), mug, image); }) ==
                      ErrorCode::MalformedBox,
                  "inverted box not rejected");
    }
    {
        Stub stub([](int, httplib::Response& res) { res.status = 500; });
        r.require(codeOf([&] { remoteTriage(stub.endpoint(2), PromptSet::defaults(), mug, image); }) ==
                      ErrorCode::BackendUnavailable,
                  "500s did not yield BackendUnavailable");
        r.require(stub.requests() == 3, "expected 3 attempts, saw " + std::to_string(stub.requests()));
    }
    if (r.pass)
        r.detail = "box mapping, inverted box, 3x500";
    return r;
}

std::optional<std::string> readFile(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        return std::nullopt;
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Result determinism(const std::string& cli)
{
    Result r;
    if (cli.empty()) {
        r.require(false, "no cli path given");
        return r;
    }
    const fs::path dir = fs::temp_directory_path() / ("targetgrasp_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::vector<std::string> reports;
    for (int run = 0; run < 2; ++run) {
        const fs::path out = dir / ("report" + std::to_string(run) + ".json");
        const std::string cmd = "\"" + cli + "\" suite --all --out \"" + out.string() + "\"";
        const int status = std::system(cmd.c_str());
        r.require(status == 0, "suite --all exited with status " + std::to_string(status));
        reports.push_back(readFile(out).value_or(""));
    }
    fs::remove_all(dir);
    r.require(!reports[0].empty(), "no report written");
    r.require(reports[0] == reports[1], "reports differ");
    if (r.pass) {
        const auto j = json::parse(reports[0]);
        r.require(j.at("dimensions").size() == 6, "report does not have six sections");
        r.detail = std::to_string(reports[0].size()) + " bytes, identical";
    }
    return r;
}

} // namespace

int main(int argc, char** argv)
{
    const std::string cli = argc > 1 ? argv[1] : "";
    const std::vector<std::pair<std::string, std::function<Result()>>> checks{
        {"geometry round trips", geometryRoundTrips},
        {"filter oracle equivalence", filterOracle},
        {"filter soundness", filterSoundness},
        {"selection invariance", selection},
        {"six-dimension suites", suites},
        {"grasp oracle properties", graspOracle},
        {"remote adapter conformance", remoteAdapter},
        {"suite determinism", [&] { return determinism(cli); }},
    };
    int failures = 0;
    for (const auto& [name, check] : checks) {
        Result r;
        try {
            r = check();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        failures += !r.pass;
        std::cout << (r.pass ? "PASS " : "FAIL ") << name << (r.detail.empty() ? "" : " (" + r.detail + ")") << "\n"
                  << std::flush;
    }
    return failures == 0 ? 0 : 1;
}
