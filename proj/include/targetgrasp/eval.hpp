#pragma once

// Six-dimension scenario suites: corpus files, per-case checks and reports.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "targetgrasp/detect.hpp"
#include "targetgrasp/error.hpp"
#include "targetgrasp/grasp_oracle.hpp"
#include "targetgrasp/pipeline.hpp"

namespace targetgrasp {

inline const std::vector<std::string>& suiteDimensions()
{
    static const std::vector<std::string> d = {"common", "vague", "direction", "complex", "erroneous", "irrelevant"};
    return d;
}

inline bool isDimension(const std::string& d)
{
    const auto& all = suiteDimensions();
    return std::find(all.begin(), all.end(), d) != all.end();
}

struct SuiteCase {
    std::string id;
    std::string dimension;
    std::string scene; // path to a scene spec, resolved against the corpus file
    std::string instruction;
    TriageKind expected = TriageKind::Target;
    std::optional<int> expectedObjectId;
};

struct CaseRecord {
    SuiteCase spec;
    TriageKind triage = TriageKind::Irrelevant;
    bool triageCorrect = false;
    std::optional<bool> targetCorrect; // n/a unless a target is expected
    std::optional<bool> graspSuccess;
    bool proposerInvoked = false;
    bool filterSound = true; // kept seeds and contacts inside the triage box
    std::size_t keptSeeds = 0;
    json outcome;
};

struct DimensionSummary {
    std::size_t cases = 0;
    std::size_t triageCorrect = 0;
    std::size_t targeted = 0; // cases expecting a target
    std::size_t targetCorrect = 0;
    std::size_t graspSuccess = 0;
    std::size_t suspended = 0;
    std::size_t proposerInvocations = 0;
    std::size_t filterUnsound = 0;
    std::size_t emptyReplies = 0;
};

struct SuiteReport {
    std::vector<CaseRecord> records;
    std::map<std::string, DimensionSummary> summaries;

    bool allTriageCorrect() const
    {
        return std::all_of(records.begin(), records.end(), [](const CaseRecord& r) { return r.triageCorrect; });
    }
};

inline DimensionSummary summarize(const std::vector<CaseRecord>& records, const std::string& dimension)
{
    DimensionSummary s;
    for (const auto& r : records) {
        if (r.spec.dimension != dimension)
            continue;
        ++s.cases;
        s.triageCorrect += r.triageCorrect;
        if (r.spec.expected == TriageKind::Target) {
            ++s.targeted;
            s.targetCorrect += r.targetCorrect.value_or(false);
            s.graspSuccess += r.graspSuccess.value_or(false);
        }
        if (r.outcome.value("outcome", "") == "Suspended") {
            ++s.suspended;
            if (r.outcome.value("message", "").empty())
                ++s.emptyReplies;
        }
        s.proposerInvocations += r.proposerInvoked;
        s.filterUnsound += !r.filterSound;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Corpus files

inline TriageKind triageKindFromString(const std::string& s, const std::string& path)
{
    for (auto k : {TriageKind::Target, TriageKind::NoTarget, TriageKind::Irrelevant})
        if (s == toString(k))
            return k;
    fail(ErrorCode::MalformedSpec, path + ": unknown category '" + s + "'");
}

/// Corpus file: a JSON list of cases. Scene paths are relative to the file.
inline std::vector<SuiteCase> loadCorpus(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::CorpusNotFound, "cannot open corpus " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedSpec, path + ": " + e.what());
    }
    if (!j.is_array())
        fail(ErrorCode::MalformedSpec, path + ": expected a list of cases");
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<SuiteCase> out;
    for (std::size_t n = 0; n < j.size(); ++n) {
        const auto& c = j[n];
        const std::string p = path + "[" + std::to_string(n) + "]";
        auto str = [&](const char* key) {
            if (!c.is_object() || !c.contains(key) || !c.at(key).is_string())
                fail(ErrorCode::MalformedSpec, p + "." + key + ": expected a string");
            return c.at(key).get<std::string>();
        };
        SuiteCase sc;
        sc.id = str("id");
        sc.dimension = str("dimension");
        if (!isDimension(sc.dimension))
            fail(ErrorCode::MalformedSpec, p + ".dimension: unknown dimension '" + sc.dimension + "'");
        sc.scene = (base / str("scene")).lexically_normal().string();
        sc.instruction = str("instruction");
        if (!c.contains("expected") || !c.at("expected").is_object())
            fail(ErrorCode::MalformedSpec, p + ".expected: expected an object");
        const auto& e = c.at("expected");
        if (!e.contains("category") || !e.at("category").is_string())
            fail(ErrorCode::MalformedSpec, p + ".expected.category: expected a string");
        sc.expected = triageKindFromString(e.at("category").get<std::string>(), p + ".expected.category");
        if (e.contains("objectId") && !e.at("objectId").is_null())
            sc.expectedObjectId = e.at("objectId").get<int>();
        if (sc.expected != TriageKind::Target && sc.expectedObjectId)
            fail(ErrorCode::MalformedSpec, p + ".expected.objectId: only Target cases name an object");
        if (sc.expected == TriageKind::Target && !sc.expectedObjectId)
            fail(ErrorCode::MalformedSpec, p + ".expected.objectId: Target cases need an object id");
        out.push_back(std::move(sc));
    }
    return out;
}

inline std::string corpusPath(const std::string& corpusDir, const std::string& dimension)
{
    return (std::filesystem::path(corpusDir) / (dimension + ".json")).string();
}

// ---------------------------------------------------------------------------
// Running

struct SuiteOptions {
    SessionConfig session;
    double contactPixelTolerance = 1.0;
};

/// Counter clock so suite transcripts are reproducible.
inline Clock stepClock()
{
    auto t = std::make_shared<double>(0.0);
    return [t] { return *t += 1.0; };
}

class SceneCache {
public:
    std::shared_ptr<const SceneData> get(const std::string& path)
    {
        std::lock_guard lock(mutex_);
        if (auto it = scenes_.find(path); it != scenes_.end())
            return it->second;
        auto d = SceneData::fromSpecFile(path);
        scenes_.emplace(path, d);
        return d;
    }

private:
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const SceneData>> scenes_;
};

inline bool nearBox(const Point3& p, const BBox2D& b, const CameraIntrinsics& k, double tol)
{
    if (!(p.z() > 0.0))
        return false;
    const Pixel q = project(p, k);
    return q.u >= b.x1 - tol && q.u < b.x2 + tol && q.v >= b.y1 - tol && q.v < b.y2 + tol;
}

inline CaseRecord runCase(const SuiteCase& c, Detector& detector, const SuiteOptions& opts, SceneCache& cache)
{
    CaseRecord r;
    r.spec = c;
    const auto data = cache.get(c.scene);
    const auto run = runSession(Instruction(c.instruction), data, detector, opts.session, true, c.id, nullptr,
                                stepClock());
    const auto& st = run.state;
    r.outcome = run.outcome.toJson();
    r.proposerInvoked = proposerInvoked(st.transcript);
    r.triage = st.triage ? st.triage->kind() : TriageKind::Irrelevant;
    r.triageCorrect = st.triage && st.triage->kind() == c.expected;
    if (st.triage && st.triage->isTarget()) {
        const BBox2D& box = st.triage->bbox();
        const auto& params = opts.session.proposer;
        if (!params.cropBeforeScoring) {
            try {
                const auto kept = filterByBBox(data->prepare(params)->seeds, box, data->camera, params);
                r.keptSeeds = kept.size();
                for (const auto& s : kept)
                    r.filterSound = r.filterSound && projectsInto(s.point, box, data->camera);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::EmptyAfterFilter)
                    throw;
            }
        }
        for (const auto& g : st.candidates)
            r.filterSound = r.filterSound && nearBox(g.contactA, box, data->camera, opts.contactPixelTolerance) &&
                            nearBox(g.contactB, box, data->camera, opts.contactPixelTolerance);
    }
    if (c.expected == TriageKind::Target) {
        r.targetCorrect = false;
        r.graspSuccess = false;
        if (st.selected && data->scene) {
            const double tol = opts.session.oracle.contactTolerance;
            const auto a = nearestObjectSurface(*data->scene, st.selected->contactA);
            const auto b = nearestObjectSurface(*data->scene, st.selected->contactB);
            r.targetCorrect = a.distance <= tol && b.distance <= tol && a.objectId == *c.expectedObjectId &&
                              b.objectId == *c.expectedObjectId;
            r.graspSuccess = st.execution == ExecutionResult::Success;
        }
    }
    return r;
}

inline SuiteReport runCases(const std::vector<SuiteCase>& cases, Detector& detector, const SuiteOptions& opts,
                            SceneCache& cache)
{
    SuiteReport rep;
    for (const auto& c : cases)
        rep.records.push_back(runCase(c, detector, opts, cache));
    for (const auto& d : suiteDimensions()) {
        const auto s = summarize(rep.records, d);
        if (s.cases > 0)
            rep.summaries[d] = s;
    }
    return rep;
}

/// Runs the corpus for one dimension from `corpusDir`.
inline SuiteReport runSuite(const std::string& dimension, const std::string& corpusDir, Detector& detector,
                            const SuiteOptions& opts, SceneCache* cache = nullptr)
{
    if (!isDimension(dimension))
        fail(ErrorCode::CorpusNotFound, "unknown dimension '" + dimension + "'");
    SceneCache local;
    auto cases = loadCorpus(corpusPath(corpusDir, dimension));
    for (const auto& c : cases)
        if (c.dimension != dimension)
            fail(ErrorCode::MalformedSpec, "case " + c.id + " belongs to dimension " + c.dimension);
    return runCases(cases, detector, opts, cache ? *cache : local);
}

inline SuiteReport runAllSuites(const std::string& corpusDir, Detector& detector, const SuiteOptions& opts)
{
    SceneCache cache;
    SuiteReport all;
    for (const auto& d : suiteDimensions()) {
        auto rep = runSuite(d, corpusDir, detector, opts, &cache);
        all.records.insert(all.records.end(), rep.records.begin(), rep.records.end());
        all.summaries.insert(rep.summaries.begin(), rep.summaries.end());
    }
    return all;
}

// ---------------------------------------------------------------------------
// Export

inline json optionalBool(const std::optional<bool>& b) { return b ? json(*b) : json(nullptr); }

inline double ratio(std::size_t a, std::size_t b) { return b == 0 ? 1.0 : static_cast<double>(a) / b; }

inline json reportJson(const SuiteReport& rep)
{
    json dims = json::array();
    for (const auto& d : suiteDimensions()) {
        const auto it = rep.summaries.find(d);
        if (it == rep.summaries.end())
            continue;
        const auto& s = it->second;
        json cases = json::array();
        for (const auto& r : rep.records) {
            if (r.spec.dimension != d)
                continue;
            cases.push_back({{"id", r.spec.id},
                             {"scene", std::filesystem::path(r.spec.scene).filename().string()},
                             {"instruction", r.spec.instruction},
                             {"expectedCategory", toString(r.spec.expected)},
                             {"expectedObjectId", r.spec.expectedObjectId ? json(*r.spec.expectedObjectId) : json(nullptr)},
                             {"triageCategory", toString(r.triage)},
                             {"triageCorrect", r.triageCorrect},
                             {"targetCorrect", optionalBool(r.targetCorrect)},
                             {"graspSuccess", optionalBool(r.graspSuccess)},
                             {"proposerInvoked", r.proposerInvoked},
                             {"filterSound", r.filterSound},
                             {"keptSeeds", r.keptSeeds},
                             {"outcome", r.outcome}});
        }
        dims.push_back({{"dimension", d},
                        {"cases", s.cases},
                        {"triageCorrect", s.triageCorrect},
                        {"targeted", s.targeted},
                        {"targetCorrect", s.targetCorrect},
                        {"graspSuccess", s.graspSuccess},
                        {"graspSuccessRate", ratio(s.graspSuccess, s.targeted)},
                        {"suspended", s.suspended},
                        {"proposerInvocations", s.proposerInvocations},
                        {"filterUnsound", s.filterUnsound},
                        {"records", std::move(cases)}});
    }
    return {{"dimensions", std::move(dims)}, {"allTriageCorrect", rep.allTriageCorrect()}};
}

inline std::string reportText(const SuiteReport& rep)
{
    std::ostringstream out;
    out << std::left << std::setw(11) << "dimension" << std::right << std::setw(6) << "cases" << std::setw(8)
        << "triage" << std::setw(8) << "target" << std::setw(8) << "grasp" << std::setw(11) << "suspended"
        << std::setw(10) << "proposer" << "\n";
    for (const auto& d : suiteDimensions()) {
        const auto it = rep.summaries.find(d);
        if (it == rep.summaries.end())
            continue;
        const auto& s = it->second;
        auto frac = [](std::size_t a, std::size_t b) { return std::to_string(a) + "/" + std::to_string(b); };
        out << std::left << std::setw(11) << d << std::right << std::setw(6) << s.cases << std::setw(8)
            << frac(s.triageCorrect, s.cases) << std::setw(8) << (s.targeted ? frac(s.targetCorrect, s.targeted) : "-")
            << std::setw(8) << (s.targeted ? frac(s.graspSuccess, s.targeted) : "-") << std::setw(11) << s.suspended
            << std::setw(10) << s.proposerInvocations << "\n";
    }
    for (const auto& r : rep.records)
        if (!r.triageCorrect || r.targetCorrect == false || r.graspSuccess == false || !r.filterSound)
            out << "  " << r.spec.id << ": expected " << toString(r.spec.expected) << ", got "
                << toString(r.triage) << (r.targetCorrect == false ? ", wrong/no target grasp" : "")
                << (r.graspSuccess == false ? ", grasp failed" : "") << (!r.filterSound ? ", filter unsound" : "")
                << "\n";
    return out.str();
}

} // namespace targetgrasp
