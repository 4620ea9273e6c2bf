#pragma once

// Session state machine: instruction -> triage -> (filter -> orient -> refine
// -> select -> confirm/execute) or suspension with feedback. Every step is
// appended to a transcript that is enough to rebuild the session.

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "targetgrasp/detect.hpp"
#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/grasp_oracle.hpp"
#include "targetgrasp/image.hpp"
#include "targetgrasp/json_io.hpp"
#include "targetgrasp/ply.hpp"
#include "targetgrasp/proposer.hpp"
#include "targetgrasp/scene.hpp"

namespace targetgrasp {

using nlohmann::json;

enum class Phase { Idle, Triaged, CandidatesReady, AwaitingConfirm, Executed, Suspended };

inline const char* toString(Phase p)
{
    switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Triaged: return "Triaged";
    case Phase::CandidatesReady: return "CandidatesReady";
    case Phase::AwaitingConfirm: return "AwaitingConfirm";
    case Phase::Executed: return "Executed";
    case Phase::Suspended: return "Suspended";
    }
    return "?";
}

inline Phase phaseFromString(const std::string& s)
{
    for (Phase p : {Phase::Idle, Phase::Triaged, Phase::CandidatesReady, Phase::AwaitingConfirm, Phase::Executed,
                    Phase::Suspended})
        if (s == toString(p))
            return p;
    fail(ErrorCode::InvalidArgument, "unknown phase '" + s + "'");
}

inline bool isTerminal(Phase p) { return p == Phase::Executed || p == Phase::Suspended; }

enum class SuspendCategory {
    NoTarget,
    Irrelevant,
    EmptyAfterFilter,
    NoCandidates,
    UserAbort,
    BackendUnavailable,
    MalformedResponse
};

inline const char* toString(SuspendCategory c)
{
    switch (c) {
    case SuspendCategory::NoTarget: return "NoTarget";
    case SuspendCategory::Irrelevant: return "Irrelevant";
    case SuspendCategory::EmptyAfterFilter: return "EmptyAfterFilter";
    case SuspendCategory::NoCandidates: return "NoCandidates";
    case SuspendCategory::UserAbort: return "user-abort";
    case SuspendCategory::BackendUnavailable: return "BackendUnavailable";
    case SuspendCategory::MalformedResponse: return "MalformedResponse";
    }
    return "?";
}

inline SuspendCategory suspendCategoryFromString(const std::string& s)
{
    for (auto c : {SuspendCategory::NoTarget, SuspendCategory::Irrelevant, SuspendCategory::EmptyAfterFilter,
                   SuspendCategory::NoCandidates, SuspendCategory::UserAbort, SuspendCategory::BackendUnavailable,
                   SuspendCategory::MalformedResponse})
        if (s == toString(c))
            return c;
    fail(ErrorCode::InvalidArgument, "unknown suspension category '" + s + "'");
}

enum class ExecutionResult { Success, Failure, NotExecuted };

inline const char* toString(ExecutionResult r)
{
    switch (r) {
    case ExecutionResult::Success: return "success";
    case ExecutionResult::Failure: return "failure";
    case ExecutionResult::NotExecuted: return "not-executed";
    }
    return "?";
}

inline ExecutionResult executionFromString(const std::string& s)
{
    for (auto r : {ExecutionResult::Success, ExecutionResult::Failure, ExecutionResult::NotExecuted})
        if (s == toString(r))
            return r;
    fail(ErrorCode::InvalidArgument, "unknown execution result '" + s + "'");
}

struct SessionOutcome {
    enum class Kind { GraspSelected, Suspended };

    Kind kind = Kind::Suspended;
    GraspCandidate candidate;
    ExecutionResult execution = ExecutionResult::NotExecuted;
    SuspendCategory category = SuspendCategory::UserAbort;
    std::string message;

    static SessionOutcome selected(const GraspCandidate& g, ExecutionResult r)
    {
        SessionOutcome o;
        o.kind = Kind::GraspSelected;
        o.candidate = g;
        o.execution = r;
        return o;
    }

    static SessionOutcome suspended(SuspendCategory c, std::string message)
    {
        SessionOutcome o;
        o.kind = Kind::Suspended;
        o.category = c;
        o.message = std::move(message);
        return o;
    }

    bool isSuspended() const { return kind == Kind::Suspended; }

    json toJson() const
    {
        if (kind == Kind::GraspSelected)
            return {{"outcome", "GraspSelected"},
                    {"candidate", jsonio::candidate(candidate)},
                    {"executionResult", toString(execution)}};
        return {{"outcome", "Suspended"}, {"category", toString(category)}, {"message", message}};
    }
};

// ---------------------------------------------------------------------------
// Scene data

/// Foreground cloud with normals and the scored seeds, shared by every
/// session on the same scene and parameters.
struct PreparedCloud {
    OrientedCloud foreground;
    std::vector<ScoredPoint> seeds;
    SpatialGrid fullGrid; // whole cloud, for the collision check
};

class SceneData {
public:
    std::optional<Scene> scene; // present for simulator sources
    PointCloud cloud;
    RgbImage image;
    CameraIntrinsics camera;
    std::string source;

    static std::shared_ptr<SceneData> fromScene(Scene s, std::string source = "inline")
    {
        auto d = std::make_shared<SceneData>();
        const DepthMap depth = renderDepth(s);
        d->cloud = renderCloud(s, s.samplesPerM2, depth);
        d->image = renderImage(s, depth);
        d->camera = s.camera;
        d->source = std::move(source);
        d->scene = std::move(s);
        return d;
    }

    static std::shared_ptr<SceneData> fromSpecFile(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            fail(ErrorCode::Io, "cannot open scene file " + path);
        json spec;
        try {
            spec = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::MalformedSpec, path + ": " + e.what());
        }
        return fromScene(buildScene(spec), path);
    }

    /// PLY cloud plus PNG raster captured by `camera`.
    static std::shared_ptr<SceneData> fromFiles(const std::string& plyPath, const std::string& pngPath,
                                                const CameraIntrinsics& camera)
    {
        camera.validate();
        auto d = std::make_shared<SceneData>();
        d->cloud = ply::readFile(plyPath);
        d->cloud.validate();
        d->image = readPngFile(pngPath);
        if (d->image.width() != camera.width || d->image.height() != camera.height)
            fail(ErrorCode::InvalidArgument, "raster size does not match the camera intrinsics");
        d->camera = camera;
        d->source = plyPath + "+" + pngPath;
        return d;
    }

    std::shared_ptr<const PreparedCloud> prepare(const ProposerParams& params) const
    {
        const std::string key = jsonio::proposer(params).dump();
        std::lock_guard lock(cacheMutex_);
        if (auto it = cache_.find(key); it != cache_.end())
            return it->second;
        auto p = std::make_shared<PreparedCloud>();
        PointCloud fg = params.removeSupportPlane ? removeDominantPlane(cloud, params) : cloud;
        fg.validate();
        if (fg.size() < static_cast<std::size_t>(params.kNeighbors))
            fail(ErrorCode::CloudTooSmall, "too few points left to estimate normals");
        p->foreground = orient(std::move(fg), params.kNeighbors);
        if (!params.cropBeforeScoring)
            p->seeds = scoreSeeds(p->foreground, params);
        p->fullGrid = SpatialGrid(cloud.points, kGridCell);
        cache_.emplace(key, p);
        return p;
    }

private:
    mutable std::mutex cacheMutex_;
    mutable std::map<std::string, std::shared_ptr<const PreparedCloud>> cache_;
};

// ---------------------------------------------------------------------------
// Transcript

struct TranscriptEvent {
    double ts = 0.0;
    std::string session;
    Phase phase = Phase::Idle;
    std::string event;
    json payload = json::object();

    json toJson() const
    {
        return {{"ts", ts}, {"session", session}, {"phase", toString(phase)}, {"event", event}, {"payload", payload}};
    }

    static TranscriptEvent fromJson(const json& j)
    {
        TranscriptEvent e;
        e.ts = jsonio::num(jsonio::member(j, "ts", "event"), "event.ts");
        e.session = jsonio::member(j, "session", "event").get<std::string>();
        e.phase = phaseFromString(jsonio::member(j, "phase", "event").get<std::string>());
        e.event = jsonio::member(j, "event", "event").get<std::string>();
        e.payload = j.value("payload", json::object());
        return e;
    }
};

class TranscriptSink {
public:
    virtual ~TranscriptSink() = default;
    virtual void append(const TranscriptEvent& e) = 0;
};

/// Appends one JSON object per line; appends from concurrent sessions are
/// serialized.
class JsonlTranscriptSink : public TranscriptSink {
public:
    explicit JsonlTranscriptSink(const std::string& path) : out_(path, std::ios::app)
    {
        if (!out_)
            fail(ErrorCode::Io, "cannot open transcript " + path);
    }

    void append(const TranscriptEvent& e) override
    {
        const std::string line = e.toJson().dump() + "\n";
        std::lock_guard lock(mutex_);
        out_ << line;
        out_.flush();
    }

private:
    std::mutex mutex_;
    std::ofstream out_;
};

inline std::vector<TranscriptEvent> readTranscript(std::istream& in, const std::string& session = "")
{
    std::vector<TranscriptEvent> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        auto e = TranscriptEvent::fromJson(json::parse(line));
        if (session.empty() || e.session == session)
            out.push_back(std::move(e));
    }
    return out;
}

using Clock = std::function<double()>;

inline double wallClock()
{
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Session

struct SessionConfig {
    ProposerParams proposer;
    GraspOracleParams oracle;
    std::size_t keepCandidates = 50; // ranked candidates retained in the state
};

struct SessionState {
    std::string id;
    Phase phase = Phase::Idle;
    CameraIntrinsics camera;
    std::optional<std::string> instruction;
    std::optional<Triage> triage;
    std::vector<GraspCandidate> candidates; // best first
    std::size_t candidateTotal = 0;         // before truncation to keepCandidates
    std::optional<GraspCandidate> selected;
    std::optional<ExecutionResult> execution;
    std::optional<SuspendCategory> suspension;
    std::string feedback;
    std::vector<TranscriptEvent> transcript;
};

/// 2D segment between the projected contacts, for overlays.
inline json contactSegment(const GraspCandidate& g, const CameraIntrinsics& k)
{
    auto px = [&](const Point3& p) -> json {
        if (!(p.z() > 0.0))
            return nullptr;
        const Pixel q = project(p, k);
        return json::array({q.u, q.v});
    };
    return {{"a", px(g.contactA)}, {"b", px(g.contactB)}};
}

inline std::optional<SessionOutcome> outcomeOf(const SessionState& s)
{
    if (s.phase == Phase::Suspended)
        return SessionOutcome::suspended(*s.suspension, s.feedback);
    if (s.phase == Phase::Executed || s.phase == Phase::AwaitingConfirm)
        return SessionOutcome::selected(*s.selected, s.execution.value_or(ExecutionResult::NotExecuted));
    return std::nullopt;
}

/// The state as served to clients; no cloud data.
inline json stateJson(const SessionState& s)
{
    json j = {{"sessionId", s.id}, {"phase", toString(s.phase)}, {"camera", jsonio::camera(s.camera)}};
    j["instruction"] = s.instruction ? json(*s.instruction) : json(nullptr);
    j["triage"] = s.triage ? jsonio::triage(*s.triage) : json(nullptr);
    json cands = json::array();
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
        json c = jsonio::candidate(s.candidates[i]);
        c["id"] = i;
        c["segment"] = contactSegment(s.candidates[i], s.camera);
        cands.push_back(std::move(c));
    }
    j["candidates"] = std::move(cands);
    j["candidateTotal"] = s.candidateTotal;
    j["selected"] = s.selected ? jsonio::candidate(*s.selected) : json(nullptr);
    j["executionResult"] = s.execution ? json(toString(*s.execution)) : json(nullptr);
    j["suspension"] = s.suspension ? json{{"category", toString(*s.suspension)}, {"message", s.feedback}}
                                   : json(nullptr);
    const auto outcome = outcomeOf(s);
    j["outcome"] = outcome ? outcome->toJson() : json(nullptr);
    json events = json::array();
    for (const auto& e : s.transcript)
        events.push_back(e.toJson());
    j["transcript"] = std::move(events);
    return j;
}

class Session {
public:
    Session(std::string id, std::shared_ptr<const SceneData> data, SessionConfig config = {},
            TranscriptSink* sink = nullptr, Clock clock = wallClock)
        : data_(std::move(data)), config_(std::move(config)), sink_(sink), clock_(std::move(clock))
    {
        if (!data_)
            fail(ErrorCode::InvalidArgument, "session needs scene data");
        config_.proposer.validate();
        config_.oracle.validate();
        state_.id = std::move(id);
        state_.camera = data_->camera;
        record("session.created", {{"source", data_->source},
                                   {"camera", jsonio::camera(data_->camera)},
                                   {"points", data_->cloud.size()},
                                   {"simulated", data_->scene.has_value()}});
    }

    const SessionState& state() const { return state_; }
    const SceneData& data() const { return *data_; }
    std::optional<SessionOutcome> outcome() const { return outcomeOf(state_); }

    /// Triage and, for a Target, the proposer stages up to AwaitingConfirm.
    /// Detector failures leave the session Idle and are rethrown.
    void submitInstruction(const Instruction& instruction, Detector& detector)
    {
        requirePhase(Phase::Idle, "instruction");
        state_.instruction = instruction.text();
        record("instruction", {{"text", instruction.text()}, {"detector", detector.name()}});
        Detection d;
        try {
            d = detector.detect(instruction, SceneView{&data_->image, data_->scene ? &*data_->scene : nullptr,
                                                      &data_->cloud});
        } catch (const Error& e) {
            state_.instruction.reset();
            record("triage.failed", {{"code", targetgrasp::toString(e.code())}, {"message", e.what()}});
            throw;
        }
        state_.triage = d.triage;
        state_.phase = Phase::Triaged;
        record("triage", {{"triage", jsonio::triage(d.triage)}, {"notes", d.notes}});

        switch (d.triage.kind()) {
        case TriageKind::NoTarget: return suspend(SuspendCategory::NoTarget, d.triage.message());
        case TriageKind::Irrelevant: return suspend(SuspendCategory::Irrelevant, d.triage.message());
        case TriageKind::Target: break;
        }
        runProposer(d.triage);
    }

    SessionOutcome confirm()
    {
        requirePhase(Phase::AwaitingConfirm, "confirm");
        json verdict = nullptr;
        ExecutionResult r = ExecutionResult::NotExecuted;
        if (data_->scene) {
            const auto v = judgeGrasp(*data_->scene, *state_.selected, config_.proposer.gripper, config_.oracle);
            r = v.success ? ExecutionResult::Success : ExecutionResult::Failure;
            verdict = {{"objectA", v.objectA},
                       {"objectB", v.objectB},
                       {"angleA", v.angleA},
                       {"angleB", v.angleB},
                       {"reason", v.reason}};
        }
        state_.execution = r;
        state_.phase = Phase::Executed;
        record("executed", {{"executionResult", toString(r)}, {"verdict", verdict}});
        return *outcome();
    }

    SessionOutcome abort()
    {
        if (isTerminal(state_.phase))
            wrongPhase("abort");
        suspend(SuspendCategory::UserAbort, "The grasp task was aborted by the operator.");
        return *outcome();
    }

    /// Ends an Idle session after a detector failure.
    SessionOutcome suspendAfterFailure(SuspendCategory c, const std::string& message)
    {
        requirePhase(Phase::Idle, "suspend");
        suspend(c, message);
        return *outcome();
    }

private:
    [[noreturn]] void wrongPhase(const std::string& op) const
    {
        fail(ErrorCode::WrongPhase, op + " is not allowed in phase " + toString(state_.phase));
    }

    void requirePhase(Phase p, const std::string& op) const
    {
        if (state_.phase != p)
            wrongPhase(op);
    }

    void record(const std::string& event, json payload)
    {
        TranscriptEvent e{clock_(), state_.id, state_.phase, event, std::move(payload)};
        if (sink_)
            sink_->append(e);
        state_.transcript.push_back(std::move(e));
    }

    void suspend(SuspendCategory c, const std::string& message)
    {
        state_.phase = Phase::Suspended;
        state_.selected.reset();
        state_.suspension = c;
        state_.feedback = message;
        record("suspended", {{"category", toString(c)}, {"message", message}});
    }

    void runProposer(const Triage& t)
    {
        const auto& params = config_.proposer;
        const auto& k = data_->camera;
        const BBox2D& box = t.bbox();
        const std::string label = "'" + t.label() + "'";
        try {
            const auto prep = data_->prepare(params);
            std::vector<ScoredPoint> seeds;
            std::vector<ScoredPoint> kept;
            if (params.cropBeforeScoring) {
                std::vector<std::size_t> inside;
                for (std::size_t i = 0; i < prep->foreground.size(); ++i)
                    if (projectsInto(prep->foreground.cloud.points[i], box, k))
                        inside.push_back(i);
                if (inside.size() < 2)
                    fail(ErrorCode::EmptyAfterFilter, "no points inside the detected box");
                seeds = scoreSeeds(prep->foreground.subset(inside), params);
                record("proposer.seeds", {{"count", seeds.size()}, {"mode", "crop-before-scoring"}});
                kept = filterByBBox(seeds, box, k, params);
            } else {
                seeds = prep->seeds;
                record("proposer.seeds", {{"count", seeds.size()}, {"scoredPoints", prep->foreground.size()}});
                kept = filterByBBox(seeds, box, k, params);
            }
            const OrientedCloud region = cropToDetectedRange(prep->foreground, box, k, kept, params);
            const std::vector<ScoredPoint> forwarded(kept.begin(),
                                                     kept.begin() + std::min(kept.size(), params.orientationSeeds));
            record("proposer.filter", {{"input", seeds.size()},
                                       {"kept", kept.size()},
                                       {"forwarded", forwarded.size()},
                                       {"bbox", jsonio::bbox(box)}});
            const auto cands = proposeOrientations(forwarded, region, params);
            record("proposer.orientations", {{"count", cands.size()}, {"regionPoints", region.size()}});
            auto refined = refine(cands, prep->fullGrid, params);
            record("proposer.refine", {{"input", cands.size()}, {"count", refined.size()}});
            if (refined.empty())
                fail(ErrorCode::NoCandidates, "every grasp candidate collides with the scene");
            const GraspCandidate best = selectBest(refined);
            auto ranked = rankCandidates(std::move(refined));
            state_.candidateTotal = ranked.size();
            if (ranked.size() > config_.keepCandidates)
                ranked.resize(std::max<std::size_t>(1, config_.keepCandidates));
            state_.candidates = std::move(ranked);
            state_.phase = Phase::CandidatesReady;
            record("candidates", {{"total", state_.candidateTotal}, {"candidates", jsonio::candidates(state_.candidates)}});
            state_.selected = best;
            state_.phase = Phase::AwaitingConfirm;
            record("selected", {{"candidate", jsonio::candidate(best)}});
        } catch (const Error& e) {
            switch (e.code()) {
            case ErrorCode::EmptyAfterFilter:
                return suspend(SuspendCategory::EmptyAfterFilter,
                               "No point of the cloud inside the detected box around " + label +
                                   " is usable for grasping, so the grasp task is suspended. Please check the "
                                   "target or the camera view.");
            case ErrorCode::NoCandidates:
            case ErrorCode::CloudTooSmall:
                return suspend(SuspendCategory::NoCandidates,
                               "No collision-free antipodal grasp was found on " + label +
                                   ", so the grasp task is suspended (" + e.what() + ").");
            default: throw;
            }
        }
    }

    std::shared_ptr<const SceneData> data_;
    SessionConfig config_;
    TranscriptSink* sink_;
    Clock clock_;
    SessionState state_;
};

/// Rebuilds a session state from its transcript alone.
inline SessionState replay(const std::vector<TranscriptEvent>& events)
{
    SessionState s;
    for (const auto& e : events) {
        if (s.id.empty())
            s.id = e.session;
        const auto& p = e.payload;
        if (e.event == "session.created") {
            s.camera = jsonio::camera(p.at("camera"));
        } else if (e.event == "instruction") {
            s.instruction = p.at("text").get<std::string>();
        } else if (e.event == "triage.failed") {
            s.instruction.reset();
        } else if (e.event == "triage") {
            s.triage = jsonio::triage(p.at("triage"));
            s.phase = Phase::Triaged;
        } else if (e.event == "candidates") {
            s.candidateTotal = p.at("total").get<std::size_t>();
            s.candidates.clear();
            for (const auto& c : p.at("candidates"))
                s.candidates.push_back(jsonio::candidate(c));
            s.phase = Phase::CandidatesReady;
        } else if (e.event == "selected") {
            s.selected = jsonio::candidate(p.at("candidate"));
            s.phase = Phase::AwaitingConfirm;
        } else if (e.event == "executed") {
            s.execution = executionFromString(p.at("executionResult").get<std::string>());
            s.phase = Phase::Executed;
        } else if (e.event == "suspended") {
            s.selected.reset();
            s.suspension = suspendCategoryFromString(p.at("category").get<std::string>());
            s.feedback = p.at("message").get<std::string>();
            s.phase = Phase::Suspended;
        }
        s.transcript.push_back(e);
    }
    return s;
}

struct RunResult {
    SessionOutcome outcome;
    SessionState state;
};

/// One automatic session. Backend failures end it as a suspension.
inline RunResult runSession(const Instruction& instruction, std::shared_ptr<const SceneData> data, Detector& detector,
                            const SessionConfig& config, bool autoConfirm, const std::string& id = "session",
                            TranscriptSink* sink = nullptr, Clock clock = wallClock)
{
    Session s(id, std::move(data), config, sink, std::move(clock));
    try {
        s.submitInstruction(instruction, detector);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::BackendUnavailable)
            s.suspendAfterFailure(SuspendCategory::BackendUnavailable,
                                  std::string("The vision-language backend is unavailable: ") + e.what());
        else if (e.code() == ErrorCode::MalformedBox)
            s.suspendAfterFailure(SuspendCategory::MalformedResponse,
                                  std::string("The vision-language backend returned an unusable box: ") + e.what());
        else
            throw;
    }
    if (autoConfirm && s.state().phase == Phase::AwaitingConfirm)
        s.confirm();
    return {*s.outcome(), s.state()};
}

/// True when the transcript contains any proposer-stage event.
inline bool proposerInvoked(const std::vector<TranscriptEvent>& events)
{
    for (const auto& e : events)
        if (e.event.starts_with("proposer.") || e.event == "candidates" || e.event == "selected")
            return true;
    return false;
}

} // namespace targetgrasp
