#pragma once

// REST service over sessions, plus its JSON configuration.

// Eigen must precede httplib: <resolv.h> defines a _res macro that breaks Eigen's products.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>

#include "targetgrasp/detect.hpp"
#include "targetgrasp/error.hpp"
#include "targetgrasp/json_io.hpp"
#include "targetgrasp/overlay.hpp"
#include "targetgrasp/pipeline.hpp"

namespace targetgrasp {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string detector = "oracle"; // oracle | remote
    RemoteEndpoint remote;
    PromptSet prompts = PromptSet::defaults();
    SessionConfig session;
    CameraIntrinsics camera; // for PLY + PNG sources
    std::string sceneDir = "data/scenes";
    std::string corpusDir = "data/corpora";
    std::string transcriptPath; // empty: no persistence
    bool autoConfirm = false;
    std::string apiTokenEnv; // when set and non-empty in the environment, requests need X-Api-Token

    void validate() const
    {
        if (port < 1 || port > 65535)
            fail(ErrorCode::InvalidArgument, "port must be in [1, 65535]");
        if (detector != "oracle" && detector != "remote")
            fail(ErrorCode::InvalidArgument, "detector must be 'oracle' or 'remote'");
        if (detector == "remote")
            remote.validate();
        prompts.validate();
        session.proposer.validate();
        session.oracle.validate();
        camera.validate();
    }

    std::unique_ptr<Detector> makeDetector() const
    {
        if (detector == "remote")
            return std::make_unique<RemoteDetector>(remote, prompts);
        return std::make_unique<OracleDetector>();
    }
};

inline ServiceConfig parseServiceConfig(const nlohmann::json& j, const std::string& baseDir = ".")
{
    using namespace jsonio;
    if (!j.is_object())
        bad("$", "config must be a JSON object");
    ServiceConfig c;
    auto str = [&](const json& o, const char* key, std::string& field, const std::string& path) {
        if (!o.contains(key))
            return;
        if (!o.at(key).is_string())
            bad(path + "." + key, "expected a string");
        field = o.at(key).get<std::string>();
    };
    auto dir = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? p : (std::filesystem::path(baseDir) / path).lexically_normal().string();
    };
    str(j, "host", c.host, "$");
    if (j.contains("port")) {
        if (!j.at("port").is_number_integer())
            bad("$.port", "expected an integer");
        c.port = j.at("port").get<int>();
    }
    str(j, "detector", c.detector, "$");
    if (j.contains("remote")) {
        const auto& r = j.at("remote");
        str(r, "url", c.remote.url, "$.remote");
        str(r, "authEnv", c.remote.authEnv, "$.remote");
        str(r, "boxGrammar", c.remote.boxGrammarId, "$.remote");
        if (r.contains("retries")) {
            if (!r.at("retries").is_number_integer())
                bad("$.remote.retries", "expected an integer");
            c.remote.retries = r.at("retries").get<int>();
        }
        if (r.contains("timeoutSeconds"))
            c.remote.timeoutSeconds = num(r.at("timeoutSeconds"), "$.remote.timeoutSeconds");
        if (r.contains("backoffSeconds"))
            c.remote.backoffSeconds = num(r.at("backoffSeconds"), "$.remote.backoffSeconds");
        if (r.contains("noTargetPhrases")) {
            c.remote.parse.noTargetPhrases.clear();
            for (const auto& p : r.at("noTargetPhrases")) {
                if (!p.is_string())
                    bad("$.remote.noTargetPhrases", "expected strings");
                c.remote.parse.noTargetPhrases.push_back(p.get<std::string>());
            }
        }
    }
    if (j.contains("prompts")) {
        const auto& p = j.at("prompts");
        str(p, "systemPreamble", c.prompts.systemPreamble, "$.prompts");
        str(p, "boxGrammar", c.prompts.boxGrammar, "$.prompts");
        if (p.contains("taskRules")) {
            c.prompts.taskRules.clear();
            for (const auto& r : p.at("taskRules")) {
                if (!r.is_string())
                    bad("$.prompts.taskRules", "expected strings");
                c.prompts.taskRules.push_back(r.get<std::string>());
            }
        }
    }
    if (j.contains("proposer"))
        c.session.proposer = proposer(j.at("proposer"), "$.proposer");
    if (j.contains("gripper"))
        c.session.proposer.gripper = gripper(j.at("gripper"), "$.gripper");
    if (j.contains("oracle"))
        c.session.oracle = oracle(j.at("oracle"), "$.oracle");
    if (j.contains("keepCandidates")) {
        if (!j.at("keepCandidates").is_number_unsigned())
            bad("$.keepCandidates", "expected a non-negative integer");
        c.session.keepCandidates = j.at("keepCandidates").get<std::size_t>();
    }
    if (j.contains("camera"))
        c.camera = camera(j.at("camera"), "$.camera");
    str(j, "sceneDir", c.sceneDir, "$");
    str(j, "corpusDir", c.corpusDir, "$");
    str(j, "transcriptPath", c.transcriptPath, "$");
    str(j, "apiTokenEnv", c.apiTokenEnv, "$");
    c.sceneDir = dir(c.sceneDir);
    c.corpusDir = dir(c.corpusDir);
    if (!c.transcriptPath.empty())
        c.transcriptPath = dir(c.transcriptPath);
    if (j.contains("autoConfirm")) {
        if (!j.at("autoConfirm").is_boolean())
            bad("$.autoConfirm", "expected true or false");
        c.autoConfirm = j.at("autoConfirm").get<bool>();
    }
    c.validate();
    return c;
}

inline ServiceConfig loadServiceConfig(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::Io, "cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, path + ": " + e.what());
    }
    return parseServiceConfig(j, std::filesystem::path(path).parent_path().string());
}

/// HTTP status for an error code.
inline int httpStatus(ErrorCode c)
{
    switch (c) {
    case ErrorCode::WrongPhase: return 409;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::MalformedBox: return 502;
    case ErrorCode::InvalidArgument:
    case ErrorCode::MalformedSpec:
    case ErrorCode::EmptyScene:
    case ErrorCode::NonPositiveDepth:
    case ErrorCode::Io: return 422;
    case ErrorCode::UnknownObject:
    case ErrorCode::CorpusNotFound: return 404;
    default: return 500;
    }
}

class Service {
public:
    explicit Service(ServiceConfig config) : config_(std::move(config))
    {
        config_.validate();
        detector_ = config_.makeDetector();
        if (!config_.transcriptPath.empty())
            sink_ = std::make_unique<JsonlTranscriptSink>(config_.transcriptPath);
        routes();
    }

    ~Service() { stop(); }

    const ServiceConfig& config() const { return config_; }
    httplib::Server& server() { return server_; }

    bool listen() { return server_.listen(config_.host, config_.port); }

    /// Binds an ephemeral port (for tests); serve with listenAfterBind().
    int bindAnyPort() { return server_.bind_to_any_port(config_.host); }
    bool listenAfterBind() { return server_.listen_after_bind(); }
    void stop()
    {
        if (server_.is_running())
            server_.stop();
    }

private:
    struct Slot {
        std::mutex mutex;
        std::unique_ptr<Session> session;
    };

    using Request = httplib::Request;
    using Response = httplib::Response;

    static void sendJson(Response& res, int status, const nlohmann::json& body)
    {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void sendError(Response& res, int status, const std::string& code, const std::string& message)
    {
        sendJson(res, status, {{"error", code}, {"message", message}});
    }

    std::shared_ptr<Slot> find(const std::string& id)
    {
        std::lock_guard lock(sessionsMutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    bool authorized(const Request& req) const
    {
        if (config_.apiTokenEnv.empty())
            return true;
        const char* token = std::getenv(config_.apiTokenEnv.c_str());
        if (!token || !*token)
            return true;
        return req.get_header_value("X-Api-Token") == token;
    }

    nlohmann::json body(const Request& req) const
    {
        if (req.body.empty())
            return nlohmann::json::object();
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::InvalidArgument, std::string("request body is not JSON: ") + e.what());
        }
    }

    /// Resolves a file name inside `dir`, refusing anything that escapes it.
    static std::string inside(const std::string& dir, const std::string& name)
    {
        const std::filesystem::path p(name);
        if (name.empty() || p.is_absolute() || name.find("..") != std::string::npos)
            fail(ErrorCode::InvalidArgument, "references must be plain names inside the scene directory");
        return (std::filesystem::path(dir) / p).string();
    }

    std::shared_ptr<const SceneData> loadScene(const nlohmann::json& b) const
    {
        if (!b.is_object())
            fail(ErrorCode::InvalidArgument, "body must be a JSON object");
        if (b.contains("sceneSpec"))
            return SceneData::fromScene(buildScene(b.at("sceneSpec")), "inline");
        if (b.contains("sceneRef")) {
            if (!b.at("sceneRef").is_string())
                fail(ErrorCode::InvalidArgument, "sceneRef must be a string");
            const auto path = inside(config_.sceneDir, b.at("sceneRef").get<std::string>());
            if (!std::filesystem::exists(path))
                fail(ErrorCode::InvalidArgument, "no scene named " + b.at("sceneRef").get<std::string>());
            return SceneData::fromSpecFile(path);
        }
        if (b.contains("cloudRef") && b.contains("imageRef"))
            return SceneData::fromFiles(inside(config_.sceneDir, b.at("cloudRef").get<std::string>()),
                                        inside(config_.sceneDir, b.at("imageRef").get<std::string>()),
                                        config_.camera);
        fail(ErrorCode::InvalidArgument, "body needs sceneSpec, sceneRef, or cloudRef + imageRef");
    }

    nlohmann::json instructionResponse(const Session& s) const
    {
        const auto& st = s.state();
        nlohmann::json cands = nlohmann::json::array();
        for (std::size_t i = 0; i < st.candidates.size(); ++i)
            cands.push_back({{"id", i},
                             {"score", st.candidates[i].score},
                             {"width", st.candidates[i].width},
                             {"segment", contactSegment(st.candidates[i], st.camera)}});
        const auto outcome = s.outcome();
        return {{"sessionId", st.id},
                {"phase", toString(st.phase)},
                {"triage", st.triage ? jsonio::triage(*st.triage) : nlohmann::json(nullptr)},
                {"candidates", cands},
                {"candidateTotal", st.candidateTotal},
                {"selected", st.selected ? jsonio::candidate(*st.selected) : nlohmann::json(nullptr)},
                {"suspension", st.suspension ? nlohmann::json{{"category", toString(*st.suspension)},
                                                              {"message", st.feedback}}
                                             : nlohmann::json(nullptr)},
                {"outcome", outcome ? outcome->toJson() : nlohmann::json(nullptr)}};
    }

    template <typename F>
    void guarded(Response& res, F&& f)
    {
        try {
            f();
        } catch (const Error& e) {
            sendError(res, httpStatus(e.code()), std::string(toString(e.code())), e.what());
        } catch (const nlohmann::json::exception& e) {
            sendError(res, 422, "InvalidArgument", e.what());
        } catch (const std::exception& e) {
            sendError(res, 500, "Internal", e.what());
        }
    }

    template <typename F>
    void withSession(const Request& req, Response& res, F&& f)
    {
        const auto slot = find(req.matches[1]);
        if (!slot)
            return sendError(res, 404, "UnknownSession", "no session " + std::string(req.matches[1]));
        std::lock_guard lock(slot->mutex);
        guarded(res, [&] { f(*slot->session); });
    }

    void routes()
    {
        server_.set_pre_routing_handler([this](const Request& req, Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Api-Token");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            if (req.method == "OPTIONS") {
                res.status = 204;
                return httplib::Server::HandlerResponse::Handled;
            }
            if (!authorized(req)) {
                sendError(res, 401, "Unauthorized", "missing or wrong X-Api-Token");
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });

        server_.Get("/health", [](const Request&, Response& res) { sendJson(res, 200, {{"status", "ok"}}); });

        server_.Post("/sessions", [this](const Request& req, Response& res) {
            guarded(res, [&] {
                auto data = loadScene(body(req));
                const std::string id = "s" + std::to_string(++counter_);
                auto slot = std::make_shared<Slot>();
                slot->session = std::make_unique<Session>(id, std::move(data), config_.session, sink_.get());
                {
                    std::lock_guard lock(sessionsMutex_);
                    sessions_.emplace(id, slot);
                }
                const auto& d = slot->session->data();
                sendJson(res, 201,
                         {{"sessionId", id},
                          {"phase", toString(slot->session->state().phase)},
                          {"width", d.camera.width},
                          {"height", d.camera.height},
                          {"points", d.cloud.size()}});
            });
        });

        server_.Get("/sessions", [this](const Request&, Response& res) {
            nlohmann::json ids = nlohmann::json::array();
            std::lock_guard lock(sessionsMutex_);
            for (const auto& [id, slot] : sessions_)
                ids.push_back(id);
            sendJson(res, 200, {{"sessions", ids}});
        });

        server_.Get(R"(/sessions/([^/]+)/scene\.png)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) {
                const auto png = encodePng(s.data().image);
                res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
        });

        server_.Get(R"(/sessions/([^/]+)/overlay\.png)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) {
                const auto png = encodePng(renderOverlay(s.data().image, s.state()));
                res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
        });

        server_.Get(R"(/sessions/([^/]+)/state)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) { sendJson(res, 200, stateJson(s.state())); });
        });

        server_.Post(R"(/sessions/([^/]+)/instruction)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) {
                const auto b = body(req);
                if (!b.is_object() || !b.contains("text") || !b.at("text").is_string())
                    fail(ErrorCode::InvalidArgument, "body needs a \"text\" string");
                const Instruction instruction(b.at("text").get<std::string>());
                if (s.state().phase != Phase::Idle)
                    fail(ErrorCode::WrongPhase,
                         std::string("instruction is not allowed in phase ") + toString(s.state().phase));
                s.submitInstruction(instruction, *detector_);
                if (config_.autoConfirm && s.state().phase == Phase::AwaitingConfirm)
                    s.confirm();
                sendJson(res, 200, instructionResponse(s));
            });
        });

        server_.Post(R"(/sessions/([^/]+)/confirm)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) {
                s.confirm();
                sendJson(res, 200, instructionResponse(s));
            });
        });

        server_.Post(R"(/sessions/([^/]+)/abort)", [this](const Request& req, Response& res) {
            withSession(req, res, [&](Session& s) {
                s.abort();
                sendJson(res, 200, instructionResponse(s));
            });
        });
    }

    ServiceConfig config_;
    std::unique_ptr<Detector> detector_;
    std::unique_ptr<JsonlTranscriptSink> sink_;
    httplib::Server server_;
    std::mutex sessionsMutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::atomic<long> counter_{0};
};

} // namespace targetgrasp
