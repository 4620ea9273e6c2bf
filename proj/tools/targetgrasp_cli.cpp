// targetgrasp: oneshot runs, scenario suites, the REST service and scene rendering.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "targetgrasp/eval.hpp"
#include "targetgrasp/overlay.hpp"
#include "targetgrasp/ply.hpp"
#include "targetgrasp/service.hpp"

using namespace targetgrasp;

namespace {

ServiceConfig configFrom(const std::string& path, const std::string& detector)
{
    ServiceConfig c;
    c.sceneDir = TARGETGRASP_DATA_DIR "/scenes";
    c.corpusDir = TARGETGRASP_DATA_DIR "/corpora";
    if (!path.empty())
        c = loadServiceConfig(path);
    if (!detector.empty())
        c.detector = detector;
    c.validate();
    return c;
}

void writeText(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text))
        fail(ErrorCode::Io, "cannot write " + path);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Instruction-driven target grasping on simulated desk scenes"};
    app.require_subcommand(1);

    std::string configPath, detector;

    auto* oneshot = app.add_subcommand("oneshot", "Run one instruction against a scene and print the outcome");
    std::string scenePath, cloudPath, imagePath, cameraPath, instruction, overlayPath = "overlay.png", transcriptPath;
    bool autoConfirm = false;
    oneshot->add_option("--scene", scenePath, "Scene spec JSON");
    oneshot->add_option("--cloud", cloudPath, "Point cloud PLY (camera frame)")->excludes("--scene");
    oneshot->add_option("--image", imagePath, "RGB PNG matching the cloud")->needs("--cloud");
    oneshot->add_option("--camera", cameraPath, "Camera intrinsics JSON for --cloud/--image");
    oneshot->add_option("--instruction", instruction, "Natural-language instruction")->required();
    oneshot->add_option("--detector", detector, "oracle or remote");
    oneshot->add_option("--config", configPath, "Service config JSON (remote profile, proposer params)");
    oneshot->add_flag("--auto-confirm", autoConfirm, "Execute the selected grasp without confirmation");
    oneshot->add_option("--overlay", overlayPath, "Overlay PNG output path");
    oneshot->add_option("--transcript", transcriptPath, "Append transcript events to this JSONL file");

    auto* suite = app.add_subcommand("suite", "Run scenario suites and write a report");
    std::string dimension, corpusDir, reportPath;
    bool all = false, text = false;
    suite->add_option("--dimension", dimension, "common, vague, direction, complex, erroneous or irrelevant");
    suite->add_flag("--all", all, "Run all six dimensions")->excludes("--dimension");
    suite->add_option("--corpus-dir", corpusDir, "Directory holding <dimension>.json corpora");
    suite->add_option("--out", reportPath, "Write the JSON report here instead of stdout");
    suite->add_flag("--text", text, "Print a summary table to stderr");
    suite->add_option("--config", configPath, "Service config JSON");
    suite->add_option("--detector", detector, "oracle or remote");

    auto* serve = app.add_subcommand("serve", "Run the REST service");
    serve->add_option("--config", configPath, "Service config JSON")->required();

    auto* render = app.add_subcommand("render", "Render a scene spec to PNG (and optionally PLY)");
    std::string pngOut, plyOut;
    render->add_option("--scene", scenePath, "Scene spec JSON")->required();
    render->add_option("--png", pngOut, "PNG output path")->required();
    render->add_option("--ply", plyOut, "PLY output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*oneshot) {
            const auto cfg = configFrom(configPath, detector);
            std::shared_ptr<const SceneData> data;
            if (!scenePath.empty()) {
                data = SceneData::fromSpecFile(scenePath);
            } else if (!cloudPath.empty() && !imagePath.empty()) {
                CameraIntrinsics k = cfg.camera;
                if (!cameraPath.empty()) {
                    std::ifstream in(cameraPath);
                    if (!in)
                        fail(ErrorCode::Io, "cannot open " + cameraPath);
                    k = jsonio::camera(nlohmann::json::parse(in));
                }
                data = SceneData::fromFiles(cloudPath, imagePath, k);
            } else {
                fail(ErrorCode::InvalidArgument, "oneshot needs --scene or --cloud with --image");
            }
            std::unique_ptr<JsonlTranscriptSink> sink;
            if (!transcriptPath.empty())
                sink = std::make_unique<JsonlTranscriptSink>(transcriptPath);
            auto det = cfg.makeDetector();
            const auto run = runSession(Instruction(instruction), data, *det, cfg.session, autoConfirm, "oneshot",
                                        sink.get());
            writePngFile(overlayPath, renderOverlay(data->image, run.state));
            std::cout << run.outcome.toJson().dump(2) << "\n";
            return 0;
        }
        if (*suite) {
            if (!all && dimension.empty())
                fail(ErrorCode::InvalidArgument, "suite needs --dimension or --all");
            const auto cfg = configFrom(configPath, detector);
            const std::string dir = corpusDir.empty() ? cfg.corpusDir : corpusDir;
            auto det = cfg.makeDetector();
            SuiteOptions opts;
            opts.session = cfg.session;
            const auto rep = all ? runAllSuites(dir, *det, opts) : runSuite(dimension, dir, *det, opts);
            const auto json = reportJson(rep).dump(2) + "\n";
            if (reportPath.empty())
                std::cout << json;
            else
                writeText(reportPath, json);
            if (text)
                std::cerr << reportText(rep);
            return rep.allTriageCorrect() ? 0 : 1;
        }
        if (*serve) {
            Service service(configFrom(configPath, ""));
            std::cerr << "listening on " << service.config().host << ":" << service.config().port << "\n";
            if (!service.listen())
                fail(ErrorCode::Io, "cannot listen on port " + std::to_string(service.config().port));
            return 0;
        }
        if (*render) {
            const auto data = SceneData::fromSpecFile(scenePath);
            writePngFile(pngOut, data->image);
            if (!plyOut.empty())
                ply::writeFile(plyOut, data->cloud);
            std::cout << data->cloud.size() << " points\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << toString(e.code()) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
