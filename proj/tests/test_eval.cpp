#include "support.hpp"

#include "targetgrasp/eval.hpp"

#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace targetgrasp;
using namespace targetgrasp::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() : path_(fs::temp_directory_path() / ("targetgrasp_eval_" + std::to_string(::getpid())))
    {
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }

    std::string write(const std::string& name, const std::string& content) const
    {
        const auto p = path_ / name;
        fs::create_directories(p.parent_path());
        std::ofstream(p) << content;
        return p.string();
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

json goodCase()
{
    return {{"id", "common-01"},
            {"dimension", "common"},
            {"scene", "../scenes/office.json"},
            {"instruction", "Give me the mug."},
            {"expected", {{"category", "Target"}, {"objectId", 1}}}};
}

std::string corpusDir() { return dataPath("corpora"); }

const SuiteReport& shippedReport()
{
    static const SuiteReport rep = [] {
        OracleDetector d;
        return runAllSuites(corpusDir(), d, {});
    }();
    return rep;
}

} // namespace

TEST(Corpus, LoadsAndResolvesScenePaths)
{
    TempDir t;
    const auto path = t.write("corpora/common.json", json::array({goodCase()}).dump());
    const auto cases = loadCorpus(path);
    ASSERT_EQ(cases.size(), 1u);
    EXPECT_EQ(cases[0].scene, (t.path() / "scenes/office.json").lexically_normal().string());
    EXPECT_EQ(cases[0].expected, TriageKind::Target);
    EXPECT_EQ(cases[0].expectedObjectId, 1);
}

TEST(Corpus, Errors)
{
    TempDir t;
    EXPECT_ERROR_CODE(loadCorpus((t.path() / "missing.json").string()), ErrorCode::CorpusNotFound);
    EXPECT_ERROR_CODE(loadCorpus(t.write("a.json", "{not json")), ErrorCode::MalformedSpec);
    EXPECT_ERROR_CODE(loadCorpus(t.write("b.json", "{}")), ErrorCode::MalformedSpec);

    auto bad = [&](auto mutate) {
        json c = goodCase();
        mutate(c);
        return loadCorpus(t.write("c.json", json::array({c}).dump()));
    };
    EXPECT_ERROR_CODE(bad([](json& c) { c["dimension"] = "funny"; }), ErrorCode::MalformedSpec);
    EXPECT_ERROR_CODE(bad([](json& c) { c.erase("instruction"); }), ErrorCode::MalformedSpec);
    EXPECT_ERROR_CODE(bad([](json& c) { c["expected"]["category"] = "Maybe"; }), ErrorCode::MalformedSpec);
    EXPECT_ERROR_CODE(bad([](json& c) { c["expected"].erase("objectId"); }), ErrorCode::MalformedSpec);
    EXPECT_ERROR_CODE(bad([](json& c) { c["expected"]["category"] = "NoTarget"; }), ErrorCode::MalformedSpec);
    EXPECT_NO_THROW(bad([](json& c) { c["expected"] = {{"category", "Irrelevant"}, {"objectId", nullptr}}; }));
}

TEST(Corpus, SuiteLookup)
{
    TempDir t;
    OracleDetector d;
    EXPECT_ERROR_CODE(runSuite("funny", corpusDir(), d, {}), ErrorCode::CorpusNotFound);
    EXPECT_ERROR_CODE(runSuite("common", t.path().string(), d, {}), ErrorCode::CorpusNotFound);
    t.write("vague.json", json::array({goodCase()}).dump()); // a common case in the vague file
    EXPECT_ERROR_CODE(runSuite("vague", t.path().string(), d, {}), ErrorCode::MalformedSpec);
}

TEST(Corpus, ShippedCorporaCoverEveryDimension)
{
    for (const auto& dim : suiteDimensions()) {
        const auto cases = loadCorpus(corpusPath(corpusDir(), dim));
        EXPECT_GE(cases.size(), 20u) << dim;
        std::set<std::string> ids;
        for (const auto& c : cases) {
            EXPECT_EQ(c.dimension, dim);
            EXPECT_TRUE(ids.insert(c.id).second) << c.id;
            EXPECT_TRUE(fs::exists(c.scene)) << c.scene;
            const bool targeted = dim != "erroneous" && dim != "irrelevant";
            EXPECT_EQ(c.expected == TriageKind::Target, targeted) << c.id;
        }
    }
}

TEST(Summary, MatchesRecomputationFromRecords)
{
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> coin(0, 1), dim(0, 5);
    std::vector<CaseRecord> records;
    for (int n = 0; n < 200; ++n) {
        CaseRecord r;
        r.spec.dimension = suiteDimensions()[dim(rng)];
        r.spec.expected = coin(rng) ? TriageKind::Target : TriageKind::NoTarget;
        r.triageCorrect = coin(rng);
        if (r.spec.expected == TriageKind::Target) {
            r.targetCorrect = coin(rng) == 1;
            r.graspSuccess = coin(rng) == 1;
        }
        r.proposerInvoked = coin(rng);
        r.filterSound = coin(rng);
        r.outcome = coin(rng) ? json{{"outcome", "Suspended"}, {"message", coin(rng) ? "why" : ""}}
                              : json{{"outcome", "GraspSelected"}};
        records.push_back(r);
    }
    for (const auto& d : suiteDimensions()) {
        const auto s = summarize(records, d);
        std::size_t cases = 0, triage = 0, targeted = 0, target = 0, grasp = 0, suspended = 0, proposer = 0,
                    unsound = 0, empty = 0;
        for (const auto& r : records) {
            if (r.spec.dimension != d)
                continue;
            ++cases;
            triage += r.triageCorrect ? 1 : 0;
            if (r.targetCorrect) {
                ++targeted;
                target += *r.targetCorrect ? 1 : 0;
                grasp += *r.graspSuccess ? 1 : 0;
            }
            if (r.outcome["outcome"] == "Suspended") {
                ++suspended;
                empty += r.outcome["message"] == "" ? 1 : 0;
            }
            proposer += r.proposerInvoked ? 1 : 0;
            unsound += r.filterSound ? 0 : 1;
        }
        EXPECT_EQ(s.cases, cases);
        EXPECT_EQ(s.triageCorrect, triage);
        EXPECT_EQ(s.targeted, targeted);
        EXPECT_EQ(s.targetCorrect, target);
        EXPECT_EQ(s.graspSuccess, grasp);
        EXPECT_EQ(s.suspended, suspended);
        EXPECT_EQ(s.proposerInvocations, proposer);
        EXPECT_EQ(s.filterUnsound, unsound);
        EXPECT_EQ(s.emptyReplies, empty);
    }
}

TEST(Suites, TargetedDimensions)
{
    const auto& rep = shippedReport();
    for (const char* d : {"common", "vague", "direction", "complex"}) {
        ASSERT_TRUE(rep.summaries.count(d)) << d;
        const auto& s = rep.summaries.at(d);
        EXPECT_GE(s.cases, 20u);
        EXPECT_EQ(s.triageCorrect, s.cases) << d;
        EXPECT_EQ(s.targetCorrect, s.targeted) << d;
        EXPECT_GE(static_cast<double>(s.graspSuccess), 0.9 * static_cast<double>(s.targeted)) << d;
        EXPECT_EQ(s.filterUnsound, 0u) << d;
    }
}

TEST(Suites, ErroneousSuspendsWithoutProposer)
{
    const auto& rep = shippedReport();
    const auto& s = rep.summaries.at("erroneous");
    EXPECT_EQ(s.triageCorrect, s.cases);
    EXPECT_EQ(s.suspended, s.cases);
    EXPECT_EQ(s.proposerInvocations, 0u);
    for (const auto& r : rep.records)
        if (r.spec.dimension == "erroneous") {
            EXPECT_EQ(r.outcome.at("category"), "NoTarget") << r.spec.id;
        }
}

TEST(Suites, IrrelevantSuspendsWithReplies)
{
    const auto& rep = shippedReport();
    const auto& s = rep.summaries.at("irrelevant");
    EXPECT_EQ(s.triageCorrect, s.cases);
    EXPECT_EQ(s.suspended, s.cases);
    EXPECT_EQ(s.emptyReplies, 0u);
    EXPECT_EQ(s.proposerInvocations, 0u);
    for (const auto& r : rep.records)
        if (r.spec.dimension == "irrelevant") {
            EXPECT_EQ(r.outcome.at("category"), "Irrelevant") << r.spec.id;
            EXPECT_FALSE(r.outcome.at("message").get<std::string>().empty());
        }
    EXPECT_TRUE(rep.allTriageCorrect());
}

TEST(Suites, ReportIsDeterministic)
{
    OracleDetector d;
    const auto a = reportJson(runSuite("direction", corpusDir(), d, {})).dump();
    const auto b = reportJson(runSuite("direction", corpusDir(), d, {})).dump();
    EXPECT_EQ(a, b);
    const auto text = reportText(shippedReport());
    EXPECT_NE(text.find("common"), std::string::npos);
    EXPECT_NE(text.find("irrelevant"), std::string::npos);
}
