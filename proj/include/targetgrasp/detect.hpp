#pragma once

// Instruction triage: Target(bbox, label) | NoTarget(message) | Irrelevant(message).
// Two backends: an offline resolver over simulator metadata and an HTTP
// client for a remote vision-language model.

// Eigen must precede httplib: <resolv.h> defines a _res macro that breaks Eigen's products.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"
#include "targetgrasp/image.hpp"
#include "targetgrasp/scene.hpp"

namespace targetgrasp {

inline constexpr std::size_t kMaxInstructionLength = 4096;

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n\f\v");
    return s.substr(b, e - b + 1);
}

class Instruction {
public:
    explicit Instruction(const std::string& text) : text_(trim(text))
    {
        if (text_.empty())
            fail(ErrorCode::InvalidArgument, "instruction is empty");
        if (text_.size() > kMaxInstructionLength)
            fail(ErrorCode::InvalidArgument, "instruction longer than 4096 characters");
    }

    const std::string& text() const { return text_; }

private:
    std::string text_;
};

enum class TriageKind { Target, NoTarget, Irrelevant };

inline const char* toString(TriageKind k)
{
    switch (k) {
    case TriageKind::Target: return "Target";
    case TriageKind::NoTarget: return "NoTarget";
    case TriageKind::Irrelevant: return "Irrelevant";
    }
    return "?";
}

class Triage {
public:
    static Triage target(const BBox2D& bbox, std::string label)
    {
        if (!bbox.valid())
            fail(ErrorCode::InvalidArgument, "Target needs a valid box");
        Triage t;
        t.kind_ = TriageKind::Target;
        t.bbox_ = bbox;
        t.label_ = label.empty() ? "target" : std::move(label);
        return t;
    }

    static Triage noTarget(std::string message) { return withMessage(TriageKind::NoTarget, std::move(message)); }
    static Triage irrelevant(std::string message) { return withMessage(TriageKind::Irrelevant, std::move(message)); }

    TriageKind kind() const { return kind_; }
    bool isTarget() const { return kind_ == TriageKind::Target; }
    const BBox2D& bbox() const
    {
        if (kind_ != TriageKind::Target)
            fail(ErrorCode::InvalidArgument, "only Target carries a box");
        return bbox_;
    }
    const std::string& label() const { return label_; }
    const std::string& message() const { return message_; }

    /// Optional: the object id behind the box, when the backend knows it.
    std::optional<int> objectId;

    bool operator==(const Triage& o) const
    {
        return kind_ == o.kind_ && (kind_ != TriageKind::Target || bbox_ == o.bbox_) && label_ == o.label_ &&
               message_ == o.message_;
    }

private:
    static Triage withMessage(TriageKind k, std::string message)
    {
        if (trim(message).empty())
            fail(ErrorCode::InvalidArgument, std::string(toString(k)) + " needs a non-empty message");
        Triage t;
        t.kind_ = k;
        t.message_ = std::move(message);
        return t;
    }

    TriageKind kind_ = TriageKind::Irrelevant;
    BBox2D bbox_;
    std::string label_;
    std::string message_;
};

/// What a detector gets to look at. The raster is always present; the scene
/// only for simulator sources.
struct SceneView {
    const RgbImage* image = nullptr;
    const Scene* scene = nullptr;
    const PointCloud* cloud = nullptr; // rendered cloud of `scene`, when available
};

struct Detection {
    Triage triage;
    std::vector<std::string> notes; // backend remarks worth logging
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual std::string name() const = 0;
    virtual Detection detect(const Instruction& instruction, const SceneView& view) = 0;

    Triage triage(const Instruction& instruction, const SceneView& view) { return detect(instruction, view).triage; }
};

// ---------------------------------------------------------------------------
// Text helpers

namespace text {

inline std::string lower(std::string s)
{
    for (auto& c : s)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

/// Lowercase words; apostrophes are dropped ("don't" -> "dont"), other
/// punctuation separates words. Clause punctuation becomes a "," token.
inline std::vector<std::string> tokenize(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty())
            out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (ch == '\'') {
            continue;
        } else {
            flush();
            if (ch == ',' || ch == '.' || ch == ';' || ch == '!' || ch == '?' || ch == ':')
                if (!out.empty() && out.back() != ",")
                    out.push_back(",");
        }
    }
    flush();
    return out;
}

inline std::vector<std::string> tokenizeWords(const std::string& s)
{
    auto t = tokenize(s);
    t.erase(std::remove(t.begin(), t.end(), ","), t.end());
    return t;
}

/// Singular form for simple English plurals.
inline std::string singular(const std::string& w)
{
    if (w.size() > 4 && w.ends_with("ies"))
        return w.substr(0, w.size() - 3) + "y";
    if (w.size() > 4 && (w.ends_with("ches") || w.ends_with("shes") || w.ends_with("sses") || w.ends_with("xes")))
        return w.substr(0, w.size() - 2);
    if (w.size() > 3 && w.ends_with('s') && !w.ends_with("ss"))
        return w.substr(0, w.size() - 1);
    return w;
}

inline std::string join(const std::vector<std::string>& words, std::size_t b, std::size_t e)
{
    std::string s;
    for (std::size_t i = b; i < e; ++i) {
        if (i > b)
            s += ' ';
        s += words[i];
    }
    return s;
}

} // namespace text

// ---------------------------------------------------------------------------
// Offline resolver over simulator metadata

namespace oracle_detail {

inline const std::set<std::string>& graspVerbs()
{
    static const std::set<std::string> v = {
        "give", "gives", "giving", "grasp", "grasps", "grasping", "pick", "picks", "picking", "grab", "grabs",
        "grabbing", "take", "takes", "taking", "hand", "fetch", "fetches", "get", "bring", "brings", "pass",
        "retrieve", "collect", "lift", "seize", "catch", "deliver", "want", "wants", "need", "needs", "find",
        "locate"};
    return v;
}

inline const std::set<std::string>& negators()
{
    static const std::set<std::string> n = {"not", "dont", "never", "instead", "rather", "except", "without",
                                            "no", "nor", "neither", "avoid", "besides"};
    return n;
}

/// Clause splitters besides punctuation.
inline const std::set<std::string>& conjunctions()
{
    static const std::set<std::string> c = {"but", "so", "because", "since", "though", "although", "while",
                                            "then", "however", "whereas"};
    return c;
}

inline const std::set<std::string>& genericNouns()
{
    static const std::set<std::string> g = {"object", "thing", "item", "one", "something", "stuff", "article",
                                            "objects", "things", "items", "ones"};
    return g;
}

/// Household nouns that may be named in an instruction. Anything here that
/// matches no object in the scene is an absent referent.
inline const std::set<std::string>& objectLexicon()
{
    static const std::set<std::string> l = {
        "mug", "cup", "pen", "pencil", "marker", "bottle", "apple", "banana", "orange", "lemon", "pear", "peach",
        "grape", "strawberry", "tomato", "potato", "carrot", "onion", "book", "notebook", "phone", "smartphone",
        "cellphone", "knife", "scissors", "spoon", "fork", "chopsticks", "bowl", "plate", "dish", "ball",
        "tennis ball", "baseball", "football", "basketball", "box", "can", "tin", "jar", "glass", "wine glass",
        "remote", "remote control", "mouse", "keyboard", "laptop", "toy", "teddy bear", "bear", "doll", "car",
        "eraser", "tape", "towel", "sponge", "brush", "toothbrush", "toothpaste", "stapler", "ruler", "calculator",
        "wallet", "key", "keys", "watch", "glasses", "sunglasses", "hat", "cap", "shoe", "sock", "umbrella",
        "battery", "charger", "cable", "headphones", "earphones", "camera", "lamp", "candle", "vase", "flower",
        "plant", "cube", "block", "brick", "lego", "dice", "die", "screwdriver", "hammer", "wrench", "pliers",
        "drill", "bolt", "nut", "screw", "clip", "paperclip", "folder", "envelope", "card", "coin", "soap",
        "shampoo", "lotion", "cream", "snack", "cookie", "biscuit", "cracker", "chips", "candy", "chocolate",
        "cake", "bread", "sandwich", "egg", "cheese", "milk", "juice", "soda", "coffee", "tea", "water bottle",
        "thermos", "kettle", "pot", "pan", "lid", "cylinder", "sphere", "cone", "pyramid", "puck", "tube",
        "tissue", "napkin", "paper", "magazine", "newspaper", "comb", "mirror", "razor", "medicine", "pill",
        "pillbox", "spray", "sprayer", "glue", "highlighter", "crayon", "chalk", "whistle", "rubber duck", "duck",
        "spatula", "ladle", "whisk", "cupboard", "drawer", "tablet", "controller", "joystick", "flashlight",
        "torch", "rope", "string", "ribbon", "bag", "backpack", "basket", "container", "tumbler", "flask",
        "pitcher", "jug", "teapot", "teacup", "saucer", "tray", "sharpener", "cutter", "peeler", "grater",
        "orange juice", "avocado", "kiwi", "mango", "melon", "watermelon", "plum", "cherry", "lime", "garlic",
        "pepper", "cucumber", "eggplant", "corn", "mushroom", "donut", "muffin", "bagel", "yogurt", "cereal"};
    return l;
}

inline const std::set<std::string>& colorWords()
{
    static const std::set<std::string> c = {"red", "green", "blue", "yellow", "black", "white", "orange",
                                            "purple", "pink", "brown", "gray", "grey", "silver", "gold",
                                            "golden", "cyan", "violet", "beige", "transparent"};
    return c;
}

/// Class nouns that name a capability rather than an object ("a toy", "the container").
inline const std::map<std::string, std::string>& categoryNouns()
{
    static const std::map<std::string, std::string> m = {{"toy", "toy"},        {"container", "hold-water"},
                                                         {"vessel", "hold-water"}, {"drink", "hold-water"},
                                                         {"fruit", "edible"},    {"food", "edible"},
                                                         {"snack", "edible"}};
    return m;
}

/// Words after which "can" is the modal verb.
inline const std::set<std::string>& modalSubjects()
{
    static const std::set<std::string> m = {"i", "you", "we", "they", "it", "that", "which", "who", "he", "she"};
    return m;
}

inline std::string canonicalColor(const std::string& c) { return c == "grey" ? "gray" : c == "golden" ? "gold" : c; }

/// Capability tags implied by a phrase (matched on word sequences).
inline const std::vector<std::pair<std::vector<std::string>, std::string>>& capabilityPhrases()
{
    static const std::vector<std::pair<std::vector<std::string>, std::string>> p = {
        {{"hold", "water"}, "hold-water"},   {{"holds", "water"}, "hold-water"},
        {{"holding", "water"}, "hold-water"}, {{"contain", "water"}, "hold-water"},
        {{"carry", "water"}, "hold-water"},  {{"hold", "liquid"}, "hold-water"},
        {{"hold", "coffee"}, "hold-water"},  {{"hold", "tea"}, "hold-water"},
        {{"drink"}, "hold-water"},           {{"drinking"}, "hold-water"},
        {{"pour"}, "hold-water"},            {{"thirsty"}, "hold-water"},
        {{"write"}, "writable"},             {{"writing"}, "writable"},
        {{"draw"}, "writable"},              {{"drawing"}, "writable"},
        {{"sign"}, "writable"},              {{"note", "down"}, "writable"},
        {{"eat"}, "edible"},                 {{"eaten"}, "edible"},
        {{"edible"}, "edible"},              {{"hungry"}, "edible"},
        {{"food"}, "edible"},                {{"fruit"}, "edible"},
        {{"snack"}, "edible"},               {{"cut"}, "cutting"},
        {{"cutting"}, "cutting"},            {{"slice"}, "cutting"},
        {{"read"}, "readable"},              {{"reading"}, "readable"},
        {{"play"}, "toy"},                   {{"roll"}, "rollable"},
        {{"rolls"}, "rollable"},             {{"bounce"}, "rollable"},
        {{"clean"}, "cleaning"},             {{"wipe"}, "cleaning"},
        {{"long"}, "long"},                  {{"round"}, "round"},
        {{"spherical"}, "round"},
    };
    return p;
}

enum class Superlative { None, Longest, Shortest, Largest, Smallest, Tallest };

inline Superlative superlativeOf(const std::string& w)
{
    if (w == "longest") return Superlative::Longest;
    if (w == "shortest") return Superlative::Shortest;
    if (w == "largest" || w == "biggest" || w == "heaviest") return Superlative::Largest;
    if (w == "smallest" || w == "tiniest" || w == "littlest" || w == "lightest") return Superlative::Smallest;
    if (w == "tallest" || w == "highest") return Superlative::Tallest;
    return Superlative::None;
}

struct Region {
    int col = -1; // 0 left, 1 middle, 2 right; -1 unconstrained
    int row = -1; // 0 upper, 1 middle, 2 lower
};

/// One mention of an object: noun (possibly multi-word) with its modifiers.
struct Reference {
    std::string noun; // empty for generic ("object")
    std::set<std::string> colors;
    std::string capability; // set for class nouns ("toy")
};

enum class Relation { None, Between, NextTo, LeftOf, RightOf, Above, Below };

struct Query {
    std::vector<Reference> targets; // alternatives named in the target phrase ("the pen or pencil")
    std::set<std::string> colors;
    std::set<std::string> capabilities;
    Superlative superlative = Superlative::None;
    Region region;
    Relation relation = Relation::None;
    std::vector<Reference> landmarks;
    std::vector<Reference> excluded;
    std::vector<std::string> absentNouns; // named nouns with no object in the scene
    bool hasContent = false;              // any noun or descriptor at all
};

struct Vocabulary {
    // Every phrase (lowercase words) that names a scene object, with the ids it names.
    std::map<std::vector<std::string>, std::set<int>> names;
    std::size_t longest = 1;

    explicit Vocabulary(const Scene& s)
    {
        for (const auto& o : s.objects) {
            add(o.name, o.id);
            for (const auto& syn : o.synonyms)
                add(syn, o.id);
        }
        for (const auto& w : objectLexicon()) {
            const auto words = text::tokenizeWords(w);
            names.try_emplace(words);
            longest = std::max(longest, words.size());
        }
    }

    void add(const std::string& phrase, int id)
    {
        const auto words = text::tokenizeWords(phrase);
        if (words.empty())
            return;
        names[words].insert(id);
        longest = std::max(longest, words.size());
        auto plural = words;
        plural.back() += "s";
        names[plural].insert(id);
    }

    /// Longest noun phrase starting at words[i]; returns its length (0 if none).
    std::size_t match(const std::vector<std::string>& words, std::size_t i, std::vector<std::string>& phrase) const
    {
        for (std::size_t len = std::min(longest, words.size() - i); len >= 1; --len) {
            std::vector<std::string> cand(words.begin() + i, words.begin() + i + len);
            if (names.count(cand)) {
                phrase = cand;
                return len;
            }
            auto sing = cand;
            sing.back() = text::singular(sing.back());
            if (sing != cand && names.count(sing)) {
                phrase = sing;
                return len;
            }
        }
        return 0;
    }

    std::set<int> ids(const std::string& noun) const
    {
        const auto it = names.find(text::tokenizeWords(noun));
        return it == names.end() ? std::set<int>{} : it->second;
    }
};

struct Clause {
    std::vector<std::string> words;
    bool negated = false;
    bool hasVerb = false;
    std::size_t verbEnd = 0; // index after the first grasp verb
};

inline std::vector<Clause> splitClauses(const std::vector<std::string>& tokens)
{
    std::vector<Clause> out(1);
    auto boundary = [&] {
        if (!out.back().words.empty())
            out.emplace_back();
    };
    for (const auto& t : tokens) {
        if (t == ",") {
            if (out.back().words.empty())
                out.back().negated = false;
            boundary();
            continue;
        }
        if (conjunctions().count(t)) {
            boundary();
            continue;
        }
        // "instead of X" / "rather than X" / "except X" open an excluded clause.
        if (t == "instead" || t == "rather" || t == "except" || t == "besides") {
            boundary();
            out.back().negated = true;
            continue;
        }
        auto& c = out.back();
        if (negators().count(t))
            c.negated = true;
        c.words.push_back(t);
        if (graspVerbs().count(t) && !c.hasVerb) {
            c.hasVerb = true;
            c.verbEnd = c.words.size();
        }
    }
    if (out.back().words.empty() && out.size() > 1)
        out.pop_back();
    return out;
}

/// Nouns and color modifiers of a word span.
inline std::vector<Reference> references(const std::vector<std::string>& w, std::size_t b, std::size_t e,
                                         const Vocabulary& vocab, std::set<std::string>* loose = nullptr)
{
    std::vector<Reference> refs;
    std::set<std::string> pending;
    for (std::size_t i = b; i < e;) {
        const auto& t = w[i];
        const bool nextIsNoun = i + 1 < e && (genericNouns().count(w[i + 1]) || colorWords().count(w[i + 1]) ||
                                              vocab.names.count({w[i + 1]}) ||
                                              vocab.names.count({text::singular(w[i + 1])}));
        if (colorWords().count(t) && (nextIsNoun || !vocab.names.count({t}))) {
            pending.insert(canonicalColor(t));
            ++i;
            continue;
        }
        if (t == "can" && i > 0 && modalSubjects().count(w[i - 1])) {
            ++i;
            continue;
        }
        std::vector<std::string> phrase;
        if (const auto len = vocab.match(w, i, phrase)) {
            const auto noun = text::join(phrase, 0, phrase.size());
            const auto category = categoryNouns().find(noun);
            if (category != categoryNouns().end() && vocab.ids(noun).empty())
                refs.push_back({"", pending, category->second});
            else
                refs.push_back({noun, pending, ""});
            pending.clear();
            i += len;
            continue;
        }
        if (genericNouns().count(t) || (categoryNouns().count(t) && vocab.ids(t).empty())) {
            const auto category = categoryNouns().find(t);
            refs.push_back({"", pending, category == categoryNouns().end() ? "" : category->second});
            pending.clear();
        }
        ++i;
    }
    if (!pending.empty()) {
        // Bare color ("the red one" handled above; "the red"): applies to the span.
        if (loose)
            loose->insert(pending.begin(), pending.end());
        else
            refs.push_back({"", pending, ""});
    }
    return refs;
}

inline Query parse(const std::vector<Clause>& clauses, std::size_t target, const Vocabulary& vocab)
{
    Query q;
    const auto& w = clauses[target].words;
    std::size_t b = clauses[target].verbEnd, e = w.size();
    // "give me the cup and not the mug": the words after a negator exclude.
    for (std::size_t i = b; i < e; ++i)
        if (negators().count(w[i])) {
            for (const auto& r : references(w, i + 1, e, vocab))
                if (!r.noun.empty() || !r.colors.empty())
                    q.excluded.push_back(r);
            e = i;
            break;
        }

    // Relation phrase: everything from the relation keyword on names landmarks.
    std::size_t relAt = e;
    for (std::size_t i = b; i < e && q.relation == Relation::None; ++i) {
        const auto& t = w[i];
        const bool of = i + 1 < e && w[i + 1] == "of";
        if (t == "between" || t == "among" || t == "amid") {
            q.relation = Relation::Between;
            relAt = i;
        } else if (t == "next" && i + 1 < e && w[i + 1] == "to") {
            q.relation = Relation::NextTo;
            relAt = i;
        } else if (t == "beside" || t == "near" || t == "nearest" || t == "closest" ||
                   t == "by" || t == "adjacent" || (t == "close" && i + 1 < e && w[i + 1] == "to")) {
            q.relation = Relation::NextTo;
            relAt = i;
        } else if ((t == "left" || t == "right") && of) {
            q.relation = t == "left" ? Relation::LeftOf : Relation::RightOf;
            relAt = i;
        } else if ((t == "above" || t == "behind") || (t == "front" && of && i > 0 && w[i - 1] == "in")) {
            // Image-space: behind/above = smaller v, in front of/below = larger v.
            q.relation = (t == "front") ? Relation::Below : Relation::Above;
            relAt = t == "front" ? i - 1 : i;
        } else if (t == "below" || t == "under" || t == "beneath") {
            q.relation = Relation::Below;
            relAt = i;
        }
    }

    if (q.relation != Relation::None) {
        q.landmarks = references(w, relAt, e, vocab);
        std::erase_if(q.landmarks,
                      [](const Reference& r) { return r.noun.empty() && r.colors.empty() && r.capability.empty(); });
        if (q.landmarks.empty()) {
            q.relation = Relation::None;
            relAt = e;
        }
    }
    q.targets = references(w, b, relAt, vocab, &q.colors);

    for (std::size_t i = b; i < relAt; ++i) {
        const auto& t = w[i];
        if (const auto s = superlativeOf(t); s != Superlative::None)
            q.superlative = s;
        // "right now", "right away": not a direction.
        if (t == "right" && i + 1 < relAt && (w[i + 1] == "now" || w[i + 1] == "away" || w[i + 1] == "here"))
            continue;
        if (t == "left" || t == "leftmost")
            q.region.col = 0;
        else if (t == "right" || t == "rightmost")
            q.region.col = 2;
        else if (t == "top" || t == "upper" || t == "far" || t == "back" || t == "topmost")
            q.region.row = 0;
        else if (t == "bottom" || t == "lower" || t == "near" || t == "bottommost")
            q.region.row = 2;
        else if (t == "middle" || t == "center" || t == "centre" || t == "central") {
            if (q.region.col < 0)
                q.region.col = 1;
            if (q.region.row < 0)
                q.region.row = 1;
        }
    }
    // "middle left" style: middle only fills the unconstrained axis.
    if (q.region.col >= 0 && q.region.row == 1) {
        bool explicitMiddleRow = false;
        for (std::size_t i = b; i < relAt; ++i)
            if (w[i] == "middle" || w[i] == "center" || w[i] == "centre" || w[i] == "central")
                explicitMiddleRow = true;
        if (!explicitMiddleRow)
            q.region.row = -1;
    }

    // Capabilities anywhere in the non-negated clauses ("I'm thirsty, give me ...").
    for (std::size_t c = 0; c < clauses.size(); ++c) {
        if (c != target && clauses[c].negated)
            continue;
        const auto& cw = clauses[c].words;
        const std::size_t cb = c == target ? b : 0, ce = c == target ? relAt : cw.size();
        if (c != target && clauses[c].hasVerb)
            continue;
        for (const auto& [phrase, tag] : capabilityPhrases())
            for (std::size_t i = cb; i + phrase.size() <= ce; ++i)
                if (std::equal(phrase.begin(), phrase.end(), cw.begin() + i)) {
                    // "long" as an adjective only when not part of "longest"/"how long".
                    if (tag == "long" && i > 0 && cw[i - 1] == "how")
                        continue;
                    q.capabilities.insert(tag);
                }
    }

    for (std::size_t c = 0; c < clauses.size(); ++c)
        if (c != target && clauses[c].negated) {
            const auto refs = references(clauses[c].words, 0, clauses[c].words.size(), vocab);
            for (const auto& r : refs)
                if (!r.noun.empty() || !r.colors.empty() || !r.capability.empty())
                    q.excluded.push_back(r);
        }

    for (const auto& r : q.targets)
        if (!r.noun.empty() && vocab.ids(r.noun).empty())
            q.absentNouns.push_back(r.noun);
    for (const auto& r : q.landmarks)
        if (!r.noun.empty() && vocab.ids(r.noun).empty())
            q.absentNouns.push_back(r.noun);

    q.hasContent = !q.targets.empty() || !q.colors.empty() || !q.capabilities.empty() ||
                   q.superlative != Superlative::None || q.region.col >= 0 || q.region.row >= 0 ||
                   q.relation != Relation::None;
    return q;
}

struct Visible {
    const SceneObject* object;
    BBox2D bbox;
    Pixel center;
};

inline bool matches(const Reference& r, const Visible& v, const Vocabulary& vocab)
{
    if (!r.noun.empty() && !vocab.ids(r.noun).count(v.object->id))
        return false;
    if (!r.capability.empty() && !v.object->capabilities.count(r.capability))
        return false;
    for (const auto& c : r.colors)
        if (canonicalColor(text::lower(v.object->color.label)) != c)
            return false;
    return true;
}

inline double segmentDistance(Pixel p, Pixel a, Pixel b)
{
    const double dx = b.u - a.u, dy = b.v - a.v;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.u - a.u) * dx + (p.v - a.v) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.u - (a.u + t * dx), p.v - (a.v + t * dy));
}

inline std::string describe(const Reference& r)
{
    std::string s;
    for (const auto& c : r.colors)
        s += c + " ";
    return s + (r.noun.empty() ? "object" : r.noun);
}

/// Height of the object's highest point above the table plane.
inline double topHeight(const SceneObject& o, const Plane& plane)
{
    const Shape& sh = o.shape;
    const Vec3 n = o.pose.rotation().transpose() * plane.normal;
    double half = 0.0;
    switch (sh.kind) {
    case ShapeKind::Box: half = 0.5 * (std::abs(n.x()) * sh.dx + std::abs(n.y()) * sh.dy + std::abs(n.z()) * sh.dz); break;
    case ShapeKind::Cylinder:
        half = 0.5 * std::abs(n.z()) * sh.height + sh.radius * std::sqrt(std::max(0.0, 1.0 - n.z() * n.z()));
        break;
    case ShapeKind::Sphere: half = sh.radius; break;
    }
    return plane.signedDistance(o.pose.translation()) + half;
}

inline std::string irrelevantReply(const std::vector<std::string>& words)
{
    auto has = [&](std::initializer_list<const char*> ws) {
        for (const char* w : ws)
            if (std::find(words.begin(), words.end(), w) != words.end())
                return true;
        return false;
    };
    if (has({"who", "name"}) && has({"you", "your"}))
        return "I am a target-oriented grasping assistant. Tell me which object on the table you want, for "
               "example \"Give me the mug.\", and I will pick it up for you.";
    if (has({"what", "how"}) && has({"can", "do", "help", "use"}) && has({"you", "your", "i"}))
        return "I can help you grasp objects. Describe the object you want by name, color, use or position, "
               "for example \"Give me the red object on the left.\"";
    if (has({"hello", "hi", "hey", "morning", "evening", "afternoon"}))
        return "Hello! I can help you grasp objects on the table. Tell me which one you want.";
    if (has({"thank", "thanks"}))
        return "You are welcome. Let me know if you want me to grasp something else.";
    return "That does not sound like a grasping request, so I will not move the arm. I can help you grasp "
           "objects: tell me which object you want.";
}

} // namespace oracle_detail

/// Deterministic resolver over simulator ground truth. `cloud` must be the
/// rendered cloud of `s` when given (boxes are computed from it).
inline Triage oracleResolve(const Instruction& instruction, const Scene& s, const PointCloud* cloud = nullptr)
{
    using namespace oracle_detail;
    const auto tokens = text::tokenize(instruction.text());
    const auto clauses = splitClauses(tokens);
    const Vocabulary vocab(s);

    // Target clause: the first non-negated clause with a grasp verb and content.
    std::optional<std::size_t> target;
    for (std::size_t c = 0; c < clauses.size() && !target; ++c) {
        if (!clauses[c].hasVerb)
            continue;
        // A negated grasp clause ("don't give me the mug") only excludes.
        bool negatedBeforeVerb = false;
        for (std::size_t i = 0; i < clauses[c].verbEnd; ++i)
            if (negators().count(clauses[c].words[i]))
                negatedBeforeVerb = true;
        if (negatedBeforeVerb)
            continue;
        if (parse(clauses, c, vocab).hasContent)
            target = c;
    }
    if (!target)
        return Triage::irrelevant(irrelevantReply(text::tokenizeWords(instruction.text())));

    // Negated grasp clauses are exclusions.
    auto marked = clauses;
    for (std::size_t c = 0; c < marked.size(); ++c)
        if (c != *target && marked[c].hasVerb && !marked[c].negated) {
            for (std::size_t i = 0; i < marked[c].verbEnd; ++i)
                if (negators().count(marked[c].words[i]))
                    marked[c].negated = true;
        }
    const Query q = parse(marked, *target, vocab);

    if (!q.absentNouns.empty())
        return Triage::noTarget("There is no " + q.absentNouns.front() +
                                " in the workspace, so I suspended the grasp task. Please change the target.");

    const PointCloud rendered = cloud ? PointCloud{} : renderCloud(s, s.samplesPerM2);
    const PointCloud& pc = cloud ? *cloud : rendered;
    std::vector<Visible> visible;
    for (const auto& o : s.objects) {
        try {
            const BBox2D b = groundTruthBBox(s, o.id, pc);
            visible.push_back({&o, b, b.center()});
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NotVisible)
                throw;
        }
    }

    auto noTarget = [&](const std::string& what) {
        return Triage::noTarget("There is no " + what +
                                " in the workspace, so I suspended the grasp task. Please change the target.");
    };

    // Landmarks resolve to one object each (smallest id wins ties).
    std::vector<const Visible*> landmarks;
    for (const auto& r : q.landmarks) {
        const Visible* found = nullptr;
        for (const auto& v : visible)
            if (matches(r, v, vocab) &&
                std::none_of(landmarks.begin(), landmarks.end(), [&](const Visible* l) { return l == &v; }) &&
                (!found || v.object->id < found->object->id))
                found = &v;
        if (!found)
            return noTarget(describe(r));
        landmarks.push_back(found);
    }

    std::vector<const Visible*> cand;
    for (const auto& v : visible) {
        if (std::any_of(landmarks.begin(), landmarks.end(), [&](const Visible* l) { return l == &v; }))
            continue;
        if (!q.targets.empty() &&
            std::none_of(q.targets.begin(), q.targets.end(), [&](const Reference& r) { return matches(r, v, vocab); }))
            continue;
        const auto color = canonicalColor(text::lower(v.object->color.label));
        if (!q.colors.empty() && !q.colors.count(color))
            continue;
        if (!std::all_of(q.capabilities.begin(), q.capabilities.end(),
                         [&](const std::string& c) { return v.object->capabilities.count(c) > 0; }))
            continue;
        if (std::any_of(q.excluded.begin(), q.excluded.end(), [&](const Reference& r) { return matches(r, v, vocab); }))
            continue;
        const double W = s.camera.width, H = s.camera.height;
        const int col = v.center.u < W / 3.0 ? 0 : v.center.u < 2.0 * W / 3.0 ? 1 : 2;
        const int row = v.center.v < H / 3.0 ? 0 : v.center.v < 2.0 * H / 3.0 ? 1 : 2;
        if ((q.region.col >= 0 && q.region.col != col) || (q.region.row >= 0 && q.region.row != row))
            continue;
        cand.push_back(&v);
    }

    if (q.relation == Relation::LeftOf || q.relation == Relation::RightOf || q.relation == Relation::Above ||
        q.relation == Relation::Below) {
        const Pixel l = landmarks.front()->center;
        // Offset along the relation direction and across it.
        auto along = [&](const Visible* v) {
            const double du = v->center.u - l.u, dv = v->center.v - l.v;
            switch (q.relation) {
            case Relation::LeftOf: return std::pair{-du, std::abs(dv)};
            case Relation::RightOf: return std::pair{du, std::abs(dv)};
            case Relation::Above: return std::pair{-dv, std::abs(du)};
            default: return std::pair{dv, std::abs(du)};
            }
        };
        std::erase_if(cand, [&](const Visible* v) { return !(along(v).first > 0.0); });
        // Prefer objects inside the 45 degree cone around the direction.
        if (std::any_of(cand.begin(), cand.end(), [&](const Visible* v) { return along(v).first >= along(v).second; }))
            std::erase_if(cand, [&](const Visible* v) { return along(v).first < along(v).second; });
    }

    if (cand.empty()) {
        Reference what = q.targets.empty() ? Reference{} : q.targets.front();
        what.colors.insert(q.colors.begin(), q.colors.end());
        std::string d = describe(what);
        if (!q.capabilities.empty())
            d += " that fits the description";
        if (q.region.col >= 0 || q.region.row >= 0)
            d += " in that part of the scene";
        if (q.relation != Relation::None)
            d += " at that position";
        return noTarget(d);
    }

    // Ranking key: lower is better; ties go to the smallest id.
    std::function<double(const Visible&)> key = [](const Visible&) { return 0.0; };
    if (q.relation == Relation::Between && landmarks.size() >= 2) {
        const Pixel a = landmarks[0]->center, b = landmarks[1]->center;
        key = [a, b](const Visible& v) { return segmentDistance(v.center, a, b); };
    } else if (q.relation != Relation::None) {
        const Pixel l = landmarks.front()->center;
        key = [l](const Visible& v) { return std::hypot(v.center.u - l.u, v.center.v - l.v); };
    } else if (q.superlative != Superlative::None) {
        const auto sup = q.superlative;
        const auto plane = s.tablePlane();
        key = [sup, plane](const Visible& v) {
            const Shape& sh = v.object->shape;
            switch (sup) {
            case Superlative::Longest: return -sh.largestDimension();
            case Superlative::Shortest: return sh.largestDimension();
            case Superlative::Largest: return -sh.volume();
            case Superlative::Smallest: return sh.volume();
            case Superlative::Tallest: return plane ? -topHeight(*v.object, *plane) : -sh.largestDimension();
            default: return 0.0;
            }
        };
    }
    const Visible* best = nullptr;
    double bestKey = std::numeric_limits<double>::infinity();
    for (const auto* v : cand) {
        const double k = key(*v);
        if (!best || k < bestKey - 1e-12 || (std::abs(k - bestKey) <= 1e-12 && v->object->id < best->object->id)) {
            best = v;
            bestKey = k;
        }
    }
    Triage t = Triage::target(best->bbox, best->object->name);
    t.objectId = best->object->id;
    return t;
}

class OracleDetector : public Detector {
public:
    std::string name() const override { return "oracle"; }

    Detection detect(const Instruction& instruction, const SceneView& view) override
    {
        if (!view.scene)
            fail(ErrorCode::InvalidArgument, "the oracle detector needs simulator scene metadata");
        return {oracleResolve(instruction, *view.scene, view.cloud), {}};
    }
};

// ---------------------------------------------------------------------------
// Prompts and the remote wire client

struct PromptSet {
    std::string systemPreamble;
    std::vector<std::string> taskRules;
    std::string boxGrammar = "<box>(x1,y1),(x2,y2)</box>";

    void validate() const;

    static PromptSet defaults()
    {
        PromptSet p;
        p.systemPreamble =
            "You are the perception module of a robot arm that picks up objects from a table for a person. "
            "You see one RGB image of the workspace and receive one instruction.";
        p.taskRules = {
            "Decide which of three categories the instruction belongs to: (1) a request to grasp an object "
            "that is visible in the image, (2) a request to grasp an object that is not in the image, (3) "
            "anything that is not a grasping request.",
            "Category 1: locate the single object that best matches the instruction, taking names, colors, "
            "uses, sizes and positions into account, and answer with its reference and box only, e.g. "
            "<ref>mug</ref><box>(x1,y1),(x2,y2)</box>, coordinates normalized to 0-999.",
            "Category 2: do not output any box. Answer: There is no target object in the workspace, please "
            "change the target.",
            "Category 3: do not output any box. Answer the person briefly and explain that you can help them "
            "grasp objects.",
        };
        return p;
    }
};

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

inline constexpr const char* kImagePlaceholder = "<image>";

inline std::vector<ChatMessage> buildPromptMessages(const PromptSet& p, const Instruction& i)
{
    p.validate();
    std::vector<ChatMessage> out;
    if (!p.systemPreamble.empty())
        out.push_back({"system", p.systemPreamble});
    std::string rules;
    for (std::size_t n = 0; n < p.taskRules.size(); ++n)
        rules += std::to_string(n + 1) + ". " + p.taskRules[n] + "\n";
    rules += "Box format: " + p.boxGrammar;
    out.push_back({"system", rules});
    out.push_back({"user", kImagePlaceholder});
    out.push_back({"user", i.text()});
    return out;
}

struct ResponseParseOptions {
    std::vector<std::string> noTargetPhrases = {"no target", "there is no", "not in the workspace",
                                                "no such object", "cannot find", "can't find", "could not find",
                                                "does not exist", "not present", "not found"};
};

struct ParsedResponse {
    Triage triage = Triage::irrelevant("(empty)");
    std::vector<BBox2D> extraBoxes; // boxes after the first, mapped to pixels
};

namespace vlm_detail {

inline const std::regex& boxToken()
{
    static const std::regex re(R"(<box>\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*,\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*</box>)");
    return re;
}

inline const std::regex& refToken()
{
    static const std::regex re(R"(<ref>([^<]*)</ref>)");
    return re;
}

} // namespace vlm_detail

/// Parses raw model output. The first box token wins; later ones are
/// returned in extraBoxes.
inline ParsedResponse parseVlmResponseDetailed(const std::string& raw, int imageW, int imageH,
                                               const ResponseParseOptions& opts = {})
{
    if (trim(raw).empty())
        fail(ErrorCode::MalformedBox, "empty model response");
    if (imageW <= 0 || imageH <= 0)
        fail(ErrorCode::InvalidArgument, "image size must be positive");
    ParsedResponse out;
    auto mapBox = [&](const std::smatch& m) {
        long long c[4];
        for (int n = 0; n < 4; ++n) {
            const std::string s = m[n + 1].str();
            if (s.size() > 6)
                fail(ErrorCode::MalformedBox, "box coordinate out of range: " + s);
            c[n] = std::stoll(s);
            if (c[n] < 0 || c[n] >= 1000)
                fail(ErrorCode::MalformedBox, "box coordinate outside [0,1000): " + s);
        }
        if (c[0] >= c[2] || c[1] >= c[3])
            fail(ErrorCode::MalformedBox, "inverted or empty box " + m.str());
        return BBox2D{c[0] / 1000.0 * imageW, c[1] / 1000.0 * imageH, c[2] / 1000.0 * imageW,
                      c[3] / 1000.0 * imageH};
    };
    std::vector<std::pair<std::size_t, BBox2D>> boxes;
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), vlm_detail::boxToken()); it != std::sregex_iterator();
         ++it)
        boxes.emplace_back(static_cast<std::size_t>(it->position()), mapBox(*it));
    // Something that looks like a box but does not parse is malformed too.
    if (boxes.empty() && raw.find("<box>") != std::string::npos)
        fail(ErrorCode::MalformedBox, "unparseable box token");
    if (!boxes.empty()) {
        std::string label = "target";
        const std::string before = raw.substr(0, boxes.front().first);
        for (auto it = std::sregex_iterator(before.begin(), before.end(), vlm_detail::refToken());
             it != std::sregex_iterator(); ++it)
            label = trim((*it)[1].str());
        if (label.empty())
            label = "target";
        out.triage = Triage::target(boxes.front().second, label);
        for (std::size_t n = 1; n < boxes.size(); ++n)
            out.extraBoxes.push_back(boxes[n].second);
        return out;
    }
    const std::string low = text::lower(raw);
    for (const auto& phrase : opts.noTargetPhrases)
        if (!phrase.empty() && low.find(text::lower(phrase)) != std::string::npos) {
            out.triage = Triage::noTarget(trim(raw));
            return out;
        }
    out.triage = Triage::irrelevant(trim(raw));
    return out;
}

inline Triage parseVlmResponse(const std::string& raw, int imageW, int imageH, const ResponseParseOptions& opts = {})
{
    return parseVlmResponseDetailed(raw, imageW, imageH, opts).triage;
}

inline void PromptSet::validate() const
{
    if (taskRules.empty())
        fail(ErrorCode::InvalidArgument, "PromptSet needs at least one task rule");
    // The grammar has to be something the response parser accepts.
    std::string probe = boxGrammar;
    for (const char* name : {"x1", "y1", "x2", "y2"}) {
        const auto pos = probe.find(name);
        if (pos == std::string::npos)
            fail(ErrorCode::InvalidArgument, "boxGrammar must mention x1, y1, x2, y2");
        const char* value = name[0] == 'x' ? (name[1] == '1' ? "100" : "500") : (name[1] == '1' ? "100" : "500");
        probe.replace(pos, 2, value);
    }
    try {
        if (!parseVlmResponse(probe, 1000, 1000).isTarget())
            fail(ErrorCode::InvalidArgument, "boxGrammar is not parseable as a box");
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MalformedBox)
            fail(ErrorCode::InvalidArgument, "boxGrammar is not parseable as a box");
        throw;
    }
}

inline std::string base64Encode(const std::vector<std::uint8_t>& bytes)
{
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

struct RemoteEndpoint {
    std::string url = "http://127.0.0.1:8001/v1/chat";
    std::string authEnv = "TARGETGRASP_VLM_TOKEN"; // bearer token variable; unset means no header
    int retries = 2;
    double timeoutSeconds = 30.0;
    double backoffSeconds = 0.5; // first retry delay, doubled per attempt
    std::string boxGrammarId = "norm999";
    ResponseParseOptions parse;

    void validate() const
    {
        if (retries < 0)
            fail(ErrorCode::InvalidArgument, "retries must be >= 0");
        if (!(timeoutSeconds > 0.0) || !(backoffSeconds >= 0.0))
            fail(ErrorCode::InvalidArgument, "timeout must be positive and backoff non-negative");
        if (boxGrammarId != "norm999")
            fail(ErrorCode::InvalidArgument, "unknown box grammar '" + boxGrammarId + "'");
        if (!url.starts_with("http://"))
            fail(ErrorCode::InvalidArgument, "endpoint URL must start with http://");
    }
};

namespace vlm_detail {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;
};

inline SplitUrl splitUrl(const std::string& url)
{
    const auto scheme = url.find("://");
    if (scheme == std::string::npos)
        fail(ErrorCode::InvalidArgument, "bad URL " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos)
        return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

} // namespace vlm_detail

inline nlohmann::json requestBody(const std::vector<ChatMessage>& messages, const RgbImage& image)
{
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages)
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"messages", msgs}, {"image_png_b64", base64Encode(encodePng(image))}};
}

/// One triage round trip. Transport errors and 5xx responses are retried
/// with exponential backoff; anything else is final.
inline ParsedResponse remoteTriageDetailed(const RemoteEndpoint& ep, const PromptSet& p, const Instruction& i,
                                           const RgbImage& image)
{
    ep.validate();
    const auto body = requestBody(buildPromptMessages(p, i), image).dump();
    const auto url = vlm_detail::splitUrl(ep.url);
    httplib::Headers headers;
    if (!ep.authEnv.empty())
        if (const char* token = std::getenv(ep.authEnv.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);

    std::string lastError;
    double delay = ep.backoffSeconds;
    for (int attempt = 0; attempt <= ep.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            delay *= 2.0;
        }
        httplib::Client client(url.origin);
        const auto secs = static_cast<time_t>(ep.timeoutSeconds);
        const auto usecs = static_cast<time_t>((ep.timeoutSeconds - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        const auto res = client.Post(url.path, headers, body, "application/json");
        if (!res) {
            lastError = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            lastError = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            fail(ErrorCode::BackendUnavailable, "model endpoint answered HTTP " + std::to_string(res->status));
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::BackendUnavailable, "model endpoint returned invalid JSON");
        }
        if (!j.is_object() || !j.contains("text") || !j.at("text").is_string())
            fail(ErrorCode::BackendUnavailable, "model response has no \"text\" string");
        return parseVlmResponseDetailed(j.at("text").get<std::string>(), image.width(), image.height(), ep.parse);
    }
    fail(ErrorCode::BackendUnavailable,
         "model endpoint unavailable after " + std::to_string(ep.retries + 1) + " attempts (" + lastError + ")");
}

inline Triage remoteTriage(const RemoteEndpoint& ep, const PromptSet& p, const Instruction& i, const RgbImage& image)
{
    return remoteTriageDetailed(ep, p, i, image).triage;
}

class RemoteDetector : public Detector {
public:
    RemoteDetector(RemoteEndpoint endpoint, PromptSet prompts) : endpoint_(std::move(endpoint)), prompts_(std::move(prompts))
    {
        endpoint_.validate();
        prompts_.validate();
    }

    std::string name() const override { return "remote"; }

    Detection detect(const Instruction& instruction, const SceneView& view) override
    {
        if (!view.image)
            fail(ErrorCode::InvalidArgument, "the remote detector needs an RGB raster");
        auto parsed = remoteTriageDetailed(endpoint_, prompts_, instruction, *view.image);
        Detection d{parsed.triage, {}};
        for (const auto& b : parsed.extraBoxes)
            d.notes.push_back("ignored extra box (" + std::to_string(b.x1) + "," + std::to_string(b.y1) + "," +
                              std::to_string(b.x2) + "," + std::to_string(b.y2) + ")");
        return d;
    }

private:
    RemoteEndpoint endpoint_;
    PromptSet prompts_;
};

} // namespace targetgrasp
