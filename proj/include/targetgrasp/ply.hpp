#pragma once

// ASCII PLY ingestion/export for point clouds. Only the vertex element is
// interpreted; x, y, z are required and any other property is skipped. An
// integer `object_id` vertex property, when present, fills PointCloud::objectIds.

#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"

namespace targetgrasp::ply {

namespace detail {

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties; // "list" properties are recorded as "list:<name>"
};

inline std::string nextNonEmptyLine(std::istream& in, std::size_t& lineNo)
{
    std::string line;
    while (std::getline(in, line)) {
        ++lineNo;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos)
            return line;
    }
    fail(ErrorCode::Io, "unexpected end of PLY data at line " + std::to_string(lineNo));
}

} // namespace detail

inline PointCloud read(std::istream& in)
{
    std::size_t lineNo = 0;
    if (detail::nextNonEmptyLine(in, lineNo) != "ply")
        fail(ErrorCode::Io, "missing 'ply' magic");

    std::vector<detail::Element> elements;
    bool ascii = false;
    for (;;) {
        std::istringstream ls(detail::nextNonEmptyLine(in, lineNo));
        std::string keyword;
        ls >> keyword;
        if (keyword == "end_header")
            break;
        if (keyword == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii")
                fail(ErrorCode::Io, "only ASCII PLY is supported (got '" + fmt + "')");
            ascii = true;
        } else if (keyword == "element") {
            detail::Element e;
            long long count = -1;
            ls >> e.name >> count;
            if (!ls || count < 0)
                fail(ErrorCode::Io, "bad element line " + std::to_string(lineNo));
            e.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (elements.empty())
                fail(ErrorCode::Io, "property before any element at line " + std::to_string(lineNo));
            std::string type, name;
            ls >> type;
            if (type == "list") {
                std::string countType, itemType;
                ls >> countType >> itemType >> name;
                elements.back().properties.push_back("list:" + name);
            } else {
                ls >> name;
                elements.back().properties.push_back(name);
            }
        } else if (keyword == "comment" || keyword == "obj_info") {
            continue;
        } else {
            fail(ErrorCode::Io, "unknown header keyword '" + keyword + "'");
        }
    }
    if (!ascii)
        fail(ErrorCode::Io, "PLY header has no format line");

    PointCloud cloud;
    bool sawVertex = false;
    for (const auto& e : elements) {
        if (e.name != "vertex") {
            for (std::size_t i = 0; i < e.count; ++i)
                detail::nextNonEmptyLine(in, lineNo);
            continue;
        }
        sawVertex = true;
        int ix = -1, iy = -1, iz = -1, iid = -1;
        for (int i = 0; i < static_cast<int>(e.properties.size()); ++i) {
            const auto& p = e.properties[i];
            if (p.rfind("list:", 0) == 0)
                fail(ErrorCode::Io, "list properties on vertices are not supported");
            if (p == "x") ix = i;
            else if (p == "y") iy = i;
            else if (p == "z") iz = i;
            else if (p == "object_id") iid = i;
        }
        if (ix < 0 || iy < 0 || iz < 0)
            fail(ErrorCode::Io, "vertex element lacks x, y, z properties");
        cloud.points.reserve(e.count);
        if (iid >= 0)
            cloud.objectIds.emplace().reserve(e.count);
        std::vector<double> values(e.properties.size());
        for (std::size_t i = 0; i < e.count; ++i) {
            std::istringstream ls(detail::nextNonEmptyLine(in, lineNo));
            for (auto& v : values)
                if (!(ls >> v))
                    fail(ErrorCode::Io, "bad vertex row at line " + std::to_string(lineNo));
            Point3 p(values[ix], values[iy], values[iz]);
            if (!isFinite(p))
                fail(ErrorCode::Io, "non-finite vertex at line " + std::to_string(lineNo));
            cloud.points.push_back(p);
            if (iid >= 0)
                cloud.objectIds->push_back(static_cast<int>(values[iid]));
        }
    }
    if (!sawVertex)
        fail(ErrorCode::Io, "PLY has no vertex element");
    return cloud;
}

inline void write(std::ostream& out, const PointCloud& cloud)
{
    cloud.validate();
    out << "ply\nformat ascii 1.0\ncomment targetgrasp point cloud (camera frame, meters)\n";
    out << "element vertex " << cloud.points.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.objectIds)
        out << "property int object_id\n";
    out << "end_header\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const auto& p = cloud.points[i];
        out << p.x() << ' ' << p.y() << ' ' << p.z();
        if (cloud.objectIds)
            out << ' ' << (*cloud.objectIds)[i];
        out << '\n';
    }
}

inline PointCloud readFile(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::Io, "cannot open " + path);
    return read(in);
}

inline void writeFile(const std::string& path, const PointCloud& cloud)
{
    std::ofstream out(path);
    if (!out)
        fail(ErrorCode::Io, "cannot write " + path);
    write(out, cloud);
}

} // namespace targetgrasp::ply
