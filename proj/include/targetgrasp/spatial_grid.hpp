#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "targetgrasp/geometry.hpp"

namespace targetgrasp {

/// Dense uniform voxel grid over a point set, built with a counting sort.
/// Holds a copy of the points so it stays valid when the source moves.
class SpatialGrid {
public:
    SpatialGrid() = default;

    SpatialGrid(std::span<const Point3> points, double cellSize) : points_(points.begin(), points.end())
    {
        if (points_.empty())
            return;
        lo_ = hi_ = points_.front();
        for (const auto& p : points_) {
            lo_ = lo_.cwiseMin(p);
            hi_ = hi_.cwiseMax(p);
        }
        cell_ = cellSize;
        // Keep the dense grid bounded for widely spread clouds.
        for (;;) {
            const Vec3 ext = (hi_ - lo_) / cell_;
            dims_[0] = static_cast<int>(ext.x()) + 1;
            dims_[1] = static_cast<int>(ext.y()) + 1;
            dims_[2] = static_cast<int>(ext.z()) + 1;
            if (static_cast<double>(dims_[0]) * dims_[1] * dims_[2] <= 4e6)
                break;
            cell_ *= 2.0;
        }
        const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
        start_.assign(cells + 1, 0);
        std::vector<std::uint32_t> cellOf(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            cellOf[i] = static_cast<std::uint32_t>(flat(coord(points_[i])));
            ++start_[cellOf[i] + 1];
        }
        for (std::size_t c = 0; c < cells; ++c)
            start_[c + 1] += start_[c];
        order_.resize(points_.size());
        std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
        for (std::size_t i = 0; i < points_.size(); ++i)
            order_[fill[cellOf[i]]++] = static_cast<std::uint32_t>(i);
    }

    std::size_t size() const { return points_.size(); }
    const Point3& point(std::size_t i) const { return points_[i]; }

    /// Calls visit(cellCenter, cellHalfDiagonal, indices) for every non-empty
    /// cell intersecting the cube of half-size r around p.
    template <typename Visit>
    void forEachCell(const Point3& p, double r, Visit&& visit) const
    {
        forEachCellInBox(p - Vec3::Constant(r), p + Vec3::Constant(r), std::forward<Visit>(visit));
    }

    /// Same, for every non-empty cell intersecting the axis-aligned box [min, max].
    template <typename Visit>
    void forEachCellInBox(const Point3& min, const Point3& max, Visit&& visit) const
    {
        if (points_.empty())
            return;
        for (int a = 0; a < 3; ++a)
            if (max[a] < lo_[a] || min[a] > hi_[a])
                return;
        const auto lo = coord(min);
        const auto hi = coord(max);
        const double halfDiag = 0.5 * std::sqrt(3.0) * cell_;
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const std::size_t c = flat({x, y, z});
                    const auto b = start_[c], e = start_[c + 1];
                    if (b == e)
                        continue;
                    const Point3 center = lo_ + Vec3((x + 0.5) * cell_, (y + 0.5) * cell_, (z + 0.5) * cell_);
                    visit(center, halfDiag, std::span<const std::uint32_t>(order_.data() + b, e - b));
                }
    }

    /// Indices of points within distance r of p (inclusive), ascending.
    std::vector<std::size_t> radius(const Point3& p, double r) const
    {
        std::vector<std::size_t> out;
        const double r2 = r * r;
        forEachCell(p, r, [&](const Point3&, double, std::span<const std::uint32_t> idx) {
            for (auto i : idx)
                if ((points_[i] - p).squaredNorm() <= r2)
                    out.push_back(i);
        });
        std::sort(out.begin(), out.end());
        return out;
    }

    /// k nearest points to p (p itself included when it is in the set),
    /// ordered by distance then index.
    std::vector<std::size_t> nearest(const Point3& p, std::size_t k) const
    {
        k = std::min(k, points_.size());
        if (k == 0)
            return {};
        double r = cell_;
        std::vector<std::pair<double, std::size_t>> found;
        for (;;) {
            found.clear();
            forEachCell(p, r, [&](const Point3&, double, std::span<const std::uint32_t> idx) {
                for (auto i : idx)
                    found.emplace_back((points_[i] - p).squaredNorm(), i);
            });
            if (found.size() >= k) {
                std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
                // Everything within r is guaranteed present in the searched cube.
                if (found[k - 1].first <= r * r || found.size() == points_.size())
                    break;
            }
            if (found.size() == points_.size())
                break;
            r *= 2.0;
        }
        std::sort(found.begin(), found.end());
        found.resize(k);
        std::vector<std::size_t> out;
        out.reserve(k);
        for (const auto& f : found)
            out.push_back(f.second);
        return out;
    }

private:
    std::array<int, 3> coord(const Point3& p) const
    {
        std::array<int, 3> c{};
        for (int a = 0; a < 3; ++a) {
            const int v = static_cast<int>(std::floor((p[a] - lo_[a]) / cell_));
            c[a] = std::clamp(v, 0, dims_[a] - 1);
        }
        return c;
    }

    std::size_t flat(const std::array<int, 3>& c) const
    {
        return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
    }

    std::vector<Point3> points_;
    Point3 lo_ = Point3::Zero(), hi_ = Point3::Zero();
    double cell_ = 1.0;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::uint32_t> start_;
    std::vector<std::uint32_t> order_;
};

} // namespace targetgrasp
