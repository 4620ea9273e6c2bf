#pragma once

#include "targetgrasp/image.hpp"
#include "targetgrasp/pipeline.hpp"

namespace targetgrasp {

inline constexpr Rgb kBoxColor{255, 0, 255};
inline constexpr Rgb kCandidateColor{0, 200, 255};
inline constexpr Rgb kSelectedColor{255, 230, 0};

/// Scene raster with candidate contact segments and, drawn last so its
/// pixels are exact, the triage box outline.
inline RgbImage renderOverlay(const RgbImage& scene, const SessionState& s, std::size_t maxCandidates = 10)
{
    RgbImage img = scene;
    auto segment = [&](const GraspCandidate& g, Rgb color, int dot) {
        if (!(g.contactA.z() > 0.0) || !(g.contactB.z() > 0.0))
            return;
        const Pixel a = project(g.contactA, s.camera), b = project(g.contactB, s.camera);
        drawLine(img, a, b, color);
        drawDisc(img, a, dot, color);
        drawDisc(img, b, dot, color);
    };
    for (std::size_t i = std::min(maxCandidates, s.candidates.size()); i-- > 0;)
        segment(s.candidates[i], kCandidateColor, 1);
    if (s.selected)
        segment(*s.selected, kSelectedColor, 2);
    if (s.triage && s.triage->isTarget())
        drawRectOutline(img, s.triage->bbox(), kBoxColor);
    return img;
}

} // namespace targetgrasp
