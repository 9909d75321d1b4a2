#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gar/phenotypes.hpp"
#include "gar/windows.hpp"

namespace gar {

inline constexpr std::size_t kSvgPanels = 12;

// Frame offsets round(i * (T - 1) / 11) for the 12 panels.
std::vector<std::size_t> panel_frames(std::size_t frames);

// Stick figures of every person in 12 evenly spaced frames (4 x 3 grid);
// the attended track is drawn in a highlight color inside its box.
std::string render_phenotype_svg(const WindowSample& window, int attended_track_id,
                                 std::span<const std::optional<Box>> boxes);

}  // namespace gar
