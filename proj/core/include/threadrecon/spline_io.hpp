#pragma once

#include <filesystem>
#include <string>

#include "threadrecon/bspline.hpp"

namespace threadrecon {

/// Serializes as {"degree", "knots", "control_points", "frame"} in that order,
/// with every number printed to 17 significant digits.
std::string spline_to_json(const SplineCurve& s);
SplineCurve spline_from_json(const std::string& text);

void write_spline(const std::filesystem::path& path, const SplineCurve& s);
SplineCurve read_spline(const std::filesystem::path& path);

}  // namespace threadrecon
