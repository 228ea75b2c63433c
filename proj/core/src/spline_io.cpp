#include "threadrecon/spline_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "threadrecon/format.hpp"

namespace threadrecon {

std::string spline_to_json(const SplineCurve& s) {
  std::ostringstream out;
  out << "{\n  \"degree\": " << s.degree << ",\n  \"knots\": [";
  for (std::size_t i = 0; i < s.knots.size(); ++i)
    out << (i ? ", " : "") << format_double(s.knots[i]);
  out << "],\n  \"control_points\": [";
  for (std::size_t i = 0; i < s.control_points.size(); ++i) {
    const auto& b = s.control_points[i];
    out << (i ? ",\n    " : "\n    ") << "[" << format_double(b.x()) << ", "
        << format_double(b.y()) << ", " << format_double(b.z()) << "]";
  }
  out << "\n  ],\n  \"frame\": \"" << frame_name(s.frame) << "\"\n}\n";
  return out.str();
}

SplineCurve spline_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SplineCurve s;
  s.degree = j.at("degree").get<int>();
  s.knots = j.at("knots").get<std::vector<double>>();
  for (const auto& row : j.at("control_points")) {
    if (row.size() != 3) throw std::invalid_argument("control point must have 3 coordinates");
    s.control_points.emplace_back(row[0].get<double>(), row[1].get<double>(), row[2].get<double>());
  }
  s.frame = frame_from_name(j.at("frame").get<std::string>());
  s.validate();
  return s;
}

void write_spline(const std::filesystem::path& path, const SplineCurve& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << spline_to_json(s);
}

SplineCurve read_spline(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return spline_from_json(ss.str());
}

}  // namespace threadrecon
