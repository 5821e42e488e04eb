#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lpres {

/// Geometry of the emitted charts, in SVG user units.
struct PlotLayout {
  double width = 640.0;
  double height = 400.0;
  double left = 70.0;
  double right = 20.0;
  double top = 30.0;
  double bottom = 50.0;
};

/// SVG line chart of `ys` against `xs`. A single point draws a marker. The
/// root element carries data-xmin/xmax/ymin/ymax with the plotted ranges.
std::string render_svg(const std::string& title, const std::vector<double>& xs, const std::vector<double>& ys,
                       const PlotLayout& layout = {});

/// One chart per field of a metrics file, written to `out_dir/<field>.svg`.
/// Throws UsageError for an empty field list or a field not in the header.
std::vector<std::filesystem::path> render_curves(const std::filesystem::path& metrics_csv,
                                                 const std::vector<std::string>& fields,
                                                 const std::filesystem::path& out_dir);

}  // namespace lpres
