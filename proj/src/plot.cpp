#include "lpres/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lpres/errors.hpp"
#include "lpres/experiment.hpp"

namespace lpres {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Widens a degenerate range so a constant series sits mid-plot.
void pad_range(double& lo, double& hi) {
  if (hi > lo) return;
  const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.5;
  lo -= pad;
  hi += pad;
}

}  // namespace

std::string render_svg(const std::string& title, const std::vector<double>& xs, const std::vector<double>& ys,
                       const PlotLayout& layout) {
  if (xs.size() != ys.size()) throw DimensionError("render_svg: x and y lengths differ");
  if (xs.empty()) throw InputError("render_svg: no points");
  auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
  auto [ymin_it, ymax_it] = std::minmax_element(ys.begin(), ys.end());
  double xmin = *xmin_it, xmax = *xmax_it, ymin = *ymin_it, ymax = *ymax_it;
  pad_range(xmin, xmax);
  pad_range(ymin, ymax);

  const double pw = layout.width - layout.left - layout.right;
  const double ph = layout.height - layout.top - layout.bottom;
  auto px = [&](double x) { return layout.left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return layout.top + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(layout.width) << "\" height=\""
     << num(layout.height) << "\" viewBox=\"0 0 " << num(layout.width) << ' ' << num(layout.height)
     << "\" data-xmin=\"" << num(xmin) << "\" data-xmax=\"" << num(xmax) << "\" data-ymin=\"" << num(ymin)
     << "\" data-ymax=\"" << num(ymax) << "\">\n";
  os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "  <text x=\"" << num(layout.width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"14\">"
     << escape(title) << "</text>\n";
  os << "  <g stroke=\"black\" stroke-width=\"1\">\n"
     << "    <line x1=\"" << num(layout.left) << "\" y1=\"" << num(layout.top + ph) << "\" x2=\""
     << num(layout.left + pw) << "\" y2=\"" << num(layout.top + ph) << "\"/>\n"
     << "    <line x1=\"" << num(layout.left) << "\" y1=\"" << num(layout.top) << "\" x2=\"" << num(layout.left)
     << "\" y2=\"" << num(layout.top + ph) << "\"/>\n"
     << "  </g>\n";
  os << "  <g font-family=\"sans-serif\" font-size=\"11\">\n"
     << "    <text x=\"" << num(layout.left - 6) << "\" y=\"" << num(layout.top + 4) << "\" text-anchor=\"end\">"
     << num(ymax) << "</text>\n"
     << "    <text x=\"" << num(layout.left - 6) << "\" y=\"" << num(layout.top + ph) << "\" text-anchor=\"end\">"
     << num(ymin) << "</text>\n"
     << "    <text x=\"" << num(layout.left) << "\" y=\"" << num(layout.top + ph + 16) << "\" text-anchor=\"middle\">"
     << num(xmin) << "</text>\n"
     << "    <text x=\"" << num(layout.left + pw) << "\" y=\"" << num(layout.top + ph + 16)
     << "\" text-anchor=\"middle\">" << num(xmax) << "</text>\n"
     << "    <text x=\"" << num(layout.left + pw / 2) << "\" y=\"" << num(layout.height - 12)
     << "\" text-anchor=\"middle\">epoch</text>\n"
     << "  </g>\n";
  if (xs.size() == 1) {
    os << "  <circle cx=\"" << num(px(xs[0])) << "\" cy=\"" << num(py(ys[0])) << "\" r=\"4\" fill=\"steelblue\"/>\n";
  } else {
    os << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? " " : "") << num(px(xs[i])) << ',' << num(py(ys[i]));
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> render_curves(const std::filesystem::path& metrics_csv,
                                                 const std::vector<std::string>& fields,
                                                 const std::filesystem::path& out_dir) {
  if (fields.empty()) throw UsageError("plot: no fields given");
  const auto table = read_metrics_csv(metrics_csv);
  std::vector<std::size_t> columns;
  for (const auto& f : fields) columns.push_back(table.column(f));
  if (table.rows.empty()) throw InputError("plot: " + metrics_csv.string() + " has no epochs");
  const std::size_t epoch_col = table.column("epoch");

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    std::vector<double> xs, ys;
    for (const auto& row : table.rows) {
      xs.push_back(row[epoch_col]);
      ys.push_back(row[columns[i]]);
    }
    const auto path = out_dir / (fields[i] + ".svg");
    std::ofstream out(path);
    if (!out) throw InputError("plot: cannot write " + path.string());
    out << render_svg(fields[i], xs, ys);
    written.push_back(path);
  }
  return written;
}

}  // namespace lpres
