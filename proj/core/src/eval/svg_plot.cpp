#include "bdb/eval/svg_plot.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace bdb::eval {

namespace {

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

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

/// Roughly five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  return out;
}

}  // namespace

const std::vector<std::string>& palette() {
  static const std::vector<std::string> p = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return p;
}

std::string render_svg(const Chart& c) {
  double x0 = c.x_min, x1 = c.x_max, y0 = c.y_min, y1 = c.y_max;
  if (x0 == x1 || y0 == y1) {
    double ax = std::numeric_limits<double>::infinity(), bx = -ax, ay = ax, by = -ax;
    for (const auto& s : c.series) {
      for (double v : s.x) ax = std::min(ax, v), bx = std::max(bx, v);
      for (double v : s.y) ay = std::min(ay, v), by = std::max(by, v);
    }
    if (!std::isfinite(ax)) ax = 0, bx = 1, ay = 0, by = 1;
    auto pad = [](double& lo, double& hi) {
      if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
      const double m = 0.05 * (hi - lo);
      lo -= m;
      hi += m;
    };
    if (x0 == x1) x0 = ax, x1 = bx, pad(x0, x1);
    if (y0 == y1) y0 = ay, y1 = by, pad(y0, y1);
  }
  const double left = 64, right = c.legend ? 150 : 20, top = 40, bottom = 56;
  const double pw = c.width - left - right, ph = c.height - top - bottom;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + ph - (v - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << c.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(c.title)
    << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!c.x_tick_labels.empty() && c.x_tick_labels.size() != c.x_ticks.size())
    throw ArgumentError("chart: one label per explicit x tick");
  const auto xt = c.x_ticks.empty() ? ticks(x0, x1) : c.x_ticks;
  for (size_t i = 0; i < xt.size(); ++i) {
    const double t = xt[i];
    const auto label = c.x_tick_labels.empty() ? fmt(t) : escape(c.x_tick_labels[i]);
    o << "<line class=\"xtick\" x1=\"" << sx(t) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(t) << "\" y2=\""
      << top + ph + 4 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << sx(t) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  for (double t : ticks(y0, y1)) {
    o << "<line x1=\"" << left - 4 << "\" y1=\"" << sy(t) << "\" x2=\"" << left << "\" y2=\"" << sy(t)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << c.height - 14 << "\" text-anchor=\"middle\">"
    << escape(c.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(c.y_label) << "</text>\n";
  o << "<clipPath id=\"plot\"><rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\"/></clipPath>\n<g clip-path=\"url(#plot)\">\n";
  for (size_t si = 0; si < c.series.size(); ++si) {
    const auto& s = c.series[si];
    if (s.x.size() != s.y.size()) throw ArgumentError("chart series '" + s.label + "' has mismatched x/y lengths");
    const auto colour = s.colour.empty() ? palette()[si % palette().size()] : s.colour;
    if (s.line && s.x.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << " points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) o << sx(s.x[i]) << "," << sy(s.y[i]) << " ";
      o << "\"/>\n";
    }
    if (!s.markers) continue;
    for (size_t i = 0; i < s.x.size(); ++i) {
      const double px = sx(s.x[i]), py = sy(s.y[i]);
      if (s.marker == "cross")
        o << "<path d=\"M" << px - 3 << " " << py - 3 << "L" << px + 3 << " " << py + 3 << "M" << px - 3 << " "
          << py + 3 << "L" << px + 3 << " " << py - 3 << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
      else if (s.marker == "square")
        o << "<rect x=\"" << px - 3 << "\" y=\"" << py - 3 << "\" width=\"6\" height=\"6\" fill=\"" << colour
          << "\"/>\n";
      else
        o << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
  }
  for (const auto& a : c.annotations)
    o << "<text x=\"" << sx(a.x) + 4 << "\" y=\"" << sy(a.y) - 4 << "\" font-size=\"9\">" << escape(a.text)
      << "</text>\n";
  o << "</g>\n";
  if (c.legend) {
    double ly = top + 8;
    for (size_t si = 0; si < c.series.size(); ++si) {
      const auto& s = c.series[si];
      if (s.label.empty()) continue;
      const auto colour = s.colour.empty() ? palette()[si % palette().size()] : s.colour;
      o << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\"" << colour
        << "\"/>\n<text x=\"" << left + pw + 26 << "\" y=\"" << ly + 1 << "\">" << escape(s.label) << "</text>\n";
      ly += 16;
    }
  }
  o << "</svg>\n";
  return o.str();
}

void save_svg(const Chart& chart, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << render_svg(chart);
}

}  // namespace bdb::eval
