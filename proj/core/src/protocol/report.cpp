#include "bdb/protocol/report.hpp"

#include "bdb/error.hpp"
#include "bdb/eval/svg_plot.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace bdb::protocol {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMarkers = {"circle", "cross", "square"};

struct Point {
  std::string attack, defense;
  double ratio, c_acc, asr, r_acc;
};

template <typename T>
size_t index_in(const std::vector<T>& v, const T& x) {
  return static_cast<size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

eval::Chart pair_scatter(const std::vector<Point>& pts, const std::vector<std::string>& attacks,
                         const std::vector<std::string>& defenses, bool robust) {
  eval::Chart c;
  c.title = robust ? "R-Acc vs ASR per attack-defense pair" : "C-Acc vs ASR per attack-defense pair";
  std::string legend;
  for (size_t i = 0; i < attacks.size(); ++i)
    legend += (i ? ", " : "") + attacks[i] + "=" + kMarkers[i % kMarkers.size()];
  c.x_label = "ASR (%)   markers: " + legend;
  c.y_label = robust ? "R-Acc (%)" : "C-Acc (%)";
  c.x_min = 0, c.x_max = 100, c.y_min = 0, c.y_max = 100;
  c.width = 760;
  for (size_t di = 0; di < defenses.size(); ++di)
    for (size_t ai = 0; ai < attacks.size(); ++ai) {
      eval::Series s;
      s.label = ai == 0 ? defenses[di] : "";
      s.colour = eval::palette()[di % eval::palette().size()];
      s.marker = kMarkers[ai % kMarkers.size()];
      for (const auto& p : pts)
        if (p.defense == defenses[di] && p.attack == attacks[ai]) {
          s.x.push_back(p.asr);
          s.y.push_back(robust ? p.r_acc : p.c_acc);
        }
      if (!s.x.empty() || ai == 0) c.series.push_back(std::move(s));
    }
  if (robust) {
    eval::Series diag;
    diag.label = "ASR + R-Acc = 100";
    diag.colour = "#444444";
    diag.x = {0.0, 100.0};
    diag.y = {100.0, 0.0};
    diag.line = true;
    diag.markers = false;
    diag.dashed = true;
    c.series.push_back(std::move(diag));
  }
  return c;
}

}  // namespace

std::vector<fs::path> render_report(const std::vector<ResultRecord>& records, const fs::path& out_dir) {
  std::vector<Point> pts;
  std::vector<std::string> attacks, defenses;
  std::set<double> ratio_set;
  for (const auto& r : records) {
    if (!r.ok() || !r.post) continue;
    Point p{r.config.value("attack", ""), r.config.value("defense", ""), r.config.value("ratio", 0.0),
            r.post->c_acc, r.post->asr, r.post->r_acc};
    if (std::find(attacks.begin(), attacks.end(), p.attack) == attacks.end()) attacks.push_back(p.attack);
    if (std::find(defenses.begin(), defenses.end(), p.defense) == defenses.end()) defenses.push_back(p.defense);
    ratio_set.insert(p.ratio);
    pts.push_back(std::move(p));
  }
  if (pts.empty()) throw ArgumentError("render_report needs at least one successful record");
  fs::create_directories(out_dir);
  std::vector<fs::path> out;
  out.push_back(out_dir / "cacc_vs_asr.svg");
  eval::save_svg(pair_scatter(pts, attacks, defenses, false), out.back());
  out.push_back(out_dir / "racc_vs_asr.svg");
  eval::save_svg(pair_scatter(pts, attacks, defenses, true), out.back());

  // Ratios are placed at equal spacing: the grid's ratios span two decades.
  const std::vector<double> ratios(ratio_set.begin(), ratio_set.end());
  for (const auto& d : defenses) {
    eval::Chart c;
    c.title = "ASR vs poisoning ratio, defense: " + d;
    c.x_label = "poisoning ratio";
    c.y_label = "ASR (%)";
    c.y_min = 0, c.y_max = 100;
    c.x_min = -0.5, c.x_max = static_cast<double>(ratios.size()) - 0.5;
    for (size_t i = 0; i < ratios.size(); ++i) {
      c.x_ticks.push_back(static_cast<double>(i));
      c.x_tick_labels.push_back(format_ratio(ratios[i]));
    }
    for (size_t ai = 0; ai < attacks.size(); ++ai) {
      std::map<double, double> curve;
      for (const auto& p : pts)
        if (p.defense == d && p.attack == attacks[ai]) curve[p.ratio] = p.asr;
      if (curve.empty()) continue;
      eval::Series s;
      s.label = attacks[ai];
      s.colour = eval::palette()[ai % eval::palette().size()];
      s.line = true;
      s.marker = kMarkers[ai % kMarkers.size()];
      for (const auto& [ratio, asr] : curve) {
        s.x.push_back(static_cast<double>(index_in(ratios, ratio)));
        s.y.push_back(asr);
      }
      c.series.push_back(std::move(s));
    }
    out.push_back(out_dir / ("ratio_" + d + ".svg"));
    eval::save_svg(c, out.back());
  }
  return out;
}

}  // namespace bdb::protocol
