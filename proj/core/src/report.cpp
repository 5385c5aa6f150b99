#include "hallu/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "hallu/common.hpp"

namespace hallu {

namespace {

std::string num(double v) { return format_number(v); }
std::string opt_num(const std::optional<double>& v) {
  return v ? num(*v) : std::string("nan");
}

void check_provenance(const ReportInput& in) {
  std::vector<std::string> bad;
  auto missing = [](const std::string& model, std::size_t params, int epochs, double level) {
    return model.empty() || params == 0 || epochs <= 0 || !(level > 0.0);
  };
  for (const auto& r : in.lms) {
    if (missing(r.model, r.params, r.epochs, r.level) || !(r.flops > 0.0)) {
      bad.push_back(r.run_id.empty() ? std::string("<unnamed>") : r.run_id);
    }
  }
  for (const auto& d : in.detectors) {
    if (missing(d.model, d.params, d.epochs, d.level) || d.task.empty() || d.type.empty() ||
        d.eval_set.empty()) {
      bad.push_back(d.run_id.empty() ? std::string("<unnamed>") : d.run_id);
    }
  }
  if (!bad.empty()) {
    throw Error(fmt::format("runs with missing provenance: {}", fmt::join(bad, ", ")));
  }
}

const TemperatureMetrics* at_temperature(const LmRunRecord& r, double t) {
  for (const auto& m : r.temperatures) {
    if (m.temperature == t) return &m;
  }
  return nullptr;
}

}  // namespace

std::map<std::string, Table> aggregate_scaling(const ReportInput& in) {
  check_provenance(in);
  std::map<std::string, Table> out;

  auto lms = in.lms;
  std::sort(lms.begin(), lms.end(), [](const LmRunRecord& a, const LmRunRecord& b) {
    return std::tie(a.params, a.model, a.level, a.flops) < std::tie(b.params, b.model, b.level, b.flops);
  });

  Table rates{{"model", "params", "epochs", "level", "flops", "temperature", "fvs_rate", "ivs_rate"}, {}};
  Table losses{{"model", "params", "epochs", "level", "flops", "loss"}, {}};
  Table pr_temp{{"model", "params", "epochs", "level", "flops", "temperature", "precision", "recall"}, {}};
  Table seen{{"model", "params", "epochs", "level", "flops", "temperature", "seen_rate", "unseen_rate"}, {}};
  for (const auto& r : lms) {
    const std::vector<std::string> key{r.model, std::to_string(r.params), std::to_string(r.epochs),
                                       num(r.level), num(r.flops)};
    auto row = [&](std::initializer_list<std::string> tail) {
      auto v = key;
      v.insert(v.end(), tail);
      return v;
    };
    const auto* m = at_temperature(r, in.rate_temperature);
    if (m == nullptr) {
      throw Error(fmt::format("run {} has no metrics at temperature {}", r.run_id, in.rate_temperature));
    }
    rates.rows.push_back(row({num(m->temperature), num(m->fvs_rate), num(m->ivs_rate)}));
    losses.rows.push_back(row({num(r.loss)}));
    for (const auto& t : r.temperatures) {
      pr_temp.rows.push_back(row({num(t.temperature), num(t.precision), num(t.recall)}));
      seen.rows.push_back(row({num(t.temperature), num(t.fvs_rate), num(t.ivs_rate)}));
    }
  }

  auto dets = in.detectors;
  std::sort(dets.begin(), dets.end(), [](const DetectorRunRecord& a, const DetectorRunRecord& b) {
    return std::tie(a.params, a.model, a.level, a.epochs, a.task, a.type, a.eval_set, a.layer) <
           std::tie(b.params, b.model, b.level, b.epochs, b.task, b.type, b.eval_set, b.layer);
  });
  const std::vector<std::string> det_cols{"detector", "model", "params", "epochs", "level",
                                          "task", "type", "layer", "eval_set"};
  auto det_key = [](const DetectorRunRecord& d) {
    return std::vector<std::string>{d.run_id, d.model, std::to_string(d.params), std::to_string(d.epochs),
                                    num(d.level), d.task, d.type, std::to_string(d.layer), d.eval_set};
  };
  auto with = [](std::vector<std::string> a, std::initializer_list<std::string> b) {
    a.insert(a.end(), b);
    return a;
  };
  Table accuracy{with(det_cols, {"lm_rate", "prevalence", "accuracy"}), {}};
  Table aucpr{with(det_cols, {"lm_rate", "auc_pr"}), {}};
  Table curves{with(det_cols, {"threshold", "precision", "recall"}), {}};
  Table layers{with(det_cols, {"auc_pr"}), {}};
  for (const auto& d : dets) {
    const auto key = det_key(d);
    if (d.top_layer) {
      auto acc_row = key;
      acc_row.insert(acc_row.end(), {num(d.lm_rate), num(d.prevalence), num(d.accuracy)});
      accuracy.rows.push_back(std::move(acc_row));
      auto ap_row = key;
      ap_row.insert(ap_row.end(), {num(d.lm_rate), opt_num(d.auc_pr)});
      aucpr.rows.push_back(std::move(ap_row));
      if (d.type == "full") {
        for (const auto& p : d.curve) {
          auto curve_row = key;
          curve_row.insert(curve_row.end(), {num(p.threshold), num(p.precision), num(p.recall)});
          curves.rows.push_back(std::move(curve_row));
        }
      }
    }
    if (d.type == "head") {
      auto layer_row = key;
      layer_row.push_back(opt_num(d.auc_pr));
      layers.rows.push_back(std::move(layer_row));
    }
  }

  out["rate_vs_flops"] = std::move(rates);
  out["loss_vs_flops"] = std::move(losses);
  out["precision_recall_by_temperature"] = std::move(pr_temp);
  out["detector_accuracy"] = std::move(accuracy);
  out["detector_aucpr_vs_rate"] = std::move(aucpr);
  out["detector_pr_curves"] = std::move(curves);
  out["layer_sweep"] = std::move(layers);
  out["seen_vs_unseen"] = std::move(seen);
  return out;
}

PlotSpec plot_spec(std::string_view figure) {
  if (figure == "rate_vs_flops") {
    return {"Hallucination rate vs training FLOPs", "flops", {"fvs_rate", "ivs_rate"},
            {"model", "level"}, true, "params", "epochs"};
  }
  if (figure == "loss_vs_flops") {
    return {"Training loss vs FLOPs", "flops", {"loss"}, {"model", "level"}, true, "params", "epochs"};
  }
  if (figure == "precision_recall_by_temperature") {
    return {"Precision and recall across temperature", "recall", {"precision"},
            {"model", "level", "epochs"}, false, "params", "epochs"};
  }
  if (figure == "detector_accuracy") {
    return {"Detector accuracy vs LM hallucination rate", "lm_rate", {"accuracy"},
            {"task", "type", "eval_set"}, false, "params", "epochs"};
  }
  if (figure == "detector_aucpr_vs_rate") {
    return {"Detector AUC-PR vs LM hallucination rate", "lm_rate", {"auc_pr"},
            {"task", "type", "eval_set"}, false, "params", "epochs"};
  }
  if (figure == "detector_pr_curves") {
    return {"Full detector precision-recall curves", "recall", {"precision"}, {"detector", "eval_set"},
            false, "params", "epochs"};
  }
  if (figure == "layer_sweep") {
    return {"Head detector AUC-PR by layer", "layer", {"auc_pr"},
            {"model", "level", "epochs", "task", "eval_set"}, false, "params", "epochs"};
  }
  if (figure == "seen_vs_unseen") {
    return {"Seen vs unseen hallucination rate", "flops", {"seen_rate", "unseen_rate"},
            {"model", "level", "temperature"}, true, "params", "epochs"};
  }
  throw Error(fmt::format("no plot spec for '{}'", figure));
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 220, kTop = 40, kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string marker(int shape, double x, double y, double r, const char* color) {
  switch (shape % 5) {
    case 0:
      return fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="{:.2f}" fill="{}"/>)", x, y, r, color);
    case 1:
      return fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="{}"/>)",
                         x - r, y - r, 2 * r, 2 * r, color);
    case 2:
      return fmt::format(R"(<polygon points="{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}" fill="{}"/>)",
                         x, y - r, x - r, y + r, x + r, y + r, color);
    case 3:
      return fmt::format(
          R"(<polygon points="{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}" fill="{}"/>)", x,
          y - r, x + r, y, x, y + r, x - r, y, color);
    default:
      return fmt::format(
          R"(<path d="M{:.2f},{:.2f}L{:.2f},{:.2f}M{:.2f},{:.2f}L{:.2f},{:.2f}" stroke="{}" stroke-width="2"/>)",
          x - r, y - r, x + r, y + r, x - r, y + r, x + r, y - r, color);
  }
}

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;

  double map(double v, double a, double b) const {
    const double t = log ? (std::log10(v) - lo) / (hi - lo) : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Axis make_axis(const std::vector<double>& values, bool log) {
  Axis ax;
  ax.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v) || (log && v <= 0)) continue;
    const double t = log ? std::log10(v) : v;
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    lo -= log ? 0.5 : std::max(0.5, std::abs(lo) * 0.1);
    hi += log ? 0.5 : std::max(0.5, std::abs(hi) * 0.1);
  }
  const double pad = (hi - lo) * 0.05;
  ax.lo = lo - pad;
  ax.hi = hi + pad;
  return ax;
}

double cell_number(const Table& t, std::size_t row, std::size_t col) {
  const auto& s = t.rows[row][col];
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    return used == s.size() ? v : std::numeric_limits<double>::quiet_NaN();
  } catch (const std::exception&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

std::string render_svg(const Table& table, const PlotSpec& spec) {
  const auto xc = table.column(spec.x);
  std::vector<std::size_t> ycs;
  for (const auto& y : spec.ys) ycs.push_back(table.column(y));
  std::vector<std::size_t> scs;
  for (const auto& s : spec.series) scs.push_back(table.column(s));
  constexpr auto kNone = static_cast<std::size_t>(-1);
  const std::size_t size_c = spec.size_by.empty() ? kNone : table.column(spec.size_by);
  const std::size_t mark_c = spec.marker_by.empty() ? kNone : table.column(spec.marker_by);

  std::vector<double> xs, yv;
  std::set<double> sizes;
  std::set<std::string> marks;
  std::map<std::string, std::vector<std::size_t>> series;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    xs.push_back(cell_number(table, r, xc));
    for (auto yc : ycs) yv.push_back(cell_number(table, r, yc));
    if (size_c != kNone) sizes.insert(cell_number(table, r, size_c));
    if (mark_c != kNone) marks.insert(table.rows[r][mark_c]);
    std::string key;
    for (auto c : scs) key += (key.empty() ? "" : " ") + table.rows[r][c];
    series[key].push_back(r);
  }
  const Axis ax = make_axis(xs, spec.log_x), ay = make_axis(yv, false);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::ostringstream svg;
  svg << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">)",
                     kWidth, kHeight, kWidth, kHeight)
      << '\n';
  svg << "<metadata id=\"table\"><![CDATA[\n" << table.str() << "]]></metadata>\n";
  svg << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", kWidth, kHeight) << '\n';
  svg << fmt::format(R"(<text x="{}" y="24" font-family="sans-serif" font-size="15">{}</text>)", kLeft,
                     escape(spec.title))
      << '\n';
  svg << fmt::format(R"(<path d="M{0},{1}L{2},{1}M{0},{1}L{0},{3}" stroke="black"/>)", x0, y0, x1, y1) << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double tx = ax.lo + (ax.hi - ax.lo) * i / 4.0, ty = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double px = x0 + (x1 - x0) * i / 4.0, py = y0 + (y1 - y0) * i / 4.0;
    const std::string lx = ax.log ? fmt::format("1e{:.1f}", tx) : fmt::format("{:.3g}", tx);
    svg << fmt::format(R"(<text x="{:.1f}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>)",
                       px, y0 + 16, lx)
        << '\n';
    svg << fmt::format(R"(<text x="{}" y="{:.1f}" font-family="sans-serif" font-size="10" text-anchor="end">{:.3g}</text>)",
                       x0 - 6, py + 3, ty)
        << '\n';
  }
  svg << fmt::format(R"(<text x="{:.1f}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}{}</text>)",
                     (x0 + x1) / 2, kHeight - 20, escape(spec.x), spec.log_x ? " (log)" : "")
      << '\n';
  svg << fmt::format(R"svg(<text x="16" y="{:.1f}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.1f})" text-anchor="middle">{}</text>)svg",
                     (y0 + y1) / 2, (y0 + y1) / 2, escape(fmt::format("{}", fmt::join(spec.ys, ", "))))
      << '\n';

  const std::vector<double> size_list(sizes.begin(), sizes.end());
  const std::vector<std::string> mark_list(marks.begin(), marks.end());
  int color = 0;
  double legend_y = kTop + 10;
  for (std::size_t yi = 0; yi < ycs.size(); ++yi) {
    for (auto& [key, rows] : series) {
      const char* c = kPalette[color++ % 10];
      std::vector<std::pair<double, std::size_t>> pts;
      for (auto r : rows) {
        const double x = cell_number(table, r, xc), y = cell_number(table, r, ycs[yi]);
        if (std::isfinite(x) && std::isfinite(y) && (!ax.log || x > 0)) pts.emplace_back(x, r);
      }
      std::stable_sort(pts.begin(), pts.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::string d;
      for (const auto& [x, r] : pts) {
        d += fmt::format("{}{:.2f},{:.2f}", d.empty() ? "M" : "L", ax.map(x, x0, x1),
                         ay.map(cell_number(table, r, ycs[yi]), y0, y1));
      }
      if (pts.size() > 1) {
        svg << fmt::format(R"(<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>)", d, c) << '\n';
      }
      for (const auto& [x, r] : pts) {
        double radius = 4;
        if (size_c != kNone) {
          const auto it = std::find(size_list.begin(), size_list.end(), cell_number(table, r, size_c));
          radius = 3 + 1.5 * static_cast<double>(it - size_list.begin());
        }
        int shape = 0;
        if (mark_c != kNone) {
          shape = static_cast<int>(std::find(mark_list.begin(), mark_list.end(), table.rows[r][mark_c]) -
                                   mark_list.begin());
        }
        svg << marker(shape, ax.map(x, x0, x1), ay.map(cell_number(table, r, ycs[yi]), y0, y1), radius, c)
            << '\n';
      }
      const std::string label = ycs.size() > 1 ? fmt::format("{} {}", key, spec.ys[yi]) : key;
      svg << fmt::format(R"(<rect x="{}" y="{:.1f}" width="10" height="10" fill="{}"/>)", x1 + 15,
                         legend_y - 9, c)
          << fmt::format(R"(<text x="{}" y="{:.1f}" font-family="sans-serif" font-size="10">{}</text>)",
                         x1 + 30, legend_y, escape(label))
          << '\n';
      legend_y += 14;
    }
  }
  if (mark_c != kNone) {
    legend_y += 8;
    for (std::size_t i = 0; i < mark_list.size(); ++i) {
      svg << marker(static_cast<int>(i), x1 + 20, legend_y - 4, 4, "#444")
          << fmt::format(R"(<text x="{}" y="{:.1f}" font-family="sans-serif" font-size="10">{}={}</text>)",
                         x1 + 30, legend_y, escape(spec.marker_by), escape(mark_list[i]))
          << '\n';
      legend_y += 14;
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

Table extract_svg_table(std::string_view svg) {
  constexpr std::string_view open = "<metadata id=\"table\"><![CDATA[\n";
  const auto a = svg.find(open);
  if (a == std::string_view::npos) throw ParseError("svg has no embedded table", 1);
  const auto b = svg.find("]]></metadata>", a);
  if (b == std::string_view::npos) throw ParseError("unterminated embedded table", 1);
  return Table::parse(svg.substr(a + open.size(), b - a - open.size()));
}

void write_report(const std::filesystem::path& dir, const ReportInput& in) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, table] : aggregate_scaling(in)) {
    table.write(dir / (name + ".csv"));
    std::ofstream svg(dir / (name + ".svg"), std::ios::trunc);
    svg << render_svg(table, plot_spec(name));
    if (!svg) throw IoError(fmt::format("cannot write {}.svg", name));
  }
}

}  // namespace hallu
