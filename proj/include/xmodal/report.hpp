#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "xmodal/analyze.hpp"
#include "xmodal/diagnose.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/format.hpp"

// Result tables and charts. Everything here is a pure function of its inputs
// with fixed formatting, so repeated runs emit byte-identical files.
namespace xmodal {

inline void write_result_csv(const DiagnosticResult& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "datapoint_id,diagnostic,setup,tau,measure,loss_bits,target_region,num_ablated\n";
  for (const auto& rec : r.records) {
    out << rec.datapoint_id << "," << rec.diagnostic << "," << rec.setup << ","
        << fmt_g17(rec.tau) << "," << rec.measure << "," << fmt_g17(rec.loss_bits) << ","
        << rec.target_region << "," << rec.num_ablated << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string aggregate_csv_string(const std::vector<AggregateRecord>& aggs) {
  std::ostringstream out;
  out << "diagnostic,setup,tau,measure,mean_bits,std_bits,count,rel_change_pct,"
         "t_vs_none,p_vs_none\n";
  for (const auto& a : aggs) {
    out << a.diagnostic << "," << a.setup << "," << fmt_g17(a.tau) << "," << a.measure
        << "," << fmt_g17(a.mean_bits) << "," << fmt_g17(a.std_bits) << "," << a.count
        << "," << fmt_g17(a.rel_change_pct) << "," << fmt_g17(a.t_vs_none) << ","
        << fmt_g17(a.p_vs_none) << "\n";
  }
  return out.str();
}

inline void write_aggregate_csv(const std::vector<AggregateRecord>& aggs,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << aggregate_csv_string(aggs);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "gold_category,pred_category,proportion\n";
  for (int i = 0; i < cm.proportions.rows(); ++i) {
    for (int j = 0; j < cm.proportions.cols(); ++j) {
      out << cm.categories[i] << "," << cm.categories[j] << ","
          << fmt_g17(cm.proportions(i, j)) << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_sweep_csv(const SweepResult& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "setup,tau,measure,mean_bits\n";
  out << "none,-1,-," << fmt_g17(s.none_mean) << "\n";
  for (const auto& pt : s.object_means) {
    out << "object," << fmt_g17(pt.tau) << "," << to_string(s.measure) << ","
        << fmt_g17(pt.mean_bits) << "\n";
  }
  out << "all,-1,-," << fmt_g17(s.all_mean) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_agreement_csv(const std::vector<int>& ks, const std::vector<double>& vals,
                                const std::string& path) {
  if (ks.size() != vals.size()) throw std::invalid_argument("agreement csv: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "k,agreement\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out << ks[i] << "," << fmt_g17(vals[i]) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_seed_summary_csv(const std::vector<SeedSummaryRecord>& rows,
                                   const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "diagnostic,setup,tau,measure,mean_bits,min_bits,max_bits,num_seeds\n";
  for (const auto& r : rows) {
    out << r.diagnostic << "," << r.setup << "," << fmt_g17(r.tau) << "," << r.measure
        << "," << fmt_g17(r.mean_bits) << "," << fmt_g17(r.min_bits) << ","
        << fmt_g17(r.max_bits) << "," << r.num_seeds << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string text(double x, double y, const std::string& s, int size = 11,
                        const std::string& anchor = "middle",
                        const std::string& fill = "#333333") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
         std::to_string(size) + "\" text-anchor=\"" + anchor + "\" fill=\"" + fill + "\">" +
         s + "</text>\n";
}

inline std::string rect(double x, double y, double w, double h, const std::string& fill,
                        const std::string& extra = "") {
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
         "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"" + extra + "/>\n";
}

inline std::string line(double x1, double y1, double x2, double y2,
                        const std::string& stroke, const std::string& extra = "") {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
         "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\"" + extra + "/>\n";
}

}  // namespace svg

// Bar chart of group means (one bar per aggregate record) with std whiskers.
// The full aggregate table rides along in an XML comment so the numbers can
// be recovered from the chart file alone.
inline void write_aggregate_svg(const std::vector<AggregateRecord>& aggs,
                                const std::string& path) {
  if (aggs.empty()) throw std::invalid_argument("write_aggregate_svg: no records");
  const double bar_w = 44.0, gap = 18.0, ml = 64.0, mr = 24.0, mt = 28.0, mb = 64.0;
  const double plot_h = 260.0;
  const double width = ml + aggs.size() * (bar_w + gap) + mr;
  const double height = mt + plot_h + mb;

  double vmax = 0.0;
  for (const auto& a : aggs) vmax = std::max(vmax, a.mean_bits + a.std_bits);
  if (vmax <= 0.0) vmax = 1.0;
  vmax *= 1.12;
  auto ycoord = [&](double v) { return mt + plot_h - v / vmax * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg::num(width)
      << "\" height=\"" << svg::num(height) << "\" viewBox=\"0 0 " << svg::num(width)
      << " " << svg::num(height) << "\">\n";
  out << "<!--\ndata:\n" << aggregate_csv_string(aggs) << "-->\n";
  out << svg::rect(0, 0, width, height, "#ffffff");

  for (int tick = 0; tick <= 4; ++tick) {
    const double v = vmax * tick / 4.0;
    const double y = ycoord(v);
    out << svg::line(ml, y, width - mr, y, "#dddddd");
    out << svg::text(ml - 6, y + 4, svg::label(v), 10, "end");
  }
  out << svg::line(ml, mt, ml, mt + plot_h, "#333333");
  out << svg::line(ml, mt + plot_h, width - mr, mt + plot_h, "#333333");
  out << svg::text(14, mt + plot_h / 2, "bits", 11, "middle",
                   "#333333\" transform=\"rotate(-90 14 " +
                       svg::num(mt + plot_h / 2) + ")");

  for (std::size_t i = 0; i < aggs.size(); ++i) {
    const auto& a = aggs[i];
    const double x = ml + gap / 2 + i * (bar_w + gap);
    const double y = ycoord(a.mean_bits);
    const std::string fill = a.diagnostic == "v4l" ? "#4878a8" : "#d2813c";
    out << svg::rect(x, y, bar_w, mt + plot_h - y, fill);
    if (a.std_bits > 0.0) {
      const double cx = x + bar_w / 2;
      out << svg::line(cx, ycoord(a.mean_bits + a.std_bits),
                       cx, ycoord(std::max(0.0, a.mean_bits - a.std_bits)), "#333333");
    }
    out << svg::text(x + bar_w / 2, y - 5, svg::label(a.mean_bits), 10);
    std::string name = a.setup;
    if (a.tau >= 0.0) name += " @" + svg::label(a.tau);
    out << svg::text(x + bar_w / 2, mt + plot_h + 16, a.diagnostic, 10);
    out << svg::text(x + bar_w / 2, mt + plot_h + 30, name, 10);
  }
  out << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << out.str();
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Threshold sweep line chart: object-ablation means over tau, with dashed
// reference lines for the None and All setups.
inline void write_sweep_svg(const SweepResult& s, const std::string& path) {
  if (s.object_means.empty()) throw std::invalid_argument("write_sweep_svg: empty sweep");
  const double ml = 64.0, mr = 28.0, mt = 28.0, mb = 48.0;
  const double plot_w = 420.0, plot_h = 260.0;
  const double width = ml + plot_w + mr, height = mt + plot_h + mb;

  const double tlo = s.taus.front(), thi = s.taus.back();
  double vlo = std::min(s.none_mean, s.all_mean), vhi = std::max(s.none_mean, s.all_mean);
  for (const auto& p : s.object_means) {
    vlo = std::min(vlo, p.mean_bits);
    vhi = std::max(vhi, p.mean_bits);
  }
  const double pad = std::max(1e-9, (vhi - vlo) * 0.1);
  vlo -= pad;
  vhi += pad;
  auto xcoord = [&](double tau) {
    return thi == tlo ? ml + plot_w / 2 : ml + (tau - tlo) / (thi - tlo) * plot_w;
  };
  auto ycoord = [&](double v) { return mt + plot_h - (v - vlo) / (vhi - vlo) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg::num(width)
      << "\" height=\"" << svg::num(height) << "\" viewBox=\"0 0 " << svg::num(width)
      << " " << svg::num(height) << "\">\n";
  out << "<!--\ndata:\nsetup,tau,measure,mean_bits\n";
  out << "none,-1,-," << fmt_g17(s.none_mean) << "\n";
  for (const auto& p : s.object_means) {
    out << "object," << fmt_g17(p.tau) << "," << to_string(s.measure) << ","
        << fmt_g17(p.mean_bits) << "\n";
  }
  out << "all,-1,-," << fmt_g17(s.all_mean) << "\n-->\n";
  out << svg::rect(0, 0, width, height, "#ffffff");

  for (int tick = 0; tick <= 4; ++tick) {
    const double v = vlo + (vhi - vlo) * tick / 4.0;
    out << svg::line(ml, ycoord(v), ml + plot_w, ycoord(v), "#dddddd");
    out << svg::text(ml - 6, ycoord(v) + 4, svg::label(v), 10, "end");
  }
  out << svg::line(ml, mt, ml, mt + plot_h, "#333333");
  out << svg::line(ml, mt + plot_h, ml + plot_w, mt + plot_h, "#333333");

  out << svg::line(ml, ycoord(s.none_mean), ml + plot_w, ycoord(s.none_mean), "#3a7d44",
                   " stroke-dasharray=\"6 4\"");
  out << svg::text(ml + plot_w - 4, ycoord(s.none_mean) - 5, "none", 10, "end", "#3a7d44");
  out << svg::line(ml, ycoord(s.all_mean), ml + plot_w, ycoord(s.all_mean), "#b03a3a",
                   " stroke-dasharray=\"6 4\"");
  out << svg::text(ml + plot_w - 4, ycoord(s.all_mean) - 5, "all", 10, "end", "#b03a3a");

  std::string pts;
  for (const auto& p : s.object_means) {
    if (!pts.empty()) pts += " ";
    pts += svg::num(xcoord(p.tau)) + "," + svg::num(ycoord(p.mean_bits));
  }
  out << "<polyline points=\"" << pts
      << "\" fill=\"none\" stroke=\"#4878a8\" stroke-width=\"2\"/>\n";
  for (const auto& p : s.object_means) {
    out << "<circle cx=\"" << svg::num(xcoord(p.tau)) << "\" cy=\""
        << svg::num(ycoord(p.mean_bits)) << "\" r=\"3.5\" fill=\"#4878a8\"/>\n";
    out << svg::text(xcoord(p.tau), mt + plot_h + 16, svg::label(p.tau), 10);
  }
  out << svg::text(ml + plot_w / 2, mt + plot_h + 34,
                   std::string("object ablation threshold (") + to_string(s.measure) + ")",
                   11);
  out << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << out.str();
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Category-level heatmap of silver-label confusion.
inline void write_confusion_svg(const ConfusionMatrix& cm, const std::string& path) {
  const int G = static_cast<int>(cm.categories.size());
  if (G == 0) throw std::invalid_argument("write_confusion_svg: empty matrix");
  const double cell = 52.0, ml = 110.0, mt = 60.0, mr = 24.0, mb = 24.0;
  const double width = ml + G * cell + mr, height = mt + G * cell + mb;
  const double vmax = std::max(1e-12, cm.proportions.maxCoeff());

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg::num(width)
      << "\" height=\"" << svg::num(height) << "\" viewBox=\"0 0 " << svg::num(width)
      << " " << svg::num(height) << "\">\n";
  out << "<!--\ndata:\ngold_category,pred_category,proportion\n";
  for (int i = 0; i < G; ++i) {
    for (int j = 0; j < G; ++j) {
      out << cm.categories[i] << "," << cm.categories[j] << ","
          << fmt_g17(cm.proportions(i, j)) << "\n";
    }
  }
  out << "-->\n";
  out << svg::rect(0, 0, width, height, "#ffffff");
  out << svg::text(ml + G * cell / 2, 18, "silver argmax category", 11);

  for (int i = 0; i < G; ++i) {
    out << svg::text(ml - 8, mt + i * cell + cell / 2 + 4, cm.categories[i], 10, "end");
    out << svg::text(ml + i * cell + cell / 2, mt - 8, cm.categories[i], 10);
    for (int j = 0; j < G; ++j) {
      const double v = cm.proportions(i, j);
      const double frac = v / vmax;
      // white toward a warm red as the share grows
      const int rch = 255 - static_cast<int>(std::lround(61 * frac));
      const int gch = 255 - static_cast<int>(std::lround(196 * frac));
      const int bch = 255 - static_cast<int>(std::lround(221 * frac));
      char color[8];
      std::snprintf(color, sizeof(color), "#%02x%02x%02x", rch, gch, bch);
      out << svg::rect(ml + j * cell, mt + i * cell, cell, cell, color,
                       " stroke=\"#cccccc\"");
      if (v > 0.0) {
        out << svg::text(ml + j * cell + cell / 2, mt + i * cell + cell / 2 + 4,
                         svg::label(v), 10, "middle", frac > 0.55 ? "#ffffff" : "#333333");
      }
    }
  }
  out << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << out.str();
  if (!f) throw std::runtime_error("write failed: " + path);
}

enum class ReportFormat { Csv, Svg };

inline void emit_report(const std::vector<AggregateRecord>& aggs, ReportFormat format,
                        const std::string& path) {
  if (format == ReportFormat::Csv) {
    write_aggregate_csv(aggs, path);
  } else {
    write_aggregate_svg(aggs, path);
  }
}

}  // namespace xmodal
