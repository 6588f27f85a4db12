#include "llmrel/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "llmrel/csv.hpp"
#include "llmrel/errors.hpp"
#include "llmrel/harness.hpp"

namespace llmrel {

namespace fs = std::filesystem;

namespace {

std::string xml_escape(std::string_view s) {
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

std::string num(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string short_num(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

// Minimal SVG writer; coordinates are in px.
class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, std::string_view fill) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
          << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, std::string_view stroke = "#333",
            double width = 1.0) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
          << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
          << num(width) << "\"/>\n";
  }
  void circle(double cx, double cy, double r, std::string_view fill) {
    body_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
          << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, std::string_view s, std::string_view anchor = "start",
            int size = 11) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\">" << xml_escape(s) << "</text>\n";
  }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\""
        << num(height_) << "\" viewBox=\"0 0 " << num(width_) << ' ' << num(height_)
        << "\" font-family=\"sans-serif\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

constexpr const char* kPalette[] = {"#4e79a7", "#e15759", "#bab0ac", "#59a14f",
                                    "#f28e2b", "#76b7b2", "#edc948", "#b07aa1"};

struct Interval {
  std::string group;  // model or subset
  std::string metric;
  double estimate;
  double low;
  double high;
};

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

/// Horizontal dot plot, one panel per metric, whiskers from low to high.
void dot_plot(const std::vector<Interval>& rows, const std::string& title, const fs::path& path) {
  std::vector<std::string> metrics, groups;
  for (const auto& r : rows) {
    if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end())
      metrics.push_back(r.metric);
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  }
  double lo = 0.0, hi = 1.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.low);
    hi = std::max(hi, r.high);
  }
  const double label_w = 220, panel_w = 420, row_h = 18, top = 40;
  const double panel_h = row_h * static_cast<double>(groups.size()) + 40;
  Svg svg(label_w + panel_w + 40, top + panel_h * static_cast<double>(metrics.size()) + 20);
  svg.text(10, 22, title, "start", 14);
  auto x_of = [&](double v) { return label_w + (v - lo) / (hi - lo) * panel_w; };
  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    const double y0 = top + panel_h * static_cast<double>(mi);
    svg.text(label_w, y0 + 12, metrics[mi], "start", 12);
    const double axis_y = y0 + 20 + row_h * static_cast<double>(groups.size());
    svg.line(x_of(lo), axis_y, x_of(hi), axis_y);
    for (double tick : {lo, 0.0, 0.5, hi}) {
      if (tick < lo || tick > hi) continue;
      svg.line(x_of(tick), axis_y, x_of(tick), axis_y + 4);
      svg.text(x_of(tick), axis_y + 14, short_num(tick), "middle", 9);
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const double y = y0 + 20 + row_h * (static_cast<double>(gi) + 0.5);
      svg.text(label_w - 8, y + 4, groups[gi], "end", 10);
      for (const auto& r : rows) {
        if (r.metric != metrics[mi] || r.group != groups[gi]) continue;
        svg.line(x_of(r.low), y, x_of(r.high), y, kPalette[0], 1.5);
        svg.line(x_of(r.low), y - 3, x_of(r.low), y + 3, kPalette[0]);
        svg.line(x_of(r.high), y - 3, x_of(r.high), y + 3, kPalette[0]);
        svg.circle(x_of(r.estimate), y, 3.5, kPalette[1]);
      }
    }
  }
  svg.save(path);
}

void write_table(const fs::path& path, const csv::Row& header,
                 const std::vector<csv::Row>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  csv::write_row(out, header);
  for (const auto& r : rows) csv::write_row(out, r);
}

}  // namespace

ReportBundle report(const fs::path& output_dir) {
  const auto records_path = output_dir / "records.csv";
  const auto reliability_dir = output_dir / "reliability";
  const auto validity_dir = output_dir / "validity";
  const bool has_records = fs::is_regular_file(records_path);
  const bool has_reliability = fs::is_directory(reliability_dir);
  const bool has_validity = fs::is_regular_file(validity_dir / "validity_summary.csv");
  if (!has_records && !has_reliability && !has_validity)
    throw InputError("nothing to report in " + output_dir.string() +
                     ": expected records.csv, reliability/ or validity/validity_summary.csv");

  const auto dir = output_dir / "report";
  fs::create_directories(dir);
  ReportBundle bundle;

  if (has_records) {
    std::map<std::string, std::map<Label, std::size_t>> counts;
    for (const auto& r : read_records_csv(records_path)) counts[r.model_id][r.parsed_label]++;
    std::vector<csv::Row> rows;
    for (const auto& [model, by_label] : counts)
      for (Label l : kAllLabels) {
        auto it = by_label.find(l);
        rows.push_back({model, std::string(to_string(l)),
                        std::to_string(it == by_label.end() ? 0 : it->second)});
      }
    const auto csv_path = dir / "label_distribution.csv";
    write_table(csv_path, {"model", "label", "count"}, rows);
    bundle.csv.push_back(csv_path);

    // Stacked horizontal bars of label shares per model.
    const double label_w = 200, bar_w = 460, row_h = 24, top = 40;
    Svg svg(label_w + bar_w + 40, top + row_h * static_cast<double>(counts.size()) + 50);
    svg.text(10, 22, "Label distribution per model", "start", 14);
    double y = top;
    for (const auto& [model, by_label] : counts) {
      std::size_t total = 0;
      for (const auto& [l, n] : by_label) total += n;
      svg.text(label_w - 8, y + 15, model, "end", 10);
      double x = label_w;
      for (std::size_t k = 0; k < kAllLabels.size(); ++k) {
        auto it = by_label.find(kAllLabels[k]);
        const double share = total == 0 || it == by_label.end()
                                 ? 0.0
                                 : static_cast<double>(it->second) / static_cast<double>(total);
        svg.rect(x, y + 2, share * bar_w, row_h - 6, kPalette[k]);
        x += share * bar_w;
      }
      y += row_h;
    }
    for (std::size_t k = 0; k < kAllLabels.size(); ++k) {
      const double lx = label_w + 120.0 * static_cast<double>(k);
      svg.rect(lx, y + 14, 10, 10, kPalette[k]);
      svg.text(lx + 14, y + 23, to_string(kAllLabels[k]), "start", 10);
    }
    const auto svg_path = dir / "label_distribution.svg";
    svg.save(svg_path);
    bundle.figures.push_back(svg_path);
  }

  if (has_reliability) {
    std::vector<Interval> intervals;
    std::vector<csv::Row> rows;
    for (const char* name : {"intra_rater_summary.csv", "inter_rater_summary.csv"}) {
      const auto path = reliability_dir / name;
      if (!fs::is_regular_file(path)) continue;
      const std::string scope = std::string(name).substr(0, 5);
      const auto table = csv::read_file(path);
      const auto cm = table.column("model"), cmet = table.column("metric"),
                 ce = table.column("estimate"), cl = table.column("ci_low"),
                 ch = table.column("ci_high"), cn = table.column("n_used");
      for (const auto& r : table.rows) {
        rows.push_back({scope, r[cm], r[cmet], r[ce], r[cl], r[ch], r[cn]});
        const auto e = parse_double(r[ce]), l = parse_double(r[cl]), h = parse_double(r[ch]);
        if (e && l && h) intervals.push_back({scope + " " + r[cm], r[cmet], *e, *l, *h});
      }
    }

    // Histograms of NA-penalized per-subject agreement, one small panel per model.
    std::vector<std::pair<std::string, std::map<double, std::size_t>>> histograms;
    std::vector<fs::path> intra_files;
    for (const auto& entry : fs::directory_iterator(reliability_dir)) {
      const auto fname = entry.path().filename().string();
      if (fname.starts_with("intra_") && entry.path().extension() == ".json")
        intra_files.push_back(entry.path());
    }
    std::sort(intra_files.begin(), intra_files.end());
    for (const auto& path : intra_files) {
      std::ifstream in(path);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + " is not valid JSON: " + e.what());
      }
      std::map<double, std::size_t> h;
      for (const auto& bin : doc.at("na_penalized").at("histogram"))
        h[bin.at("level").get<double>()] = bin.at("count").get<std::size_t>();
      histograms.emplace_back(doc.at("model_id").get<std::string>(), std::move(h));
    }
    if (rows.empty() && histograms.empty())
      throw InputError(reliability_dir.string() +
                       " holds neither intra_*.json nor *_rater_summary.csv");

    if (!rows.empty()) {
      const auto csv_path = dir / "coefficients.csv";
      write_table(csv_path, {"scope", "model", "metric", "estimate", "ci_low", "ci_high", "n_used"},
                  rows);
      bundle.csv.push_back(csv_path);
    }
    if (!histograms.empty()) {
      const double panel_w = 260, panel_h = 160, cols = 3;
      const auto n = static_cast<double>(histograms.size());
      const double grid_rows = std::ceil(n / cols);
      Svg svg(panel_w * std::min(n, cols) + 20, 40 + panel_h * grid_rows);
      svg.text(10, 22, "NA-penalized per-subject agreement", "start", 14);
      for (std::size_t k = 0; k < histograms.size(); ++k) {
        const double x0 = 20 + panel_w * static_cast<double>(k % 3);
        const double y0 = 40 + panel_h * static_cast<double>(k / 3);
        const auto& [model, h] = histograms[k];
        std::size_t peak = 1;
        for (const auto& [level, count] : h) peak = std::max(peak, count);
        const double plot_w = panel_w - 40, plot_h = panel_h - 50;
        svg.text(x0, y0 + 12, model, "start", 11);
        svg.line(x0, y0 + 20 + plot_h, x0 + plot_w, y0 + 20 + plot_h);
        // Levels lie in [0, 1]; bars are 1/20 wide centred on the level.
        for (const auto& [level, count] : h) {
          const double bh = plot_h * static_cast<double>(count) / static_cast<double>(peak);
          const double bx = x0 + level * (plot_w - plot_w / 20);
          svg.rect(bx, y0 + 20 + plot_h - bh, plot_w / 20, bh, kPalette[0]);
          svg.text(bx + plot_w / 40, y0 + 16 + plot_h - bh, std::to_string(count), "middle", 8);
        }
        for (double tick : {0.0, 0.5, 1.0})
          svg.text(x0 + tick * (plot_w - plot_w / 20) + plot_w / 40, y0 + 32 + plot_h,
                   short_num(tick), "middle", 9);
      }
      const auto svg_path = dir / "agreement_histograms.svg";
      svg.save(svg_path);
      bundle.figures.push_back(svg_path);
    }
    if (!intervals.empty()) {
      const auto svg_path = dir / "coefficient_dotplot.svg";
      dot_plot(intervals, "Agreement coefficients with confidence intervals", svg_path);
      bundle.figures.push_back(svg_path);
    }
  }

  if (has_validity) {
    const auto table = csv::read_file(validity_dir / "validity_summary.csv");
    const auto cm = table.column("model"), cr = table.column("reference"),
               cmet = table.column("metric"), cmean = table.column("mean"),
               cse = table.column("std_error");
    std::vector<csv::Row> rows;
    std::vector<Interval> intervals;
    for (const auto& r : table.rows) {
      rows.push_back({r[cm], r[cr], r[cmet], r[cmean], r[cse]});
      const auto mean = parse_double(r[cmean]);
      const double se = parse_double(r[cse]).value_or(0.0);
      if (mean)
        intervals.push_back({r[cm] + " / " + r[cr], r[cmet], *mean, *mean - se, *mean + se});
    }
    const auto csv_path = dir / "validity.csv";
    write_table(csv_path, {"model", "reference", "metric", "mean", "std_error"}, rows);
    bundle.csv.push_back(csv_path);
    const auto svg_path = dir / "validity_dotplot.svg";
    dot_plot(intervals, "Validity metrics (mean and standard error)", svg_path);
    bundle.figures.push_back(svg_path);
  }
  return bundle;
}

}  // namespace llmrel
