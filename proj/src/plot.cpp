#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "common.hpp"

namespace pctl {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

struct Series {
  std::string name;
  std::string color;
  std::vector<double> values;
};

void draw_panel(std::ostringstream& svg, double x0, double y0, double w, double h,
                const std::string& title, const std::vector<Series>& series,
                const std::vector<double>& epochs) {
  double lo = 0.0, hi = 1e-9;
  for (const Series& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;
  auto px = [&](std::size_t i) {
    double frac = epochs.size() > 1
                      ? static_cast<double>(i) / static_cast<double>(epochs.size() - 1)
                      : 0.5;
    return x0 + frac * w;
  };
  auto py = [&](double v) { return y0 + h - (v - lo) / span * h; };

  svg << "<rect x='" << x0 << "' y='" << y0 << "' width='" << w << "' height='" << h
      << "' fill='none' stroke='#888'/>\n";
  svg << "<text x='" << x0 << "' y='" << y0 - 8 << "' font-size='14'>" << title << "</text>\n";
  double legend_y = y0 + 16;
  for (const Series& s : series) {
    if (s.values.empty()) continue;
    svg << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      svg << px(i) << "," << py(s.values[i]) << " ";
    }
    svg << "'/>\n";
    svg << "<text x='" << x0 + w - 140 << "' y='" << legend_y << "' font-size='11' fill='"
        << s.color << "'>" << s.name << "</text>\n";
    legend_y += 14;
  }
  svg << "<text x='" << x0 << "' y='" << y0 + h + 16 << "' font-size='11'>" << format_double(lo)
      << "</text>\n";
  svg << "<text x='" << x0 << "' y='" << y0 + 12 << "' font-size='11'>" << format_double(hi)
      << "</text>\n";
}

}  // namespace

std::string render_metrics_svg(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw Error::config("plot: empty metrics CSV");
  std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"epoch", "total", "val_ce", "val_acc", "test_acc"}) {
    if (!col.count(required)) {
      throw Error::config("plot: metrics CSV is missing column '" + std::string(required) + "'");
    }
  }

  std::vector<double> epochs;
  std::map<std::string, std::vector<double>> data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error::config("plot: metrics CSV line " + std::to_string(line_no) +
                          " has the wrong number of cells");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        data[header[i]].push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        throw Error::config("plot: metrics CSV line " + std::to_string(line_no) +
                            ": cannot parse '" + cells[i] + "'");
      }
    }
    epochs.push_back(data["epoch"].back());
  }
  if (epochs.empty()) throw Error::config("plot: metrics CSV has no rows");

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='360' "
         "viewBox='0 0 900 360'>\n";
  svg << "<rect width='900' height='360' fill='white'/>\n";

  std::vector<Series> losses = {{"total", "#c0392b", data["total"]},
                                {"val_ce", "#2980b9", data["val_ce"]}};
  if (data.count("l_dual_proto_nce")) {
    losses.push_back({"l_dual_proto_nce", "#8e44ad", data["l_dual_proto_nce"]});
  }
  draw_panel(svg, 50, 40, 360, 260, "loss", losses, epochs);

  std::vector<Series> accs = {{"val_acc", "#27ae60", data["val_acc"]},
                              {"test_acc", "#e67e22", data["test_acc"]}};
  draw_panel(svg, 490, 40, 360, 260, "accuracy", accs, epochs);

  svg << "</svg>\n";
  return svg.str();
}

void plot_metrics_csv(const std::string& csv_path, const std::string& svg_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error::config("cannot open metrics CSV '" + csv_path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::ofstream out(svg_path);
  if (!out) throw Error::config("cannot write SVG '" + svg_path + "'");
  out << render_metrics_svg(buf.str());
  if (!out) throw Error::runtime("SVG write failed for '" + svg_path + "'");
}

}  // namespace pctl
