#pragma once

#include <string>

namespace pctl {

// Renders loss and accuracy curves from a metrics CSV into a standalone SVG.
std::string render_metrics_svg(const std::string& csv_text);
void plot_metrics_csv(const std::string& csv_path, const std::string& svg_path);

}  // namespace pctl
