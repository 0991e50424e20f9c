#pragma once

#include <string>
#include <vector>

#include "minidetr/model.hpp"

namespace minidetr {

// All emitters produce deterministic text: fixed canvas geometry, fixed
// palette, and printf-formatted numbers, so artifacts are byte-comparable.

struct Series {
    std::string label;
    std::vector<double> x, y;  // equal lengths
};

struct PlotPoint {
    double x = 0.0, y = 0.0;
    double weight = 1.0;  // scales the marker radius
};

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label);

std::string svg_bar_chart(const std::vector<double>& values, const std::vector<std::string>& labels,
                          const std::string& title, const std::string& y_label);

std::string svg_scatter(const std::vector<PlotPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label);

std::string svg_heatmap(const Heatmap& map, const std::string& title);

// minimal CSV plumbing: fields containing commas/quotes/newlines get quoted
std::string csv_escape(const std::string& field);
std::string csv_row(const std::vector<std::string>& fields);
// shortest representation that parses back to the same double
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace minidetr
