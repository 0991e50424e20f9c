#include "minidetr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "minidetr/errors.hpp"

namespace minidetr {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* kPalette[] = {"#1f6fb2", "#d1495b", "#2e8b57", "#9467bd", "#e08214", "#4c4c4c"};
constexpr int kPaletteSize = 6;

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
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

struct Range {
    double lo = 0.0, hi = 1.0;
    void expand(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double place(double v, double a, double b) const {
        double span = hi - lo;
        if (span <= 0.0) return (a + b) / 2.0;
        return a + (v - lo) / span * (b - a);
    }
};

void open_svg(std::ostringstream& svg, const std::string& title) {
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " font-size=\"15\">" << xml_escape(title) << "</text>\n";
}

void draw_axes(std::ostringstream& svg, const Range& xr, const Range& yr, const std::string& x_label,
               const std::string& y_label) {
    double bottom = kHeight - kBottom;
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << bottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double t = i / 4.0;
        double xv = xr.lo + t * (xr.hi - xr.lo);
        double yv = yr.lo + t * (yr.hi - yr.lo);
        double px = kLeft + t * (kWidth - kLeft - kRight);
        double py = bottom - t * (bottom - kTop);
        svg << "<text x=\"" << fmt(px) << "\" y=\"" << bottom + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(xv)
            << "</text>\n";
        svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py + 3)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(yv)
            << "</text>\n";
    }
    svg << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
        << "</text>\n";
    svg << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
        << (kTop + kHeight - kBottom) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label) {
    Range xr, yr;
    bool any = false;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size()) throw ValidationError("line chart series with mismatched x/y lengths");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                xr = {s.x[i], s.x[i]};
                yr = {s.y[i], s.y[i]};
                any = true;
            }
            xr.expand(s.x[i]);
            yr.expand(s.y[i]);
        }
    }
    std::ostringstream svg;
    open_svg(svg, title);
    draw_axes(svg, xr, yr, x_label, y_label);
    double bottom = kHeight - kBottom;
    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        if (!s.x.empty()) {
            svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (size_t i = 0; i < s.x.size(); ++i) {
                double px = xr.place(s.x[i], kLeft, kWidth - kRight);
                double py = yr.place(s.y[i], bottom, kTop);
                svg << fmt(px) << "," << fmt(py) << (i + 1 < s.x.size() ? " " : "");
            }
            svg << "\"/>\n";
        }
        svg << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << kTop + 18 * si
            << "\" width=\"12\" height=\"4\" fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << kWidth - kRight - 132 << "\" y=\"" << kTop + 18 * si + 5
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.label) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_bar_chart(const std::vector<double>& values, const std::vector<std::string>& labels,
                          const std::string& title, const std::string& y_label) {
    if (!labels.empty() && labels.size() != values.size()) {
        throw ValidationError("bar chart label count does not match value count");
    }
    Range yr{0.0, 0.0};
    for (double v : values) yr.expand(v);
    if (yr.hi == yr.lo) yr.hi = yr.lo + 1.0;
    std::ostringstream svg;
    open_svg(svg, title);
    draw_axes(svg, Range{0.0, static_cast<double>(values.size())}, yr, "", y_label);
    double bottom = kHeight - kBottom;
    double span = kWidth - kLeft - kRight;
    double slot = values.empty() ? span : span / values.size();
    for (size_t i = 0; i < values.size(); ++i) {
        double x = kLeft + slot * i + slot * 0.15;
        double y = yr.place(values[i], bottom, kTop);
        svg << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(std::min(y, bottom)) << "\" width=\""
            << fmt(slot * 0.7) << "\" height=\"" << fmt(std::fabs(bottom - y)) << "\" fill=\""
            << kPalette[0] << "\"/>\n";
        if (!labels.empty() && (values.size() <= 24 || i % (values.size() / 24 + 1) == 0)) {
            svg << "<text x=\"" << fmt(x + slot * 0.35) << "\" y=\"" << bottom + 14
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">"
                << xml_escape(labels[i]) << "</text>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_scatter(const std::vector<PlotPoint>& points, const std::string& title,
                        const std::string& x_label, const std::string& y_label) {
    Range xr{0.0, 1.0}, yr{0.0, 1.0};
    for (const PlotPoint& p : points) {
        xr.expand(p.x);
        yr.expand(p.y);
    }
    std::ostringstream svg;
    open_svg(svg, title);
    draw_axes(svg, xr, yr, x_label, y_label);
    double bottom = kHeight - kBottom;
    for (const PlotPoint& p : points) {
        double px = xr.place(p.x, kLeft, kWidth - kRight);
        double py = yr.place(p.y, bottom, kTop);
        double r = 2.0 + 12.0 * std::sqrt(std::max(0.0, p.weight));
        svg << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"" << fmt(r)
            << "\" fill=\"" << kPalette[0] << "\" fill-opacity=\"0.45\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_heatmap(const Heatmap& map, const std::string& title) {
    if (map.h <= 0 || map.w <= 0 || map.values.size() != static_cast<size_t>(map.h) * map.w) {
        throw ValidationError("heatmap dimensions do not match value count");
    }
    double peak = 0.0;
    for (double v : map.values) peak = std::max(peak, v);
    if (peak <= 0.0) peak = 1.0;
    std::ostringstream svg;
    open_svg(svg, title);
    double span = std::min(kWidth - kLeft - kRight, kHeight - kTop - kBottom);
    double cell_w = span / map.w, cell_h = span / map.h;
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            double t = map.at(y, x) / peak;
            int red = static_cast<int>(std::lround(255 * t));
            int blue = static_cast<int>(std::lround(255 * (1.0 - t)));
            svg << "<rect x=\"" << fmt(kLeft + x * cell_w) << "\" y=\"" << fmt(kTop + y * cell_h)
                << "\" width=\"" << fmt(cell_w) << "\" height=\"" << fmt(cell_h) << "\" fill=\"rgb("
                << red << ",0," << blue << ")\"/>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ",";
        out += csv_escape(fields[i]);
    }
    out += "\n";
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = std::strtod(buf, nullptr);
    if (back == v) {
        // trim to the shortest representation that still round-trips
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[64];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            if (std::strtod(shorter, nullptr) == v) return shorter;
        }
    }
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot open for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw RuntimeFailure("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

}  // namespace minidetr
