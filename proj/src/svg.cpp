#include "dam/svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dam {
namespace {

std::string num(double x) {
    if (!std::isfinite(x)) return "0";
    // Two decimals are plenty for pixel coordinates and keep files small.
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

std::string short_num(double x) {
    if (!std::isfinite(x)) return "nan";
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
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

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw user_error("cannot write " + path);
    out << body;
    if (!out) throw user_error("short write to " + path);
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<SvgSeries>& series, int width, int height) {
    const double ml = 60, mr = 20, mt = 40, mb = 40;  // margins
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    const auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\""
        << " text-anchor=\"middle\">" << escape(title) << "</text>\n";

    // Axes with min/max labels.
    svg << "<rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw)
        << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(py(ymin))
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
        << short_num(ymin) << "</text>\n";
    svg << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(py(ymax) + 10)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
        << short_num(ymax) << "</text>\n";
    svg << "<text x=\"" << num(px(xmin)) << "\" y=\"" << num(height - mb + 16)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << short_num(xmin) << "</text>\n";
    svg << "<text x=\"" << num(px(xmax)) << "\" y=\"" << num(height - mb + 16)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
        << short_num(xmax) << "</text>\n";

    // Zero line when visible.
    if (ymin < 0.0 && ymax > 0.0) {
        svg << "<line x1=\"" << num(ml) << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(ml + pw)
            << "\" y2=\"" << num(py(0)) << "\" stroke=\"#ddd\"/>\n";
    }

    for (const auto& s : series) {
        svg << "<polyline fill=\"none\" stroke=\"" << escape(s.color) << "\" stroke-width=\"1.5\"";
        if (s.dashed) svg << " stroke-dasharray=\"5,4\"";
        svg << " points=\"";
        const std::size_t n = std::min(s.x.size(), s.y.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(s.y[i])) continue;
            svg << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        }
        svg << "\"/>\n";
    }

    // Legend.
    double ly = mt + 14;
    for (const auto& s : series) {
        svg << "<line x1=\"" << num(ml + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
            << num(ml + 34) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << escape(s.color)
            << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
        svg << "<text x=\"" << num(ml + 40) << "\" y=\"" << num(ly)
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.label)
            << "</text>\n";
        ly += 16;
    }

    svg << "</svg>\n";
    write_file(path, svg.str());
}

void write_heatmap(const std::string& path, const std::string& title,
                   const std::vector<std::string>& row_labels,
                   const std::vector<std::string>& col_labels, const MatrixD& values,
                   int cell_size) {
    const Eigen::Index rows = values.rows(), cols = values.cols();
    if (rows != static_cast<Eigen::Index>(row_labels.size()) ||
        cols != static_cast<Eigen::Index>(col_labels.size())) {
        throw std::invalid_argument("heatmap labels do not match the value grid");
    }
    const double ml = 90, mt = 70, mr = 20, mb = 20;
    const int width = static_cast<int>(ml + mr) + cell_size * static_cast<int>(cols);
    const int height = static_cast<int>(mt + mb) + cell_size * static_cast<int>(rows);

    double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double v = values(r, c);
            if (!std::isfinite(v)) continue;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    }
    if (!(vmax > vmin)) vmax = vmin + 1.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\""
        << " text-anchor=\"middle\">" << escape(title) << "</text>\n";

    for (Eigen::Index c = 0; c < cols; ++c) {
        svg << "<text x=\"" << num(ml + (static_cast<double>(c) + 0.5) * cell_size) << "\" y=\""
            << num(mt - 8) << "\" font-family=\"sans-serif\" font-size=\"11\""
            << " text-anchor=\"middle\">" << escape(col_labels[static_cast<std::size_t>(c)])
            << "</text>\n";
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        svg << "<text x=\"" << num(ml - 8) << "\" y=\""
            << num(mt + (static_cast<double>(r) + 0.5) * cell_size + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
            << escape(row_labels[static_cast<std::size_t>(r)]) << "</text>\n";
    }

    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double v = values(r, c);
            const double x = ml + static_cast<double>(c) * cell_size;
            const double y = mt + static_cast<double>(r) * cell_size;
            std::string fill = "#eeeeee";
            std::string text_fill = "#333333";
            if (std::isfinite(v)) {
                // Light (low) to dark blue (high).
                const double t = (v - vmin) / (vmax - vmin);
                const int red = static_cast<int>(std::lround(235.0 - 190.0 * t));
                const int green = static_cast<int>(std::lround(242.0 - 160.0 * t));
                const int blue = 245;
                std::ostringstream color;
                color << "rgb(" << red << ',' << green << ',' << blue << ')';
                fill = color.str();
                if (t > 0.6) text_fill = "#ffffff";
            }
            svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << cell_size
                << "\" height=\"" << cell_size << "\" fill=\"" << fill
                << "\" stroke=\"#ffffff\"/>\n";
            svg << "<text x=\"" << num(x + cell_size / 2.0) << "\" y=\""
                << num(y + cell_size / 2.0 + 4) << "\" font-family=\"sans-serif\""
                << " font-size=\"11\" text-anchor=\"middle\" fill=\"" << text_fill << "\">"
                << (std::isfinite(v) ? short_num(v) : std::string("n/a")) << "</text>\n";
        }
    }
    svg << "</svg>\n";
    write_file(path, svg.str());
}

}  // namespace dam
