#pragma once
// Minimal plain-text SVG writing: line charts for series/forecast overlays
// and annotated heatmaps for tuning grids. No external assets; every byte
// written is deterministic for identical inputs.

#include <string>
#include <vector>

#include "dam/common.hpp"

namespace dam {

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#1f6feb";
    bool dashed = false;
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<SvgSeries>& series, int width = 960, int height = 480);

// Heatmap with per-cell value labels; low values render light, high values
// dark. Row/column labels annotate the axes.
void write_heatmap(const std::string& path, const std::string& title,
                   const std::vector<std::string>& row_labels,
                   const std::vector<std::string>& col_labels, const MatrixD& values,
                   int cell_size = 64);

}  // namespace dam
