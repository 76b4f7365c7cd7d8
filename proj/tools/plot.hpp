#pragma once

#include <string>
#include <vector>

namespace hseg::cli {

struct Series {
    std::string label;
    std::string color;       // SVG color
    std::vector<double> y;   // one value per x
};

/// Writes a self-contained SVG line chart. Axes span the observed ranges
/// (padded 5%); x carries the epoch numbers.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<double>& x, const std::vector<Series>& series);

}  // namespace hseg::cli
