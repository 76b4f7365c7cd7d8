#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "hybridseg/errors.hpp"

namespace hseg::cli {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<double>& x, const std::vector<Series>& series) {
    if (x.empty() || series.empty()) throw UsageError("plot: nothing to draw");
    for (const auto& s : series)
        if (s.y.size() != x.size())
            throw UsageError("plot: series '" + s.label + "' length differs from x");

    const double width = 720, height = 440;
    const double ml = 64, mr = 16, mt = 40, mb = 48;  // margins
    const double pw = width - ml - mr, ph = height - mt - mb;

    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (const auto& s : series)
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    if (!(ymax > ymin)) {  // flat data still gets a visible band
        ymax += 0.5;
        ymin -= 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const double xmin = x.front(), xmax = x.back();
    const double xspan = xmax > xmin ? xmax - xmin : 1.0;

    auto px = [&](double v) { return ml + (v - xmin) / xspan * pw; };
    auto py = [&](double v) { return mt + (ymax - v) / (ymax - ymin) * ph; };

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");

    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";

    // gridlines + y labels
    for (int i = 0; i <= 4; ++i) {
        const double v = ymin + (ymax - ymin) * i / 4.0;
        const double yy = py(v);
        f << "<line x1=\"" << ml << "\" y1=\"" << yy << "\" x2=\"" << ml + pw << "\" y2=\"" << yy
          << "\" stroke=\"#dddddd\"/>\n";
        f << "<text x=\"" << ml - 6 << "\" y=\"" << yy + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(v)
          << "</text>\n";
    }
    // axes
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
    // x labels: first, middle, last epoch
    for (double v : {xmin, xmin + xspan / 2.0, xmax}) {
        f << "<text x=\"" << px(v) << "\" y=\"" << mt + ph + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(v)
          << "</text>\n";
    }
    f << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";

    for (const auto& s : series) {
        f << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (i) f << ' ';
            f << px(x[i]) << ',' << py(s.y[i]);
        }
        f << "\"/>\n";
    }

    // legend, top-right inside the plot area
    double ly = mt + 14;
    for (const auto& s : series) {
        const double lx = ml + pw - 150;
        f << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22 << "\" y2=\""
          << ly - 4 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        f << "<text x=\"" << lx + 28 << "\" y=\"" << ly
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
        ly += 16;
    }

    f << "</svg>\n";
    if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace hseg::cli
