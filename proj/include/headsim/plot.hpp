#pragma once

// Minimal SVG line chart for ROC curves (log-scaled FAR axis).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace headsim {

struct RocCurve {
  std::string label;
  std::vector<double> far;
  std::vector<double> tpr;
};

inline std::string roc_svg(const std::vector<RocCurve>& curves, const std::string& title, double min_far = 1e-5) {
  const double W = 520, H = 400, L = 60, R = 150, T = 36, B = 48;
  const double pw = W - L - R, ph = H - T - B;
  const double lo = std::log10(min_far);
  auto px = [&](double far) { return L + (std::log10(std::max(far, min_far)) - lo) / (0.0 - lo) * pw; };
  auto py = [&](double tpr) { return T + (1.0 - tpr) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream s;
  char buf[160];
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << L << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", L, T, pw, ph);
  s << buf;
  for (int e = static_cast<int>(lo); e <= 0; ++e) {
    const double x = px(std::pow(10.0, e));
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", x, T, x, T + ph);
    s << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">1e%d</text>\n", x, T + ph + 16, e);
    s << buf;
  }
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0, y = py(v);
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", L, y, L + pw, y);
    s << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.1f</text>\n", L - 6, y + 4, v);
    s << buf;
  }
  s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" font-size=\"12\" text-anchor=\"middle\">FAR</text>\n";
  s << "<text x=\"16\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 " << T + ph / 2
    << ")\" text-anchor=\"middle\">TPR</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* col = colors[c % 6];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < curves[c].far.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(curves[c].far[i]), py(curves[c].tpr[i]));
      s << buf;
    }
    s << "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(c);
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                  L + pw + 10, ly, L + pw + 30, ly, col);
    s << buf;
    s << "<text x=\"" << L + pw + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << curves[c].label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace headsim
