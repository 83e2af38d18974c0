#include "goldi/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "goldi/common.hpp"

namespace goldi::io {

namespace {

constexpr int kWidth = 800, kHeight = 480;
constexpr int kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;

const char* kPalette[] = {"#c62828", "#2e7d32", "#1565c0", "#f9a825",
                          "#6a1b9a", "#ef6c00", "#00838f", "#ad1457"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

std::string text_at(double x, double y, const std::string& s,
                    const std::string& extra = "") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) +
         "\" font-family=\"sans-serif\" font-size=\"12\" " + extra + ">" +
         escape(s) + "</text>\n";
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel,
                          const std::vector<Series>& series, bool log_y) {
  require(!series.empty(), "line_plot_svg: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      double y = s.y[i];
      if (log_y && y <= 0) continue;
      if (log_y) y = std::log10(y);
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  require(xmin <= xmax && ymin <= ymax, "line_plot_svg: series empty");
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) {
    ymax += 0.5;
    ymin -= 0.5;
  }

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) {
    if (log_y) y = std::log10(y);
    return kTop + ph - (y - ymin) / (ymax - ymin) * ph;
  };

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
      "\" height=\"" + num(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" "
      "fill=\"white\"/>\n";
  svg += text_at(kLeft, 24, title, "font-size=\"15\" font-weight=\"bold\"");
  svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
         num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int tick = 0; tick <= 4; ++tick) {
    double fx = xmin + (xmax - xmin) * tick / 4;
    double fy_plot = ymin + (ymax - ymin) * tick / 4;
    double fy_label = log_y ? std::pow(10.0, fy_plot) : fy_plot;
    svg += "<line x1=\"" + num(sx(fx)) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" +
           num(sx(fx)) + "\" y2=\"" + num(kTop + ph + 5) + "\" stroke=\"#444\"/>\n";
    svg += text_at(sx(fx) - 12, kTop + ph + 20, num(fx));
    double ypix = kTop + ph - ph * tick / 4;
    svg += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(ypix) + "\" x2=\"" +
           num(kLeft) + "\" y2=\"" + num(ypix) + "\" stroke=\"#444\"/>\n";
    svg += text_at(8, ypix + 4, num(fy_label));
  }
  svg += text_at(kLeft + pw / 2 - 20, kHeight - 12, xlabel);
  svg += text_at(12, kTop - 10, ylabel);

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    std::string points;
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (log_y && s.y[i] <= 0) continue;
      points += num(sx(s.x[i])) + "," + num(sy(s.y[i])) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    double ly = kTop + 16 + 18 * static_cast<double>(si);
    svg += "<line x1=\"" + num(kWidth - kRight + 10) + "\" y1=\"" + num(ly - 4) +
           "\" x2=\"" + num(kWidth - kRight + 34) + "\" y2=\"" + num(ly - 4) +
           "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += text_at(kWidth - kRight + 40, ly, s.label);
  }
  svg += "</svg>\n";
  return svg;
}

std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  require(!labels.empty() && labels.size() == values.size(),
          "bar_chart_svg: labels/values mismatch");
  double vmax = *std::max_element(values.begin(), values.end());
  if (vmax <= 0) vmax = 1.0;
  const double pw = kWidth - kLeft - 40, ph = kHeight - kTop - kBottom;
  const double slot = pw / static_cast<double>(labels.size());

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
      "\" height=\"" + num(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" "
      "fill=\"white\"/>\n";
  svg += text_at(kLeft, 24, title, "font-size=\"15\" font-weight=\"bold\"");
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" +
         num(kLeft + pw) + "\" y2=\"" + num(kTop + ph) + "\" stroke=\"#444\"/>\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    double h = values[i] / vmax * (ph - 10);
    double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    svg += "<rect x=\"" + num(x) + "\" y=\"" + num(kTop + ph - h) + "\" width=\"" +
           num(slot * 0.7) + "\" height=\"" + num(h) + "\" fill=\"" +
           kPalette[i % 8] + "\"/>\n";
    svg += text_at(x, kTop + ph - h - 6, num(values[i]));
    svg += text_at(x, kTop + ph + 16, labels[i]);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace goldi::io
