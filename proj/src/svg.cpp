#include "densforge/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace densforge {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
const char* const kPalette[] = {"#4e79a7", "#e15759", "#59a14f", "#f28e2b", "#76b7b2", "#b07aa1"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

double axis_max(const std::vector<ChartSeries>& series, const double* reference) {
  double top = reference ? *reference : 0.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) top = std::max(top, v);
  if (top <= 0.0) return 1.0;
  const double step = std::pow(10.0, std::floor(std::log10(top)));
  return std::ceil(top * 1.1 / step) * step;
}

std::string frame(const std::string& title, const std::string& y_label, double y_max) {
  const double plot_h = kHeight - kTop - kBottom;
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + num(kWidth) + "\" height=\"" +
         num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
         "</text>\n";
  out += "<text x=\"14\" y=\"" + num(kTop + plot_h / 2) + "\" transform=\"rotate(-90 14 " + num(kTop + plot_h / 2) +
         ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = y_max * i / 5.0;
    const double y = kTop + plot_h * (1.0 - i / 5.0);
    out += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kWidth - kRight) + "\" y2=\"" + num(y) +
           "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  out += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kHeight - kBottom) + "\" x2=\"" + num(kWidth - kRight) +
         "\" y2=\"" + num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  return out;
}

std::string legend(const std::vector<ChartSeries>& series) {
  std::string out;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double x = kLeft + 10.0 + 130.0 * static_cast<double>(s);
    const double y = kHeight - 18.0;
    out += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 10) + "\" width=\"12\" height=\"12\" fill=\"" +
           kPalette[s % 6] + "\"/>\n";
    out += "<text x=\"" + num(x + 16) + "\" y=\"" + num(y) + "\">" + escape(series[s].name) + "</text>\n";
  }
  return out;
}

std::string category_labels(const std::vector<std::string>& categories, double slot) {
  std::string out;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const double x = kLeft + slot * (static_cast<double>(i) + 0.5);
    out += "<text x=\"" + num(x) + "\" y=\"" + num(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" +
           escape(categories[i]) + "</text>\n";
  }
  return out;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<ChartSeries>& series, const std::string& y_label,
                          const double* reference_line) {
  const double y_max = axis_max(series, reference_line);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double slot = categories.empty() ? plot_w : plot_w / static_cast<double>(categories.size());
  const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  std::string out = frame(title, y_label, y_max);
  for (std::size_t s = 0; s < series.size(); ++s)
    for (std::size_t i = 0; i < categories.size() && i < series[s].values.size(); ++i) {
      const double v = std::isfinite(series[s].values[i]) ? std::max(0.0, series[s].values[i]) : 0.0;
      const double h = plot_h * v / y_max;
      const double x = kLeft + slot * static_cast<double>(i) + slot * 0.1 + bar * static_cast<double>(s);
      out += "<rect x=\"" + num(x) + "\" y=\"" + num(kTop + plot_h - h) + "\" width=\"" + num(bar) + "\" height=\"" +
             num(h) + "\" fill=\"" + kPalette[s % 6] + "\"/>\n";
    }
  if (reference_line) {
    const double y = kTop + plot_h * (1.0 - *reference_line / y_max);
    out += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kWidth - kRight) + "\" y2=\"" + num(y) +
           "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
  }
  out += category_labels(categories, slot);
  out += legend(series);
  out += "</svg>\n";
  return out;
}

std::string line_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                           const std::vector<ChartSeries>& series, const std::string& y_label) {
  const double y_max = axis_max(series, nullptr);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double slot = categories.empty() ? plot_w : plot_w / static_cast<double>(categories.size());
  std::string out = frame(title, y_label, y_max);
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::string points;
    for (std::size_t i = 0; i < categories.size() && i < series[s].values.size(); ++i) {
      const double v = std::isfinite(series[s].values[i]) ? std::max(0.0, series[s].values[i]) : 0.0;
      const double x = kLeft + slot * (static_cast<double>(i) + 0.5);
      const double y = kTop + plot_h * (1.0 - v / y_max);
      points += num(x) + "," + num(y) + " ";
      out += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3\" fill=\"" + kPalette[s % 6] + "\"/>\n";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kPalette[s % 6]) + "\" stroke-width=\"2\" points=\"" +
           points + "\"/>\n";
  }
  out += category_labels(categories, slot);
  out += legend(series);
  out += "</svg>\n";
  return out;
}

}  // namespace densforge
