#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "surge/errors.hpp"
#include "surge/time.hpp"

namespace surge {

// Small standalone SVG chart writer: line series with gap (NaN) breaks,
// scatter series, a y=x guide, a legend and a corner annotation. Enough for
// loss-curve, time-series and prediction-scatter figures without any display
// dependency.
class SvgChart {
public:
  SvgChart(std::string title, std::string xlabel, std::string ylabel, int width = 960,
           int height = 430)
      : title_(std::move(title)),
        xlabel_(std::move(xlabel)),
        ylabel_(std::move(ylabel)),
        width_(width),
        height_(height) {}

  void x_as_time(bool on) { x_time_ = on; }

  void add_line(const std::string& label, const std::string& color,
                std::vector<double> xs, std::vector<double> ys, bool dashed = false,
                double stroke_width = 1.6) {
    series_.push_back(Series{label, color, std::move(xs), std::move(ys), false, dashed,
                             stroke_width});
  }

  void add_points(const std::string& label, const std::string& color,
                  std::vector<double> xs, std::vector<double> ys) {
    series_.push_back(Series{label, color, std::move(xs), std::move(ys), true, false, 1.0});
  }

  void add_diagonal_guide() { diagonal_ = true; }

  void annotate(const std::string& text) { annotation_ = text; }

  void write(const std::string& path) const {
    double xmin = HUGE_VAL, xmax = -HUGE_VAL, ymin = HUGE_VAL, ymax = -HUGE_VAL;
    for (const auto& s : series_) {
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
        xmin = std::min(xmin, s.xs[i]);
        xmax = std::max(xmax, s.xs[i]);
        ymin = std::min(ymin, s.ys[i]);
        ymax = std::max(ymax, s.ys[i]);
      }
    }
    if (!(xmin <= xmax)) throw io_error("svg chart '" + title_ + "': no finite data");
    if (diagonal_) {
      const double lo = std::min(xmin, ymin), hi = std::max(xmax, ymax);
      xmin = ymin = lo;
      xmax = ymax = hi;
    }
    if (xmax == xmin) {
      xmax += 1.0;
      xmin -= 1.0;
    }
    if (ymax == ymin) {
      ymax += 1.0;
      ymin -= 1.0;
    }
    const double ypad = 0.06 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const double L = 74, R = 24, T = 40, B = 52;
    const double pw = width_ - L - R, ph = height_ - T - B;
    auto X = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
    auto Y = [&](double y) { return T + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::string out;
    out.reserve(1 << 16);
    char buf[512];
    auto emitf = [&](const char* fmt, auto... args) {
      std::snprintf(buf, sizeof(buf), fmt, args...);
      out += buf;
    };

    emitf("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
          "viewBox=\"0 0 %d %d\" font-family=\"Helvetica,Arial,sans-serif\">\n",
          width_, height_, width_, height_);
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    emitf("<text x=\"%.1f\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">%s</text>\n",
          L + pw / 2, escape(title_).c_str());

    // gridlines + ticks
    const auto yticks = numeric_ticks(ymin, ymax);
    for (double ty : yticks) {
      emitf("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#e0e0e0\"/>\n", L,
            Y(ty), L + pw, Y(ty));
      emitf("<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%s</text>\n",
            L - 6, Y(ty) + 4, format_value(ty).c_str());
    }
    const auto xticks = x_time_ ? time_ticks(xmin, xmax) : numeric_ticks(xmin, xmax);
    for (double tx : xticks) {
      emitf("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#e0e0e0\"/>\n",
            X(tx), T, X(tx), T + ph);
      const std::string label = x_time_ ? format_time_tick(tx) : format_value(tx);
      emitf("<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%s</text>\n",
            X(tx), T + ph + 16, label.c_str());
    }
    emitf("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
          "stroke=\"#606060\"/>\n",
          L, T, pw, ph);
    emitf("<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
          L + pw / 2, static_cast<double>(height_) - 10, escape(xlabel_).c_str());
    emitf("<text x=\"16\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" "
          "transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
          T + ph / 2, T + ph / 2, escape(ylabel_).c_str());

    if (diagonal_) {
      emitf("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#999999\" "
            "stroke-dasharray=\"5,4\"/>\n",
            X(xmin), Y(xmin), X(xmax), Y(xmax));
    }

    for (const auto& s : series_) {
      if (s.points) {
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
          if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
          emitf("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"2.2\" fill=\"%s\" fill-opacity=\"0.55\"/>\n",
                X(s.xs[i]), Y(s.ys[i]), s.color.c_str());
        }
      } else {
        bool open = false;
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
          const bool ok = std::isfinite(s.xs[i]) && std::isfinite(s.ys[i]);
          if (ok && !open) {
            emitf("<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"%.1f\"%s points=\"",
                  s.color.c_str(), s.stroke_width,
                  s.dashed ? " stroke-dasharray=\"6,4\"" : "");
            open = true;
          }
          if (ok) {
            emitf("%.1f,%.1f ", X(s.xs[i]), Y(s.ys[i]));
          } else if (open) {
            out += "\"/>\n";
            open = false;
          }
        }
        if (open) out += "\"/>\n";
      }
    }

    // legend
    double ly = T + 14;
    for (const auto& s : series_) {
      if (s.label.empty()) continue;
      emitf("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
            "stroke-width=\"2.4\"%s/>\n",
            L + pw - 150, ly - 4, L + pw - 126, ly - 4, s.color.c_str(),
            s.dashed ? " stroke-dasharray=\"6,4\"" : "");
      emitf("<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\">%s</text>\n", L + pw - 120, ly,
            escape(s.label).c_str());
      ly += 16;
    }
    if (!annotation_.empty()) {
      emitf("<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\">%s</text>\n", L + 10, T + 18,
            escape(annotation_).c_str());
    }
    out += "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write " + path);
    f << out;
    if (!f) throw io_error("write failed: " + path);
  }

private:
  struct Series {
    std::string label, color;
    std::vector<double> xs, ys;
    bool points;
    bool dashed;
    double stroke_width;
  };

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        default: out += c;
      }
    }
    return out;
  }

  static std::vector<double> numeric_ticks(double lo, double hi) {
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
      if (mag * m >= raw) {
        step = mag * m;
        break;
      }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) {
      ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    }
    return ticks;
  }

  static std::vector<double> time_ticks(double lo, double hi) {
    static const double steps[] = {3600,       3 * 3600,  6 * 3600,   12 * 3600, 86400,
                                   2 * 86400,  7 * 86400, 14 * 86400, 30 * 86400,
                                   91 * 86400, 182 * 86400, 365 * 86400};
    double step = steps[sizeof(steps) / sizeof(steps[0]) - 1];
    for (double s : steps) {
      if ((hi - lo) / s <= 7.0) {
        step = s;
        break;
      }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1; t += step) ticks.push_back(t);
    return ticks;
  }

  static std::string format_value(double v) {
    char buf[48];
    if (v != 0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e6)) {
      std::snprintf(buf, sizeof(buf), "%.2e", v);
    } else {
      std::snprintf(buf, sizeof(buf), "%.4g", v);
    }
    return buf;
  }

  std::string format_time_tick(double t) const {
    const std::string iso = format_utc(static_cast<UtcTime>(t));
    // "YYYY-MM-DDTHH:MM:SSZ" -> date, plus hour when sub-daily
    if (std::fmod(t, 86400.0) == 0.0) return iso.substr(0, 10);
    return iso.substr(5, 5) + " " + iso.substr(11, 5);
  }

  std::string title_, xlabel_, ylabel_;
  int width_, height_;
  bool x_time_ = false;
  bool diagonal_ = false;
  std::string annotation_;
  std::vector<Series> series_;
};

}  // namespace surge
