#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "biometry/core.hpp"
#include "biometry/errors.hpp"

// Small self-contained SVG chart writer for convergence curves and
// Bland-Altman plots. No rasterization, no external tooling; the output is
// plain SVG 1.1 that any browser renders.

namespace biometry::svg {

struct Series {
    std::string label;
    std::string color = "#1f77b4";
    std::vector<Point2D> points;
    bool dashed = false;
};

struct VLine {
    double x = 0.0;
    std::string color = "#999999";
    std::string label;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    std::vector<VLine> vlines; // dashed vertical guides (lr drops, best epochs)
    int width = 860;
    int height = 520;
};

struct HLine {
    double value = 0.0;
    std::string label;
    std::string color = "#d62728";
    bool dashed = true;
};

struct ScatterPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Point2D> points;
    std::vector<HLine> hlines;
    std::string point_color = "#1f77b4";
    int width = 860;
    int height = 520;
};

namespace detail {

inline std::string escape_xml(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

inline std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

struct Range {
    double lo = 0.0, hi = 1.0;
    void include(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
};

/// Round step to a 1/2/5 decade so tick labels stay readable.
inline double nice_step(double span, int target_ticks) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / std::max(1, target_ticks);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double frac = raw / mag;
    double step;
    if (frac <= 1.0) step = 1.0;
    else if (frac <= 2.0) step = 2.0;
    else if (frac <= 5.0) step = 5.0;
    else step = 10.0;
    return step * mag;
}

inline std::vector<double> ticks(double lo, double hi, int target) {
    const double step = nice_step(hi - lo, target);
    std::vector<double> out;
    double t = std::ceil(lo / step) * step;
    for (; t <= hi + 1e-9 * step; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    return out;
}

inline std::string tick_label(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

struct Frame {
    int width, height;
    double x0, x1, y0, y1; // data ranges
    int ml = 66, mr = 18, mt = 40, mb = 52;

    double px(double x) const {
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr);
    }
    double py(double y) const {
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb);
    }
};

inline void open_svg(std::ostringstream& os, int w, int h) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline void draw_axes(std::ostringstream& os, const Frame& f, const std::string& title,
                      const std::string& x_label, const std::string& y_label) {
    const double left = f.ml, right = f.width - f.mr;
    const double top = f.mt, bottom = f.height - f.mb;
    for (double t : ticks(f.x0, f.x1, 8)) {
        const double x = f.px(t);
        os << "<line x1=\"" << num(x) << "\" y1=\"" << num(top) << "\" x2=\"" << num(x)
           << "\" y2=\"" << num(bottom) << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << num(x) << "\" y=\"" << num(bottom + 16)
           << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << tick_label(t) << "</text>\n";
    }
    for (double t : ticks(f.y0, f.y1, 6)) {
        const double y = f.py(t);
        os << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(right)
           << "\" y2=\"" << num(y) << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4)
           << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">" << tick_label(t)
           << "</text>\n";
    }
    os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(right - left)
       << "\" height=\"" << num(bottom - top)
       << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    if (!title.empty())
        os << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(top - 14)
           << "\" font-size=\"15\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << escape_xml(title) << "</text>\n";
    if (!x_label.empty())
        os << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(f.height - 14)
           << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
           << escape_xml(x_label) << "</text>\n";
    if (!y_label.empty())
        os << "<text x=\"16\" y=\"" << num((top + bottom) / 2)
           << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" "
              "transform=\"rotate(-90 16 "
           << num((top + bottom) / 2) << ")\">" << escape_xml(y_label) << "</text>\n";
}

} // namespace detail

inline std::string render(const LinePlot& plot) {
    detail::Range rx, ry;
    bool any = false;
    for (const auto& s : plot.series)
        for (const auto& p : s.points) {
            if (!any) {
                rx = {p.x, p.x};
                ry = {p.y, p.y};
                any = true;
            } else {
                rx.include(p.x);
                ry.include(p.y);
            }
        }
    if (!any) throw DomainError("svg: line plot without points");
    for (const auto& v : plot.vlines) rx.include(v.x);
    if (rx.hi == rx.lo) rx.hi = rx.lo + 1.0;
    if (ry.hi == ry.lo) ry.hi = ry.lo + 1.0;
    const double pad = 0.04 * (ry.hi - ry.lo);
    detail::Frame f{plot.width, plot.height, rx.lo, rx.hi, ry.lo - pad, ry.hi + pad};

    std::ostringstream os;
    detail::open_svg(os, plot.width, plot.height);
    detail::draw_axes(os, f, plot.title, plot.x_label, plot.y_label);
    for (const auto& v : plot.vlines) {
        const double x = f.px(v.x);
        os << "<line x1=\"" << detail::num(x) << "\" y1=\"" << detail::num(f.mt) << "\" x2=\""
           << detail::num(x) << "\" y2=\"" << detail::num(plot.height - f.mb) << "\" stroke=\""
           << v.color << "\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
        if (!v.label.empty())
            os << "<text x=\"" << detail::num(x + 3) << "\" y=\"" << detail::num(f.mt + 12)
               << "\" font-size=\"10\" font-family=\"sans-serif\" fill=\"" << v.color << "\">"
               << detail::escape_xml(v.label) << "</text>\n";
    }
    for (const auto& s : plot.series) {
        if (s.points.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.8\"";
        if (s.dashed) os << " stroke-dasharray=\"6 4\"";
        os << " points=\"";
        for (const auto& p : s.points)
            os << detail::num(f.px(p.x)) << ',' << detail::num(f.py(p.y)) << ' ';
        os << "\"/>\n";
    }
    // legend, top-right inside the frame
    if (std::any_of(plot.series.begin(), plot.series.end(),
                    [](const Series& s) { return !s.label.empty(); })) {
        double lw = 0;
        for (const auto& s : plot.series) lw = std::max(lw, 7.0 * s.label.size());
        const double bx = plot.width - f.mr - lw - 46, by = f.mt + 10;
        os << "<rect x=\"" << detail::num(bx) << "\" y=\"" << detail::num(by) << "\" width=\""
           << detail::num(lw + 40) << "\" height=\"" << detail::num(18.0 * plot.series.size() + 8)
           << "\" fill=\"white\" stroke=\"#999\" stroke-width=\"0.8\"/>\n";
        for (std::size_t i = 0; i < plot.series.size(); ++i) {
            const double yy = by + 14 + 18.0 * i;
            os << "<line x1=\"" << detail::num(bx + 6) << "\" y1=\"" << detail::num(yy - 4)
               << "\" x2=\"" << detail::num(bx + 28) << "\" y2=\"" << detail::num(yy - 4)
               << "\" stroke=\"" << plot.series[i].color << "\" stroke-width=\"2\"";
            if (plot.series[i].dashed) os << " stroke-dasharray=\"6 4\"";
            os << "/>\n<text x=\"" << detail::num(bx + 33) << "\" y=\"" << detail::num(yy)
               << "\" font-size=\"11\" font-family=\"sans-serif\">"
               << detail::escape_xml(plot.series[i].label) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string render(const ScatterPlot& plot) {
    if (plot.points.empty()) throw DomainError("svg: scatter plot without points");
    detail::Range rx{plot.points[0].x, plot.points[0].x};
    detail::Range ry{plot.points[0].y, plot.points[0].y};
    for (const auto& p : plot.points) {
        rx.include(p.x);
        ry.include(p.y);
    }
    for (const auto& h : plot.hlines) ry.include(h.value);
    if (rx.hi == rx.lo) rx.hi = rx.lo + 1.0;
    if (ry.hi == ry.lo) ry.hi = ry.lo + 1.0;
    const double padx = 0.05 * (rx.hi - rx.lo), pady = 0.08 * (ry.hi - ry.lo);
    detail::Frame f{plot.width, plot.height, rx.lo - padx, rx.hi + padx, ry.lo - pady,
                    ry.hi + pady};

    std::ostringstream os;
    detail::open_svg(os, plot.width, plot.height);
    detail::draw_axes(os, f, plot.title, plot.x_label, plot.y_label);
    for (const auto& h : plot.hlines) {
        const double y = f.py(h.value);
        os << "<line x1=\"" << detail::num(f.ml) << "\" y1=\"" << detail::num(y) << "\" x2=\""
           << detail::num(plot.width - f.mr) << "\" y2=\"" << detail::num(y) << "\" stroke=\""
           << h.color << "\" stroke-width=\"1.4\"";
        if (h.dashed) os << " stroke-dasharray=\"7 4\"";
        os << "/>\n";
        if (!h.label.empty())
            os << "<text x=\"" << detail::num(plot.width - f.mr - 4) << "\" y=\""
               << detail::num(y - 5)
               << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\" fill=\""
               << h.color << "\">" << detail::escape_xml(h.label) << "</text>\n";
    }
    for (const auto& p : plot.points)
        os << "<circle cx=\"" << detail::num(f.px(p.x)) << "\" cy=\"" << detail::num(f.py(p.y))
           << "\" r=\"3.2\" fill=\"" << plot.point_color << "\" fill-opacity=\"0.65\"/>\n";
    os << "</svg>\n";
    return os.str();
}

/// Stack already-rendered SVG documents into one image, top to bottom.
/// Relies on nested <svg> elements carrying their own width/height.
inline std::string compose_vertical(const std::vector<std::string>& panels) {
    if (panels.empty()) throw DomainError("svg: nothing to compose");
    int width = 0, total = 0;
    std::vector<int> offsets;
    for (const auto& p : panels) {
        const auto wpos = p.find("width=\"");
        const auto hpos = p.find("height=\"");
        if (wpos == std::string::npos || hpos == std::string::npos)
            throw DomainError("svg: panel missing dimensions");
        const int w = std::stoi(p.substr(wpos + 7));
        const int h = std::stoi(p.substr(hpos + 8));
        width = std::max(width, w);
        offsets.push_back(total);
        total += h;
    }
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << total
       << "\">\n";
    for (std::size_t i = 0; i < panels.size(); ++i) {
        std::string p = panels[i];
        p.insert(4, " y=\"" + std::to_string(offsets[i]) + "\"");
        os << p;
    }
    os << "</svg>\n";
    return os.str();
}

inline void write_svg(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write SVG: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

} // namespace biometry::svg
