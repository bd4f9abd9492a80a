#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "rcgrl/errors.hpp"
#include "rcgrl/trainer.hpp"

namespace rcgrl {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

// Minimal line chart, one series, in the shape of an accuracy-vs-u figure.
inline std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel, const std::vector<double>& xs,
                                  const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty()) throw ConfigError("svg_line_chart: bad series");
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\">\n";
    s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title +
         "</text>\n";
    // axes
    s += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(H - B) + "\" x2=\"" +
         format_double(W - R) + "\" y2=\"" + format_double(H - B) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(T) + "\" x2=\"" +
         format_double(L) + "\" y2=\"" + format_double(H - B) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"320\" y=\"410\" text-anchor=\"middle\" font-size=\"13\">" + xlabel +
         "</text>\n";
    s += "<text x=\"16\" y=\"210\" text-anchor=\"middle\" font-size=\"13\" "
         "transform=\"rotate(-90 16 210)\">" +
         ylabel + "</text>\n";
    // ticks
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", yv);
        s += "<line x1=\"" + format_double(L - 4) + "\" y1=\"" + format_double(py(yv)) +
             "\" x2=\"" + format_double(L) + "\" y2=\"" + format_double(py(yv)) +
             "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + format_double(L - 8) + "\" y=\"" + format_double(py(yv) + 4) +
             "\" text-anchor=\"end\" font-size=\"11\">" + buf + "</text>\n";
    }
    for (size_t i = 0; i < xs.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", xs[i]);
        s += "<line x1=\"" + format_double(px(xs[i])) + "\" y1=\"" + format_double(H - B) +
             "\" x2=\"" + format_double(px(xs[i])) + "\" y2=\"" + format_double(H - B + 4) +
             "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + format_double(px(xs[i])) + "\" y=\"" + format_double(H - B + 18) +
             "\" text-anchor=\"middle\" font-size=\"11\">" + buf + "</text>\n";
    }
    // polyline + markers
    std::string pts;
    for (size_t i = 0; i < xs.size(); ++i)
        pts += format_double(px(xs[i])) + "," + format_double(py(ys[i])) + " ";
    s += "<polyline points=\"" + pts +
         "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
    for (size_t i = 0; i < xs.size(); ++i)
        s += "<circle cx=\"" + format_double(px(xs[i])) + "\" cy=\"" +
             format_double(py(ys[i])) + "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
    s += "</svg>\n";
    return s;
}

} // namespace rcgrl
