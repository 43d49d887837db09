#include "mvssl/expcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace mvssl {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string xml_escape(const std::string& s) {
    std::string out;
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

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Line {
    std::string label;
    std::vector<std::pair<double, double>> pts;
    bool dashed = false;
};

struct Guide {
    std::string label;
    double y;
};

// Minimal line chart: one plot area, linear axes, legend on the right.
std::string render_chart(const std::string& title, const std::string& ylabel, const std::vector<Line>& lines,
                         const std::vector<Guide>& guides) {
    const double W = 760, H = 420, L = 70, R = 200, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& l : lines)
        for (const auto& [x, y] : l.pts) {
            if (!std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    for (const auto& g : guides) {
        y0 = std::min(y0, g.y);
        y1 = std::max(y1, g.y);
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1;
    if (!std::isfinite(y0)) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
        o << "<line x1=\"" << sx(xv) << "\" y1=\"" << H - B << "\" x2=\"" << sx(xv) << "\" y2=\"" << H - B + 5
          << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt(xv)
          << "</text>\n"
          << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << L << "\" y2=\"" << sy(yv)
          << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << L - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">iteration</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
    for (const auto& g : guides) {
        o << "<line x1=\"" << L << "\" y1=\"" << sy(g.y) << "\" x2=\"" << W - R << "\" y2=\"" << sy(g.y)
          << "\" stroke=\"#999\" stroke-dasharray=\"6 4\"/>\n"
          << "<text x=\"" << W - R - 4 << "\" y=\"" << sy(g.y) - 4 << "\" text-anchor=\"end\" fill=\"#666\">"
          << xml_escape(g.label) << "</text>\n";
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const char* color = kPalette[i % (sizeof kPalette / sizeof *kPalette)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
        if (lines[i].dashed) o << " stroke-dasharray=\"4 3\"";
        o << " points=\"";
        for (const auto& [x, y] : lines[i].pts)
            if (std::isfinite(y)) o << sx(x) << "," << sy(y) << " ";
        o << "\"/>\n";
        const double ly = T + 10 + 18.0 * i;
        o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"";
        if (lines[i].dashed) o << " stroke-dasharray=\"4 3\"";
        o << "/>\n<text x=\"" << W - R + 42 << "\" y=\"" << ly + 4 << "\">" << xml_escape(lines[i].label)
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

Line series(const std::string& label, const MetricsTimeline& tl, const std::function<double(const TimelineRow&)>& f,
            bool dashed = false) {
    Line l;
    l.label = label;
    l.dashed = dashed;
    for (const auto& r : tl.rows) l.pts.emplace_back(static_cast<double>(r.iter), f(r));
    return l;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("plot: cannot write '" + path + "'");
    out << body;
}

}  // namespace

std::vector<std::string> cmd_plot(const std::vector<std::string>& csv_paths, const std::string& out_prefix,
                                  std::optional<Thresholds> guides) {
    if (csv_paths.empty()) throw ConfigError("plot: no timeline given");
    std::vector<PlotSeries> runs;
    for (const auto& p : csv_paths) {
        std::ifstream in(p);
        if (!in) throw DataError("plot: cannot open '" + p + "'");
        runs.push_back({p, MetricsTimeline::read_csv(in)});
    }
    std::string prefix = out_prefix;
    if (prefix.size() > 4 && prefix.substr(prefix.size() - 4) == ".svg") prefix.resize(prefix.size() - 4);
    const bool overlay = runs.size() > 1;
    auto tag = [&](const PlotSeries& r, const std::string& what) {
        return overlay ? r.label + " " + what : what;
    };

    std::vector<Line> phi, acc, tau;
    for (const auto& r : runs) {
        phi.push_back(series(tag(r, "min-slot"), r.timeline, [](const TimelineRow& x) { return x.phi_second_min; }));
        phi.push_back(series(tag(r, "max-slot"), r.timeline, [](const TimelineRow& x) { return x.phi_max; }));
        acc.push_back(series(tag(r, "multi-view"), r.timeline, [](const TimelineRow& x) { return x.acc_test_multi; }));
        acc.push_back(series(tag(r, "single-view"), r.timeline, [](const TimelineRow& x) { return x.acc_test_single; }));
        tau.push_back(series(tag(r, "threshold"), r.timeline, [](const TimelineRow& x) { return x.tau_t; }));
        tau.push_back(series(tag(r, "gate pass"), r.timeline, [](const TimelineRow& x) { return x.gate_pass_frac; }, true));
    }
    std::vector<Guide> g;
    if (guides) g = {{"c_hi", guides->c_hi}, {"c_lo", guides->c_lo}};

    const std::vector<std::string> paths = {prefix + "_phi.svg", prefix + "_accuracy.svg", prefix + "_tau.svg"};
    write_file(paths[0], render_chart("Feature correlation", "Phi", phi, g));
    write_file(paths[1], render_chart("Test accuracy by view", "accuracy", acc, {}));
    write_file(paths[2], render_chart("Confidence threshold", "value", tau, {}));
    return paths;
}

}  // namespace mvssl
