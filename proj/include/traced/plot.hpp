#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "traced/dataset.hpp"
#include "traced/metrics.hpp"

namespace traced {

/// One row of the trajectory CSV
/// (student_id,step,timestamp,concept_id,prior,posterior,predicted).
struct TrajectoryRow {
    std::string student;
    long long step = 0;
    long long timestamp = 0;
    long long concept_id = 0;
    double prior = 0, posterior = 0, predicted = 0;
};

inline std::vector<TrajectoryRow> parse_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorruptFile("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw EmptyFile("empty trajectory file: " + path);
    std::vector<TrajectoryRow> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.back() == '\r') line.pop_back();
        auto f = detail::split_csv_line(line);
        if (f.size() != 7) throw MalformedRow(lineno, "expected 7 fields");
        TrajectoryRow r;
        r.student = f[0];
        try {
            r.step = std::stoll(f[1]);
            r.timestamp = std::stoll(f[2]);
            r.concept_id = std::stoll(f[3]);
            r.prior = std::stod(f[4]);
            r.posterior = std::stod(f[5]);
            r.predicted = std::stod(f[6]);
        } catch (...) {
            throw MalformedRow(lineno, "bad numeric field");
        }
        out.push_back(std::move(r));
    }
    if (out.empty()) throw EmptyFile("no data rows in " + path);
    return out;
}

namespace detail {

inline const char* plot_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
    return palette[i % 8];
}

inline std::string polyline(const std::vector<std::pair<double, double>>& pts,
                            const std::string& color, bool dashed) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (dashed) s << " stroke-dasharray=\"5,3\"";
    s << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) s << " ";
        s << pts[i].first << "," << pts[i].second;
    }
    s << "\"/>\n";
    return s.str();
}

}  // namespace detail

/// Prior (dashed) and posterior (solid) mastery lines, one color per
/// concept, steps on the x axis.
inline std::string svg_mastery_plot(const std::vector<TrajectoryRow>& rows) {
    const double W = 800, H = 400, ML = 50, MR = 20, MT = 20, MB = 40;
    long long max_step = 0;
    for (const auto& r : rows) max_step = std::max(max_step, r.step);
    auto sx = [&](double step) {
        return ML + (W - ML - MR) * (max_step ? step / static_cast<double>(max_step) : 0.5);
    };
    auto sy = [&](double p) { return MT + (H - MT - MB) * (1.0 - p); };

    std::map<long long, std::vector<const TrajectoryRow*>> by_concept;
    for (const auto& r : rows) by_concept[r.concept_id].push_back(&r);

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    svg << "<line x1=\"" << ML << "\" y1=\"" << sy(0) << "\" x2=\"" << W - MR << "\" y2=\""
        << sy(0) << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << ML << "\" y1=\"" << sy(0) << "\" x2=\"" << ML << "\" y2=\"" << sy(1)
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 8) << "\" text-anchor=\"middle\">step"
        << "</text>\n"
        << "<text x=\"14\" y=\"" << (H / 2)
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << (H / 2)
        << ")\">mastery</text>\n";
    std::size_t ci = 0;
    for (const auto& [cid, rs] : by_concept) {
        std::vector<std::pair<double, double>> prior_pts, post_pts;
        for (const auto* r : rs) {
            prior_pts.emplace_back(sx(static_cast<double>(r->step)), sy(r->prior));
            post_pts.emplace_back(sx(static_cast<double>(r->step)), sy(r->posterior));
        }
        const char* color = detail::plot_color(ci);
        svg << detail::polyline(prior_pts, color, true)
            << detail::polyline(post_pts, color, false);
        svg << "<text x=\"" << (W - MR - 60) << "\" y=\"" << (MT + 14 * (ci + 1))
            << "\" fill=\"" << color << "\">concept " << cid << "</text>\n";
        ++ci;
    }
    svg << "</svg>\n";
    return svg.str();
}

/// PCA scatter: student-state points connected by a polyline over time,
/// concept embedding points as squares.
inline std::string svg_trajectory_plot(const std::vector<std::vector<double>>& state_points,
                                       const std::vector<std::vector<double>>& concept_points) {
    std::vector<std::vector<double>> all = state_points;
    all.insert(all.end(), concept_points.begin(), concept_points.end());
    PcaResult pca = pca_project(all);

    const double W = 600, H = 600, M = 40;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : pca.points) {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
        ymin = std::min(ymin, p[1]);
        ymax = std::max(ymax, p[1]);
    }
    double xr = std::max(xmax - xmin, 1e-12), yr = std::max(ymax - ymin, 1e-12);
    auto sx = [&](double x) { return M + (W - 2 * M) * (x - xmin) / xr; };
    auto sy = [&](double y) { return H - M - (H - 2 * M) * (y - ymin) / yr; };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::vector<std::pair<double, double>> path;
    for (std::size_t i = 0; i < state_points.size(); ++i)
        path.emplace_back(sx(pca.points[i][0]), sy(pca.points[i][1]));
    svg << detail::polyline(path, "#1f77b4", false);
    for (std::size_t i = 0; i < state_points.size(); ++i)
        svg << "<circle cx=\"" << path[i].first << "\" cy=\"" << path[i].second
            << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    for (std::size_t i = 0; i < concept_points.size(); ++i) {
        double x = sx(pca.points[state_points.size() + i][0]);
        double y = sy(pca.points[state_points.size() + i][1]);
        svg << "<rect x=\"" << (x - 4) << "\" y=\"" << (y - 4)
            << "\" width=\"8\" height=\"8\" fill=\"#d62728\"/>\n"
            << "<text x=\"" << (x + 6) << "\" y=\"" << (y + 4) << "\" font-size=\"10\">k" << i
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace traced
