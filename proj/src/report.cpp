#include "tracelens/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace tracelens {

using nlohmann::json;

json to_json(const TopKSet& set) {
    json entries = json::array();
    for (const auto& [id, score] : set.entries) entries.push_back(json{{"train_id", id}, {"score", score}});
    return json{{"test_id", set.test_id},
                {"sign", to_string(set.sign)},
                {"k", set.k},
                {"entries", entries}};
}

json to_json(const GroupShareReport& report) {
    json shares = json::object(), counts = json::object();
    for (size_t i = 0; i < report.train_groups.size(); ++i) {
        shares[report.train_groups[i]] = report.shares[i];
        counts[report.train_groups[i]] = report.counts[i];
    }
    return json{{"test_group", report.test_group}, {"sign", to_string(report.sign)},
                {"k", report.k},                   {"shares", shares},
                {"counts", counts},                {"total", report.total}};
}

json to_json(const AvgInfluenceTable& table) {
    json rows = json::object();
    for (size_t tg = 0; tg < table.test_groups.size(); ++tg) {
        json row = json::object();
        for (size_t rg = 0; rg < table.train_groups.size(); ++rg)
            row[table.train_groups[rg]] = table.at(tg, rg);
        rows[table.test_groups[tg]] = row;
    }
    return json{{"test_groups", table.test_groups},
                {"train_groups", table.train_groups},
                {"mean_scores", rows}};
}

json to_json(const ReinforcingReport& report) {
    return json{{"test_group", report.test_group},
                {"sign", to_string(report.sign)},
                {"k", report.k},
                {"reinforcing_pct", report.reinforcing_pct},
                {"complementary_pct", report.complementary_pct},
                {"other_entries", report.other_entries}};
}

json to_json(const ValidationCurve& curve) {
    json points = json::array();
    for (const auto& p : curve.points) {
        points.push_back(json{{"k", p.k},
                              {"removed", p.removed},
                              {"mean_pct_change", p.mean_pct_change},
                              {"random_mean_pct_change", p.random_mean_pct_change},
                              {"per_test_pct", p.per_test_pct},
                              {"random_per_test_pct", p.random_per_test_pct}});
    }
    // elapsed_seconds stays out of the artifact so reruns hash identically
    return json{{"sign", to_string(curve.sign)}, {"k_grid", curve.k_grid}, {"points", points}};
}

json to_json(const EpochDynamicsReport& report) {
    json epochs = json::array();
    for (const auto& e : report.epochs) {
        json matrix = json::object();
        for (size_t tg = 0; tg < report.test_groups.size(); ++tg) {
            json row = json::object();
            for (size_t rg = 0; rg < report.train_groups.size(); ++rg)
                row[report.train_groups[rg]] = e.share_matrix[tg * report.train_groups.size() + rg];
            matrix[report.test_groups[tg]] = row;
        }
        epochs.push_back(json{{"epoch", e.epoch}, {"own_share", e.own_share}, {"shares", matrix}});
    }
    json tests = json::array();
    for (const auto& w : report.wilcoxon)
        tests.push_back(json{{"epoch_a", w.epoch_a},
                             {"epoch_b", w.epoch_b},
                             {"statistic", w.statistic},
                             {"p_value", w.p_value}});
    return json{{"k", report.k},
                {"sign", to_string(report.sign)},
                {"test_groups", report.test_groups},
                {"train_groups", report.train_groups},
                {"epochs", epochs},
                {"wilcoxon", tests}};
}

json to_json(const ZeroShotReport& report) {
    return json{{"group", report.group},
                {"sign", to_string(report.sign)},
                {"k", report.k},
                {"translation_recovery_pct", report.translation_recovery_pct},
                {"verbatim_recovery_pct", report.verbatim_recovery_pct},
                {"zs_shares", to_json(report.zs_shares)}};
}

json to_json(const ImbalanceReport& report) {
    json points = json::array();
    for (const auto& p : report.points)
        points.push_back(json{{"pct", p.pct},
                              {"train_size", p.train_size},
                              {"own_pos_share", p.own_pos_share},
                              {"own_neg_share", p.own_neg_share}});
    return json{{"group", report.group}, {"k", report.k}, {"points", points}};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write report: " + path);
    out << j.dump(2) << "\n";
    if (!out) fail("io", "short write: " + path);
}

void write_group_shares_csv(const std::vector<GroupShareReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write csv: " + path);
    out << "test_group,sign,k,train_group,share_pct,count\n";
    char buf[64];
    for (const auto& r : reports) {
        for (size_t i = 0; i < r.train_groups.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.4f", r.shares[i]);
            out << r.test_group << ',' << to_string(r.sign) << ',' << r.k << ','
                << r.train_groups[i] << ',' << buf << ',' << r.counts[i] << "\n";
        }
    }
}

void write_avg_influence_csv(const AvgInfluenceTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write csv: " + path);
    out << "test_group";
    for (const auto& g : table.train_groups) out << ',' << g;
    out << "\n";
    char buf[64];
    for (size_t tg = 0; tg < table.test_groups.size(); ++tg) {
        out << table.test_groups[tg];
        for (size_t rg = 0; rg < table.train_groups.size(); ++rg) {
            std::snprintf(buf, sizeof(buf), "%.9g", table.at(tg, rg));
            out << ',' << buf;
        }
        out << "\n";
    }
}

void write_oracle_csv(const std::vector<LooResult>& loo, const std::vector<HessianInfluence>& hess,
                      const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write csv: " + path);
    out << "train_id,test_id,method,value,metadata\n";
    char buf[64];
    for (const auto& r : loo) {
        std::snprintf(buf, sizeof(buf), "%.12g", r.delta);
        json meta{{"loss_with", r.loss_with}, {"loss_without", r.loss_without}};
        out << r.train_id << ',' << r.test_id << ",loo_delta," << buf << ",\"" << meta.dump()
            << "\"\n";
    }
    for (const auto& h : hess) {
        std::snprintf(buf, sizeof(buf), "%.12g", h.score);
        json meta{{"damping", h.hessian_damping}};
        out << h.train_id << ',' << h.test_id << ",hessian," << buf << ",\"" << meta.dump()
            << "\"\n";
    }
}

// ---- SVG ------------------------------------------------------------

namespace {

constexpr int kWidth = 760;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 150;
constexpr int kMarginTop = 44;
constexpr int kMarginBottom = 52;

const char* kPalette[] = {"#4472c4", "#ed7d31", "#70ad47", "#ffc000", "#7030a0",
                          "#c00000", "#2e75b6", "#767171"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
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

struct Scale {
    double lo, hi;
    double px_lo, px_hi;
    double operator()(double v) const {
        if (hi == lo) return 0.5 * (px_lo + px_hi);
        return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
    }
};

// ticks at roughly `target` round intervals
std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    if (hi <= lo) return {lo};
    double raw = (hi - lo) / target;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> ticks;
    double first = std::ceil(lo / step) * step;
    for (double v = first; v <= hi + 1e-9 * step; v += step) ticks.push_back(v);
    return ticks;
}

void chart_header(std::string& svg, const std::string& title, const std::string& meta) {
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
           "\" height=\"" + std::to_string(kHeight) + "\" viewBox=\"0 0 " + std::to_string(kWidth) +
           " " + std::to_string(kHeight) + "\">\n";
    if (!meta.empty()) svg += "<!-- " + xml_escape(meta) + " -->\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"15\" font-weight=\"bold\">" +
           xml_escape(title) + "</text>\n";
}

void axes_and_labels(std::string& svg, const std::string& x_label, const std::string& y_label,
                     const Scale& ys) {
    // y grid + ticks
    for (double t : nice_ticks(ys.lo, ys.hi)) {
        double y = ys(t);
        svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" + fmt(y) + "\" x2=\"" +
               std::to_string(kWidth - kMarginRight) + "\" y2=\"" + fmt(y) +
               "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + std::to_string(kMarginLeft - 8) + "\" y=\"" + fmt(y + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_tick(t) +
               "</text>\n";
    }
    svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" + std::to_string(kMarginTop) +
           "\" x2=\"" + std::to_string(kMarginLeft) + "\" y2=\"" +
           std::to_string(kHeight - kMarginBottom) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" +
           std::to_string(kHeight - kMarginBottom) + "\" x2=\"" +
           std::to_string(kWidth - kMarginRight) + "\" y2=\"" +
           std::to_string(kHeight - kMarginBottom) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + std::to_string((kMarginLeft + kWidth - kMarginRight) / 2) + "\" y=\"" +
           std::to_string(kHeight - 14) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           xml_escape(x_label) + "</text>\n";
    svg += "<text x=\"18\" y=\"" + std::to_string((kMarginTop + kHeight - kMarginBottom) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 " +
           std::to_string((kMarginTop + kHeight - kMarginBottom) / 2) + ")\">" +
           xml_escape(y_label) + "</text>\n";
}

void legend(std::string& svg, const std::vector<LineSeries>& series) {
    double y = kMarginTop + 6;
    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg += "<rect x=\"" + std::to_string(kWidth - kMarginRight + 12) + "\" y=\"" + fmt(y - 9) +
               "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
        svg += "<text x=\"" + std::to_string(kWidth - kMarginRight + 30) + "\" y=\"" + fmt(y + 1) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(series[i].name) +
               "</text>\n";
        y += 18;
    }
}

void write_svg(const std::string& svg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write svg: " + path);
    out << svg;
    if (!out) fail("io", "short write: " + path);
}

}  // namespace

void svg_line_chart(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<double>& x,
                    const std::vector<LineSeries>& series, const std::string& meta) {
    double ylo = 0.0, yhi = 0.0, xlo = 0.0, xhi = 1.0;
    bool first = true;
    for (const auto& s : series) {
        for (double v : s.y) {
            if (first) {
                ylo = yhi = v;
                first = false;
            }
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
        }
    }
    if (!x.empty()) {
        xlo = *std::min_element(x.begin(), x.end());
        xhi = *std::max_element(x.begin(), x.end());
    }
    if (ylo == yhi) {
        ylo -= 1.0;
        yhi += 1.0;
    }
    double pad = 0.06 * (yhi - ylo);
    Scale xs{xlo, xhi, static_cast<double>(kMarginLeft), static_cast<double>(kWidth - kMarginRight)};
    Scale ys{ylo - pad, yhi + pad, static_cast<double>(kHeight - kMarginBottom),
             static_cast<double>(kMarginTop)};

    std::string svg;
    chart_header(svg, title, meta);
    axes_and_labels(svg, x_label, y_label, ys);
    for (double xv : x) {
        svg += "<text x=\"" + fmt(xs(xv)) + "\" y=\"" + std::to_string(kHeight - kMarginBottom + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt_tick(xv) + "</text>\n";
    }
    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        std::string points;
        for (size_t j = 0; j < x.size() && j < series[i].y.size(); ++j)
            points += fmt(xs(x[j])) + "," + fmt(ys(series[i].y[j])) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
        for (size_t j = 0; j < x.size() && j < series[i].y.size(); ++j)
            svg += "<circle cx=\"" + fmt(xs(x[j])) + "\" cy=\"" + fmt(ys(series[i].y[j])) +
                   "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    legend(svg, series);
    svg += "</svg>\n";
    write_svg(svg, path);
}

void svg_grouped_bar_chart(const std::string& path, const std::string& title,
                           const std::string& y_label, const std::vector<std::string>& categories,
                           const std::vector<LineSeries>& series, const std::string& meta) {
    double yhi = 0.0;
    for (const auto& s : series)
        for (double v : s.y) yhi = std::max(yhi, v);
    if (yhi <= 0.0) yhi = 1.0;
    Scale ys{0.0, yhi * 1.08, static_cast<double>(kHeight - kMarginBottom),
             static_cast<double>(kMarginTop)};

    std::string svg;
    chart_header(svg, title, meta);
    axes_and_labels(svg, "", y_label, ys);

    const double plot_w = static_cast<double>(kWidth - kMarginRight - kMarginLeft);
    const double cat_w = plot_w / std::max<size_t>(1, categories.size());
    const double bar_w = 0.8 * cat_w / std::max<size_t>(1, series.size());

    for (size_t c = 0; c < categories.size(); ++c) {
        double cx = kMarginLeft + (static_cast<double>(c) + 0.5) * cat_w;
        svg += "<text x=\"" + fmt(cx) + "\" y=\"" + std::to_string(kHeight - kMarginBottom + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               xml_escape(categories[c]) + "</text>\n";
        for (size_t s = 0; s < series.size(); ++s) {
            if (c >= series[s].y.size()) continue;
            const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
            double v = series[s].y[c];
            double x0 = cx - 0.4 * cat_w + static_cast<double>(s) * bar_w;
            double y0 = ys(v);
            double h = static_cast<double>(kHeight - kMarginBottom) - y0;
            svg += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" + fmt(bar_w - 1) +
                   "\" height=\"" + fmt(std::max(0.0, h)) + "\" fill=\"" + color + "\"/>\n";
        }
    }
    legend(svg, series);
    svg += "</svg>\n";
    write_svg(svg, path);
}

}  // namespace tracelens
