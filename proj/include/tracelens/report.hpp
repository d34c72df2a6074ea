#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracelens/analysis.hpp"
#include "tracelens/oracle.hpp"

namespace tracelens {

nlohmann::json to_json(const TopKSet& set);
nlohmann::json to_json(const GroupShareReport& report);
nlohmann::json to_json(const AvgInfluenceTable& table);
nlohmann::json to_json(const ReinforcingReport& report);
nlohmann::json to_json(const ValidationCurve& curve);
nlohmann::json to_json(const EpochDynamicsReport& report);
nlohmann::json to_json(const ZeroShotReport& report);
nlohmann::json to_json(const ImbalanceReport& report);

void write_json(const nlohmann::json& j, const std::string& path);

void write_group_shares_csv(const std::vector<GroupShareReport>& reports, const std::string& path);
void write_avg_influence_csv(const AvgInfluenceTable& table, const std::string& path);
void write_oracle_csv(const std::vector<LooResult>& loo, const std::vector<HessianInfluence>& hess,
                      const std::string& path);

// ---- SVG charts ------------------------------------------------------

// One polyline per series over a shared numeric x axis. `meta` is embedded as
// an XML comment (used to stamp the config hash into figures).
struct LineSeries {
    std::string name;
    std::vector<double> y;
};
void svg_line_chart(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<double>& x, const std::vector<LineSeries>& series,
                    const std::string& meta = "");

// Category groups on the x axis, one bar per series inside each group.
void svg_grouped_bar_chart(const std::string& path, const std::string& title,
                           const std::string& y_label,
                           const std::vector<std::string>& categories,
                           const std::vector<LineSeries>& series,
                           const std::string& meta = "");

}  // namespace tracelens
