#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "entbal/data.hpp"
#include "entbal/pipeline.hpp"
#include "entbal/simulate.hpp"

namespace entbal {

// Header row required. Every column other than `outcome` is a covariate.
// Numbers are parsed strictly; empty cells and NA are errors.
InternalDataset parse_internal_csv(std::istream& in, const std::string& outcome);
InternalDataset read_internal_csv(const std::string& path, const std::string& outcome);

// Summary JSON, version 1:
//   {"version": 1, "basis": [..], "mu_x_ex": [..], "beta_ex": [..], "link": "identity"|"logit",
//    "mu_y_ex": num, "n1": int, "sigma_w": [[..]]}
// beta_ex, link, mu_y_ex, sigma_w and version are optional.
ExternalSummary summary_from_json(const nlohmann::json& j);
nlohmann::json summary_to_json(const ExternalSummary& s);
ExternalSummary read_summary_json(const std::string& path);

nlohmann::json report_to_json(const EstimateReport& r);
EstimateReport report_from_json(const nlohmann::json& j);
std::string report_table(const EstimateReport& r);
std::string report_csv(const EstimateReport& r);

// One row per variant.
std::string simulation_csv(const SimulationResult& result);
nlohmann::json simulation_manifest(const SimulationResult& result);
// One row per replication and variant.
std::string simulation_raw_csv(const SimulationResult& result);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace entbal
