// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ptk::cost {

struct CostInputs {
    double e_gpu_watts = 560.0;
    std::uint32_t n_gpus = 32;
    double wall_hours = 0.0;
    double pue = 1.04;
    double carbon_intensity = 0.004;  // kg CO2 per kWh
    double price_per_gpu_hour = 1.67;
    double perf_ratio = 163.4 / 95.7;  // target peak FLOPs / reference peak FLOPs
    std::string currency = "EUR";

    void validate() const;
};

struct CostReport {
    double energy_mwh = 0.0;       // unrounded
    double energy_mwh_2dp = 0.0;   // reporting figure
    double co2_kg = 0.0;           // from the 2-decimal MWh figure
    double co2_kg_exact = 0.0;     // from the unrounded MWh
    double gpu_hours = 0.0;
    double price = 0.0;
};

struct RunRow {
    std::string name;
    double wall_hours = 0.0;
    CostReport report;
};

struct BatchReport {
    std::vector<RunRow> rows;
    double total_hours = 0.0;
    double total_mwh = 0.0;   // sum of reported (rounded) rows
    double total_co2_kg = 0.0;
    double total_gpu_hours = 0.0;
    double total_price = 0.0;
};

/// Rounds half away from zero to `decimals` places, the reporting convention.
double round_to(double value, int decimals);

/// E = E_gpu * N * T * PUE, converted from watt-hours to MWh.
double estimate_energy(const CostInputs& in);
/// kWh times intensity; pass the rounded MWh figure to follow the table convention.
double estimate_co2(double energy_mwh, double intensity);
double estimate_price(double wall_hours, std::uint32_t n_gpus, double perf_ratio, double price_per_gpu_hour);

CostReport estimate(const CostInputs& in);
BatchReport batch_report(const std::vector<std::pair<std::string, double>>& runs, const CostInputs& in);

/// Parses whitespace-separated `name wall_hours` rows; '#' starts a comment.
std::vector<std::pair<std::string, double>> parse_runs(std::istream& in);

void write_delimited(std::ostream& out, const BatchReport& report, char delim = '\t');
void write_table(std::ostream& out, const BatchReport& report, const std::string& currency);

}  // namespace ptk::cost
