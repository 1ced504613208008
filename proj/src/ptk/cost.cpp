// SPDX-License-Identifier: Apache-2.0

#include "ptk/cost.hpp"

#include "ptk/error.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace ptk::cost {

void CostInputs::validate() const {
    if (!(e_gpu_watts > 0.0)) {
        throw ConfigError("cost: e_gpu must be positive");
    }
    if (n_gpus == 0) {
        throw ConfigError("cost: n_gpus must be positive");
    }
    if (!(wall_hours >= 0.0) || !std::isfinite(wall_hours)) {
        throw ConfigError("cost: wall_hours must be a finite non-negative number");
    }
    if (!(pue >= 1.0)) {
        throw ConfigError("cost: pue must be >= 1");
    }
    if (!(carbon_intensity > 0.0)) {
        throw ConfigError("cost: carbon_intensity must be positive");
    }
    if (!(price_per_gpu_hour > 0.0)) {
        throw ConfigError("cost: price_per_gpu_hour must be positive");
    }
    if (!(perf_ratio > 0.0)) {
        throw ConfigError("cost: perf_ratio must be positive");
    }
}

double round_to(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    // The nudge absorbs representation error in values like 1.005.
    const double scaled = value * scale;
    return std::round(scaled + std::copysign(1e-9, scaled)) / scale;
}

double estimate_energy(const CostInputs& in) {
    in.validate();
    const double watt_hours = in.e_gpu_watts * in.n_gpus * in.wall_hours * in.pue;
    return watt_hours / 1e6;
}

double estimate_co2(double energy_mwh, double intensity) {
    return energy_mwh * 1000.0 * intensity;
}

double estimate_price(double wall_hours, std::uint32_t n_gpus, double perf_ratio, double price_per_gpu_hour) {
    if (!(perf_ratio > 0.0)) {
        throw ConfigError("cost: perf_ratio must be positive");
    }
    const double gpu_hours = wall_hours * n_gpus;
    return gpu_hours / perf_ratio * price_per_gpu_hour;
}

CostReport estimate(const CostInputs& in) {
    CostReport r;
    r.energy_mwh = estimate_energy(in);
    r.energy_mwh_2dp = round_to(r.energy_mwh, 2);
    r.co2_kg = estimate_co2(r.energy_mwh_2dp, in.carbon_intensity);
    r.co2_kg_exact = estimate_co2(r.energy_mwh, in.carbon_intensity);
    r.gpu_hours = in.wall_hours * in.n_gpus;
    r.price = estimate_price(in.wall_hours, in.n_gpus, in.perf_ratio, in.price_per_gpu_hour);
    return r;
}

BatchReport batch_report(const std::vector<std::pair<std::string, double>>& runs, const CostInputs& in) {
    if (runs.empty()) {
        throw InputError("cost: no runs given");
    }
    BatchReport b;
    for (const auto& [name, hours] : runs) {
        CostInputs row_in = in;
        row_in.wall_hours = hours;
        RunRow row{name, hours, estimate(row_in)};
        b.total_hours += hours;
        b.total_mwh += row.report.energy_mwh_2dp;
        b.total_co2_kg += row.report.co2_kg;
        b.total_gpu_hours += row.report.gpu_hours;
        b.total_price += row.report.price;
        b.rows.push_back(std::move(row));
    }
    return b;
}

std::vector<std::pair<std::string, double>> parse_runs(std::istream& in) {
    std::vector<std::pair<std::string, double>> runs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name)) {
            continue;
        }
        double hours = 0.0;
        std::string extra;
        if (!(ls >> hours) || (ls >> extra)) {
            throw InputError("runs file line " + std::to_string(lineno) + ": expected 'name wall_hours'");
        }
        if (!(hours >= 0.0)) {
            throw InputError("runs file line " + std::to_string(lineno) + ": negative wall time");
        }
        runs.emplace_back(std::move(name), hours);
    }
    return runs;
}

namespace {
std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}
}  // namespace

void write_delimited(std::ostream& out, const BatchReport& b, char d) {
    out << "model" << d << "wall_hours" << d << "mwh" << d << "co2_kg" << d << "gpu_hours" << d << "price\n";
    for (const auto& r : b.rows) {
        out << r.name << d << fmt("%.2f", r.wall_hours) << d << fmt("%.2f", r.report.energy_mwh_2dp) << d
            << fmt("%.2f", r.report.co2_kg) << d << fmt("%.2f", r.report.gpu_hours) << d
            << fmt("%.2f", r.report.price) << '\n';
    }
    out << "total" << d << fmt("%.2f", b.total_hours) << d << fmt("%.2f", b.total_mwh) << d
        << fmt("%.2f", b.total_co2_kg) << d << fmt("%.2f", b.total_gpu_hours) << d << fmt("%.2f", b.total_price)
        << '\n';
}

void write_table(std::ostream& out, const BatchReport& b, const std::string& currency) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %12s %8s %10s %12s %12s\n", "Model", "Wall time(h)", "MWh", "CO2eq(kg)",
                  "GPU hours", ("Price " + currency).c_str());
    out << buf;
    auto line = [&](const std::string& name, double h, double mwh, double co2, double gh, double price) {
        std::snprintf(buf, sizeof buf, "%-16s %12.2f %8.2f %10.2f %12.2f %12.2f\n", name.c_str(), h, mwh, co2, gh,
                      price);
        out << buf;
    };
    for (const auto& r : b.rows) {
        line(r.name, r.wall_hours, r.report.energy_mwh_2dp, r.report.co2_kg, r.report.gpu_hours, r.report.price);
    }
    out << std::string(75, '-') << '\n';
    line("Total", b.total_hours, b.total_mwh, b.total_co2_kg, b.total_gpu_hours, b.total_price);
}

}  // namespace ptk::cost
