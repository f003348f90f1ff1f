#include "tctb/study.hpp"

#include <cmath>
#include <fstream>
#include <future>

#include <json.hpp>

#include "tctb/gerver.hpp"

namespace tctb {

namespace {
StudyRow run_cell(double mu, double chi, double eps0, double kappa) {
    StudyRow row;
    row.mu = mu;
    row.chi = chi;
    try {
        GerverFixedPoint fp = fixed_point(eps0);
        auto mk = [&](double dl3) { return lift_incoming_state(fp, 1, mu, chi, dl3); };
        TunedLocalResult loc = tuned_local_map(mk, mu, 5e-3, kappa);
        // collision-map prediction for the same configuration
        GerverOptions opts;
        opts.alpha_hint = fp.alpha[0];
        opts.g3_sign = +1;
        OrbitTriple pred = gerver_map({-0.5, eps0, kPi / 2.0}, fp.e4_star, 1, 4, opts);
        row.local_gap = std::max({std::abs(loc.run.triple.E3 - pred.E3),
                                  std::abs(loc.run.triple.e3 - pred.e3),
                                  std::abs(wrap_angle(loc.run.triple.g3 - pred.g3))});
        row.theta_out = loc.run.theta_out;
        row.min_distance = loc.run.min_distance;
        row.encounter_time = loc.run.encounter_time;
        GlobalMapResult g = global_map(loc.run.out);
        row.dE3_global = std::abs(g.dE3);
        row.dE3_over_mu = row.dE3_global / mu;
        row.theta_return = std::abs(g.theta_in_return);
        row.ok = true;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}
}  // namespace

StudyTable convergence_study(const std::vector<double>& mu_list,
                             const std::vector<double>& chi_list, double eps0,
                             double kappa, unsigned threads) {
    if (mu_list.empty() || mu_list.size() != chi_list.size())
        throw SimulatorError("convergence_study: mu/chi lists must be nonempty, same size");
    StudyTable table;
    table.columns = {"mu",        "chi",        "ok",           "local_gap",
                     "dE3_global", "dE3_over_mu", "theta_out",    "theta_return",
                     "min_distance", "encounter_time"};
    if (threads == 0) threads = 1;
    std::vector<std::future<StudyRow>> futs;
    for (size_t i = 0; i < mu_list.size(); ++i)
        futs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred,
                                  run_cell, mu_list[i], chi_list[i], eps0, kappa));
    for (auto& f : futs) table.rows.push_back(f.get());  // deterministic order
    for (const auto& r : table.rows) table.any_ok = table.any_ok || r.ok;

    auto monotone = [&](auto getter, const char* name, bool decreasing) {
        bool ok = true;
        double prev = 0;
        bool have = false;
        for (const auto& r : table.rows) {
            if (!r.ok) continue;
            double v = getter(r);
            if (have) {
                double slack = 0.10 * std::max(std::abs(prev), std::abs(v));  // noise floor
                if (decreasing ? v > prev + slack : v < prev - slack) ok = false;
            }
            prev = v;
            have = true;
        }
        table.verdicts.push_back(std::string(name) + (ok ? ": monotone" : ": NOT monotone"));
        return ok;
    };
    monotone([](const StudyRow& r) { return r.local_gap; }, "local_gap decreasing", true);
    monotone([](const StudyRow& r) { return r.theta_return; }, "theta_return decreasing",
             true);
    {
        double lo = std::numeric_limits<double>::infinity(), hi = 0;
        for (const auto& r : table.rows)
            if (r.ok) {
                lo = std::min(lo, r.dE3_over_mu);
                hi = std::max(hi, r.dE3_over_mu);
            }
        bool banded = hi > 0 && hi / lo < 4.0;
        table.verdicts.push_back(std::string("dE3_over_mu band") +
                                 (banded ? ": within factor 4" : ": outside factor 4"));
    }
    return table;
}

void write_study_csv(const std::string& path, const StudyTable& table) {
    std::ofstream out(path);
    if (!out) throw SimulatorError("cannot write study table: " + path);
    for (size_t i = 0; i < table.columns.size(); ++i)
        out << table.columns[i] << (i + 1 < table.columns.size() ? "," : "\n");
    char buf[512];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof buf,
                      "%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.mu,
                      r.chi, r.ok ? 1 : 0, r.local_gap, r.dE3_global, r.dE3_over_mu,
                      r.theta_out, r.theta_return, r.min_distance, r.encounter_time);
        out << buf;
    }
    for (const auto& v : table.verdicts) out << "# " << v << "\n";
}

void write_study_schema(const std::string& path, const StudyTable& table) {
    nlohmann::json j;
    j["columns"] = table.columns;
    j["description"] = {
        {"local_gap", "sup norm of (E3,e3,g3): integrated local map vs collision map"},
        {"dE3_global", "captured-body energy drift across the far excursion"},
        {"dE3_over_mu", "drift scaled by the mass ratio"},
        {"theta_out", "traveler exit asymptote direction minus pi after tuning"},
        {"theta_return", "incoming asymptote deviation at the return section"},
        {"min_distance", "closest approach of the two light bodies"},
        {"encounter_time", "time spent inside the relative-distance sphere"}};
    j["rows_are"] = "one per (mu, chi) pair";
    std::ofstream out(path);
    if (!out) throw SimulatorError("cannot write schema: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace tctb
