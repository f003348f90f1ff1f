// Parameter sweeps: local-map vs collision-map convergence and global-map
// drift orders, with monotonicity verdicts.
#pragma once

#include <string>
#include <vector>

#include "tctb/simulator.hpp"

namespace tctb {

struct StudyRow {
    double mu, chi;
    bool ok = false;
    std::string error;
    double local_gap = 0;      // sup norm of (E3, e3, g3) local-map vs collision-map
    double dE3_global = 0;     // |E3 drift| across the global map
    double dE3_over_mu = 0;
    double theta_out = 0;      // exit-asymptote defect after tuning
    double theta_return = 0;   // incoming-asymptote deviation at return
    double min_distance = 0;
    double encounter_time = 0;
};

struct StudyTable {
    std::vector<std::string> columns;
    std::vector<StudyRow> rows;
    std::vector<std::string> verdicts;
    bool any_ok = false;
};

// One row per (mu, chi) pair (lists zipped; equal length required).
StudyTable convergence_study(const std::vector<double>& mu_list,
                             const std::vector<double>& chi_list, double eps0,
                             double kappa = 0.45, unsigned threads = 0);

void write_study_csv(const std::string& path, const StudyTable& table);
void write_study_schema(const std::string& path, const StudyTable& table);

}  // namespace tctb
