// Machine-readable verification records shared by the library and the CLI.
#pragma once

#include <string>
#include <vector>

namespace tctb {

// Provenance of an expected value: `reference` comes from the source work's
// printed data, `exact` from a closed form or trivial identity, `derived`
// from an independent oracle computed here.
enum class Provenance { Reference, Exact, Derived };

std::string to_string(Provenance p);

struct VerificationRecord {
    std::string name;
    std::string source;      // short citation of where the expectation lives
    Provenance provenance = Provenance::Exact;
    std::vector<double> computed;
    std::vector<double> expected;
    double tolerance = 0.0;
    bool relative = false;
    bool pass = false;
    double runtime_s = 0.0;

    // componentwise |computed - expected| <= tol (relative variant scales by
    // max(1, |expected|) per component)
    void evaluate();
};

VerificationRecord make_record(std::string name, std::string source, Provenance prov,
                               std::vector<double> computed, std::vector<double> expected,
                               double tol, bool relative = false);

std::string records_to_json(const std::vector<VerificationRecord>& recs);
void write_records(const std::string& path, const std::vector<VerificationRecord>& recs);

}  // namespace tctb
