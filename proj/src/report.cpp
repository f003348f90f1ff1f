#include "tctb/report.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tctb {

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Reference: return "reference";
        case Provenance::Exact: return "exact";
        case Provenance::Derived: return "derived";
    }
    return "?";
}

void VerificationRecord::evaluate() {
    pass = computed.size() == expected.size();
    for (size_t i = 0; pass && i < computed.size(); ++i) {
        double scale = relative ? std::max(1.0, std::abs(expected[i])) : 1.0;
        if (!(std::abs(computed[i] - expected[i]) <= tolerance * scale)) pass = false;
        if (!std::isfinite(computed[i])) pass = false;
    }
}

VerificationRecord make_record(std::string name, std::string source, Provenance prov,
                               std::vector<double> computed, std::vector<double> expected,
                               double tol, bool relative) {
    VerificationRecord r;
    r.name = std::move(name);
    r.source = std::move(source);
    r.provenance = prov;
    r.computed = std::move(computed);
    r.expected = std::move(expected);
    r.tolerance = tol;
    r.relative = relative;
    r.evaluate();
    return r;
}

std::string records_to_json(const std::vector<VerificationRecord>& recs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : recs) {
        nlohmann::json j;
        j["name"] = r.name;
        j["source"] = r.source;
        j["provenance"] = to_string(r.provenance);
        j["computed"] = r.computed;
        j["expected"] = r.expected;
        j["tolerance"] = r.tolerance;
        j["relative"] = r.relative;
        j["pass"] = r.pass;
        j["runtime_s"] = r.runtime_s;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

void write_records(const std::string& path, const std::vector<VerificationRecord>& recs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << records_to_json(recs) << "\n";
}

}  // namespace tctb
