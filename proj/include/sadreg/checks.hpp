// Finite-difference gradient checks grouped by scope, shared by the CLI and the tests.
#pragma once

#include <string>
#include <vector>

#include "sadreg/autodiff.hpp"

namespace sadreg::checks {

enum class GradScope { ops, layers, losses, model };

GradScope parse_scope(const std::string &name); // throws std::invalid_argument
std::string scope_name(GradScope scope);
// 1e-4 for ops, 1e-3 otherwise.
double default_tolerance(GradScope scope);

struct GradcheckCase {
    std::string name;
    ad::GradcheckReport report;
};

std::vector<GradcheckCase> run_gradchecks(GradScope scope, double tol);

} // namespace sadreg::checks
