#pragma once

#include <stdexcept>
#include <string>

namespace twoscale {

/// Input outside an operation's admissible range (bad moduli, bad grid size, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Inconsistent structure passed between modules (dof maps, grid mismatches).
struct StructureError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Contradictory configuration, e.g. overlapping bridge masks.
struct SpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Singular or under-constrained problem setup.
struct SetupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file or manifest.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Chart fitting failure (rank deficient or under-determined anchors).
struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Infeasible optimization setup (e.g. cost budget outside the attainable range).
struct InfeasibleError : std::runtime_error {
    InfeasibleError(const std::string& what, double lo, double hi)
        : std::runtime_error(what), min_attainable(lo), max_attainable(hi) {}
    double min_attainable;
    double max_attainable;
};

/// Linear or nonlinear solver that did not reach its tolerance.
struct SolverError : std::runtime_error {
    SolverError(const std::string& what, double residual_)
        : std::runtime_error(what + " (residual " + std::to_string(residual_) + ")"), residual(residual_) {}
    double residual;
};

}  // namespace twoscale
