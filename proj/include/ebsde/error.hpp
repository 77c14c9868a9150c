#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ebsde {

/// Failure categories raised by the library. The CLI maps these onto exit codes.
enum class Errc {
    NonSquare,
    NonFinite,
    NegativeOffDiagonal,
    ColumnSumNonzero,
    DimensionMismatch,
    BadStateIndex,
    Reducible,
    SolveFailure,
    QuadratureNonconvergent,
    NoDecay,
    NotBalanced,
    BadBeta,
    ControlNotDominated,
    Nonconvergence,
    BoundViolation,
    StepFailure,
    ScheduleExhausted,
    TooManyPolicies,
    MeetingTimeout,
    NotStrictlyControlled,
    InvalidArgument,
    Parse,
};

inline std::string_view errc_name(Errc c) {
    switch (c) {
    case Errc::NonSquare: return "NonSquare";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case Errc::ColumnSumNonzero: return "ColumnSumNonzero";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::BadStateIndex: return "BadStateIndex";
    case Errc::Reducible: return "Reducible";
    case Errc::SolveFailure: return "SolveFailure";
    case Errc::QuadratureNonconvergent: return "QuadratureNonconvergent";
    case Errc::NoDecay: return "NoDecay";
    case Errc::NotBalanced: return "NotBalanced";
    case Errc::BadBeta: return "BadBeta";
    case Errc::ControlNotDominated: return "ControlNotDominated";
    case Errc::Nonconvergence: return "Nonconvergence";
    case Errc::BoundViolation: return "BoundViolation";
    case Errc::StepFailure: return "StepFailure";
    case Errc::ScheduleExhausted: return "ScheduleExhausted";
    case Errc::TooManyPolicies: return "TooManyPolicies";
    case Errc::MeetingTimeout: return "MeetingTimeout";
    case Errc::NotStrictlyControlled: return "NotStrictlyControlled";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Parse: return "Parse";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace ebsde
