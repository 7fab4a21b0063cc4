#pragma once

#include <stdexcept>
#include <string>

namespace roadopt {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- configuration / expressions ---------------------------------------
struct ConfigError : Error { using Error::Error; };

struct ParseError : Error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t off)
        : Error(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

struct EvalError : Error {
    std::size_t span_lo, span_hi;
    EvalError(const std::string& msg, std::size_t lo, std::size_t hi)
        : Error(msg + " (source span [" + std::to_string(lo) + "," +
                std::to_string(hi) + "))"),
          span_lo(lo), span_hi(hi) {}
};

// --- flux law -----------------------------------------------------------
struct InvalidVelocityLaw : Error { using Error::Error; };
struct NonConcaveFlux : Error { using Error::Error; };
struct FluxExceedsCapacity : Error { using Error::Error; };
struct SlopeBelowCharacteristic : Error { using Error::Error; };

// --- boundary-value solver ----------------------------------------------
struct WindowTooNarrow : Error { using Error::Error; };
struct NotAShock : Error { using Error::Error; };

// --- group bookkeeping ----------------------------------------------------
struct LabelOutOfRange : Error { using Error::Error; };
struct AmbiguousCharacteristic : Error { using Error::Error; };

// --- planner --------------------------------------------------------------
struct NoRootInWindow : Error { using Error::Error; };
struct MaxIterations : Error {
    double best_residual;
    MaxIterations(const std::string& msg, double res)
        : Error(msg), best_residual(res) {}
};
struct SingularJacobian : Error { using Error::Error; };
struct TrajectoryStalled : Error { using Error::Error; };

// --- finite-volume / brute-force oracle -----------------------------------
struct CFLViolation : Error { using Error::Error; };
struct CapacitySaturation : Error { using Error::Error; };
struct InfeasibleMass : Error { using Error::Error; };

// --- junction ---------------------------------------------------------------
struct ModelShapeError : Error { using Error::Error; };

} // namespace roadopt
