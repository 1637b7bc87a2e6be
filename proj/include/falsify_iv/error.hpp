#pragma once

#include <stdexcept>
#include <string>

namespace fiv {

enum class ErrorCode {
    EmptyData,
    ConstantColumn,
    SingularControlVariance,
    SingularInstrumentVariance,
    RankDeficientSubmatrix,
    ZeroDenominator,
    PopulationModeUnsupported,
    InsufficientObservations,
    Infeasible,
    Unbounded,
    EmptyOperand,
    KNotOne,
    AllInstrumentsIrrelevant,
    IrrelevantInstrument,
    RelevanceAssumptionViolated,
    PointNotOnFrontierParameterization,
    AllInstrumentsScreenedOut,
    DegenerateInstrument,
    InvalidJoint,
    ModelFalsifiedAtC,
    OutOfRange,
    NegativeDensity,
    UnnormalizableRow,
    NonIntegrable,
    InvalidArgument,
    ConfigError,
    DataError,
    IoError,
};

const char* error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace fiv
