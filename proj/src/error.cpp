#include "falsify_iv/error.hpp"

namespace fiv {

const char* error_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyData: return "EmptyData";
        case ErrorCode::ConstantColumn: return "ConstantColumn";
        case ErrorCode::SingularControlVariance: return "SingularControlVariance";
        case ErrorCode::SingularInstrumentVariance: return "SingularInstrumentVariance";
        case ErrorCode::RankDeficientSubmatrix: return "RankDeficientSubmatrix";
        case ErrorCode::ZeroDenominator: return "ZeroDenominator";
        case ErrorCode::PopulationModeUnsupported: return "PopulationModeUnsupported";
        case ErrorCode::InsufficientObservations: return "InsufficientObservations";
        case ErrorCode::Infeasible: return "Infeasible";
        case ErrorCode::Unbounded: return "Unbounded";
        case ErrorCode::EmptyOperand: return "EmptyOperand";
        case ErrorCode::KNotOne: return "KNotOne";
        case ErrorCode::AllInstrumentsIrrelevant: return "AllInstrumentsIrrelevant";
        case ErrorCode::IrrelevantInstrument: return "IrrelevantInstrument";
        case ErrorCode::RelevanceAssumptionViolated: return "RelevanceAssumptionViolated";
        case ErrorCode::PointNotOnFrontierParameterization: return "PointNotOnFrontierParameterization";
        case ErrorCode::AllInstrumentsScreenedOut: return "AllInstrumentsScreenedOut";
        case ErrorCode::DegenerateInstrument: return "DegenerateInstrument";
        case ErrorCode::InvalidJoint: return "InvalidJoint";
        case ErrorCode::ModelFalsifiedAtC: return "ModelFalsifiedAtC";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::NegativeDensity: return "NegativeDensity";
        case ErrorCode::UnnormalizableRow: return "UnnormalizableRow";
        case ErrorCode::NonIntegrable: return "NonIntegrable";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::DataError: return "DataError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code), detail_(message) {}

}  // namespace fiv
