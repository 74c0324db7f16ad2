#include "qsdlab/error.hpp"

namespace qsdlab {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::NegativeRate: return "NegativeRate";
    case ErrorCode::PositiveRowSum: return "PositiveRowSum";
    case ErrorCode::Reducible: return "Reducible";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::NonPositiveGroundState: return "NonPositiveGroundState";
    case ErrorCode::OverflowAtHorizon: return "OverflowAtHorizon";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::GammaAtOrAboveLambda0: return "GammaAtOrAboveLambda0";
    case ErrorCode::ConservativeChain: return "ConservativeChain";
    case ErrorCode::ExtinctMass: return "ExtinctMass";
    case ErrorCode::InconsistentEigenpair: return "InconsistentEigenpair";
    case ErrorCode::NotConservative: return "NotConservative";
    case ErrorCode::MultipleNonnegativeEigenvectors: return "MultipleNonnegativeEigenvectors";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::QuadratureInconclusive: return "QuadratureInconclusive";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::InvalidBoundaryClosure: return "InvalidBoundaryClosure";
    case ErrorCode::NotClassT: return "NotClassT";
    case ErrorCode::NotExplosive: return "NotExplosive";
    case ErrorCode::ExpressionParse: return "ExpressionParse";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::InitOutsideDomain: return "InitOutsideDomain";
    case ErrorCode::TooFewSurvivors: return "TooFewSurvivors";
    case ErrorCode::AbsorptionInHProcess: return "AbsorptionInHProcess";
    case ErrorCode::NonPositivePhi: return "NonPositivePhi";
    case ErrorCode::GammaTooLarge: return "GammaTooLarge";
    case ErrorCode::HeavyCensoring: return "HeavyCensoring";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
  }
  return "Unknown";
}

bool is_contract_violation(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NotClassT:
    case ErrorCode::NotExplosive:
    case ErrorCode::ConservativeChain:
    case ErrorCode::GammaAtOrAboveLambda0:
    case ErrorCode::GammaTooLarge:
    case ErrorCode::HeavyCensoring:
    case ErrorCode::TooFewSurvivors:
    case ErrorCode::ExtinctMass:
    case ErrorCode::AbsorptionInHProcess:
    case ErrorCode::MultipleNonnegativeEigenvectors:
    case ErrorCode::QuadratureInconclusive:
    case ErrorCode::ConvergenceFailure:
    case ErrorCode::NonPositiveGroundState:
    case ErrorCode::InconsistentEigenpair:
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::StepTooLarge:
    case ErrorCode::VerificationFailed:
      return true;
    default:
      return false;
  }
}

}  // namespace qsdlab
