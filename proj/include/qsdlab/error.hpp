#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qsdlab {

/// Machine-readable failure codes. The string form (error_code_name) is what
/// reports and the CLI emit.
enum class ErrorCode {
  // generator validation
  NonSymmetric,
  NegativeRate,
  PositiveRowSum,
  Reducible,
  InvalidInput,
  // spectral
  ConvergenceFailure,
  NonPositiveGroundState,
  OverflowAtHorizon,
  SingularSystem,
  NotPositiveDefinite,
  GammaAtOrAboveLambda0,
  ConservativeChain,
  ExtinctMass,
  InconsistentEigenpair,
  NotConservative,
  MultipleNonnegativeEigenvectors,
  // diffusion
  QuadratureFailure,
  QuadratureInconclusive,
  GridTooCoarse,
  InvalidBoundaryClosure,
  NotClassT,
  NotExplosive,
  ExpressionParse,
  // monte carlo
  StepTooLarge,
  InitOutsideDomain,
  TooFewSurvivors,
  AbsorptionInHProcess,
  NonPositivePhi,
  GammaTooLarge,
  HeavyCensoring,
  // cli
  ConfigParse,
  UnknownSubcommand,
  VerificationFailed,  ///< a computed residual exceeds its tolerance
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// True for codes that mean "the input was fine but a mathematical contract
/// does not hold" (CLI exit code 2), as opposed to malformed input (exit 1).
bool is_contract_violation(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qsdlab
