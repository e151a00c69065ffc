#ifndef TSMC_ERRORS_HPP
#define TSMC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tsmc {

enum class ErrorCode {
  NotTerminal,
  TerminalPrefix,
  InvalidStep,
  BudgetExceeded,
  DegenerateTarget,
  SupportViolation,
  ZeroAncestorTwist,
  AllZeroWeights,
  NoPositiveSample,
  NoTrainableData,
  EmptyScores,
  NoTerminal,
  LengthMismatch,
  TooFewReplications,
  SizeExceedsPool,
  EmptyResults,
  ConfigError,
  IoError,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotTerminal: return "NotTerminal";
    case ErrorCode::TerminalPrefix: return "TerminalPrefix";
    case ErrorCode::InvalidStep: return "InvalidStep";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::ZeroAncestorTwist: return "ZeroAncestorTwist";
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::NoPositiveSample: return "NoPositiveSample";
    case ErrorCode::NoTrainableData: return "NoTrainableData";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::NoTerminal: return "NoTerminal";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewReplications: return "TooFewReplications";
    case ErrorCode::SizeExceedsPool: return "SizeExceedsPool";
    case ErrorCode::EmptyResults: return "EmptyResults";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Error";
}

/// Library-wide exception. The code identifies the contract that was violated;
/// the message carries instance detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace tsmc

#endif
