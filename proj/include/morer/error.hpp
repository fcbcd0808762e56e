#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace morer {

enum class ErrorKind {
  MissingFile,
  ParseError,
  ArityMismatch,
  ValueOutOfRange,
  InvalidValue,
  DuplicatePair,
  DuplicateProblem,
  TooFewProblems,
  EmptyDistribution,
  InvalidGrid,
  NegativeDistance,
  InvalidArgument,
  EmptyTrainingSet,
  SingleClassTrainingSet,
  InfeasibleBudget,
  VoteOutOfRange,
  OracleMiss,
  BudgetExhaustedAtSeed,
  EmptyRepository,
  CorruptManifest,
  VersionMismatch,
  InvalidSpec,
  UnknownProblem,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ArityMismatch: return "ArityMismatch";
    case ErrorKind::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorKind::InvalidValue: return "InvalidValue";
    case ErrorKind::DuplicatePair: return "DuplicatePair";
    case ErrorKind::DuplicateProblem: return "DuplicateProblem";
    case ErrorKind::TooFewProblems: return "TooFewProblems";
    case ErrorKind::EmptyDistribution: return "EmptyDistribution";
    case ErrorKind::InvalidGrid: return "InvalidGrid";
    case ErrorKind::NegativeDistance: return "NegativeDistance";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorKind::SingleClassTrainingSet: return "SingleClassTrainingSet";
    case ErrorKind::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorKind::VoteOutOfRange: return "VoteOutOfRange";
    case ErrorKind::OracleMiss: return "OracleMiss";
    case ErrorKind::BudgetExhaustedAtSeed: return "BudgetExhaustedAtSeed";
    case ErrorKind::EmptyRepository: return "EmptyRepository";
    case ErrorKind::CorruptManifest: return "CorruptManifest";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::UnknownProblem: return "UnknownProblem";
  }
  return "Unknown";
}

/// Every domain failure in the library is reported as an Error. `details`
/// carries the structured payload (row, column, pair identity, ...) that the
/// CLI forwards verbatim in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message),
        details_(std::move(details)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const nlohmann::json& details() const noexcept { return details_; }
  const std::string& message() const noexcept { return message_; }

  nlohmann::json to_json() const {
    nlohmann::json j = details_;
    j["error"] = std::string(to_string(kind_));
    j["message"] = message_;
    return j;
  }

 private:
  ErrorKind kind_;
  std::string message_;
  nlohmann::json details_;
};

}  // namespace morer
