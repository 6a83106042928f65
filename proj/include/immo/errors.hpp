// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace immo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define IMMO_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  };

IMMO_DEFINE_ERROR(InvalidArgument)
IMMO_DEFINE_ERROR(EmptyUtterance)
IMMO_DEFINE_ERROR(AnswerOutOfVocabulary)
IMMO_DEFINE_ERROR(NoValidProblem)
IMMO_DEFINE_ERROR(UnparseableRationale)
IMMO_DEFINE_ERROR(DimensionMismatch)
IMMO_DEFINE_ERROR(EmptyDataset)
IMMO_DEFINE_ERROR(NonFiniteRatio)
IMMO_DEFINE_ERROR(CeilingTooLarge)
IMMO_DEFINE_ERROR(FormatError)
IMMO_DEFINE_ERROR(TrainingDivergence)

// Remote transport taxonomy. Timeouts and transport errors are retried;
// malformed responses are not.
IMMO_DEFINE_ERROR(RemoteTimeout)
IMMO_DEFINE_ERROR(TransportError)
IMMO_DEFINE_ERROR(MalformedResponse)

#undef IMMO_DEFINE_ERROR

/// Wraps an agent failure with the turn index at which it happened.
class AgentFailure : public Error {
 public:
  AgentFailure(int turn, const std::string& what)
      : Error("AgentFailure at turn " + std::to_string(turn) + ": " + what),
        turn_(turn) {}
  int turn() const noexcept { return turn_; }

 private:
  int turn_;
};

}  // namespace immo
