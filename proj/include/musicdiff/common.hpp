#pragma once

#include <stdexcept>
#include <string>

namespace musicdiff {

// Machine-parsable failure categories. The CLI prints these as
// "error: <code>: <message>" with a nonzero exit status.
enum class Errc {
  MalformedHeader,
  UnsupportedFormat,
  UnsupportedTimeSignature,
  ChordListMismatch,
  IllegalTokenOrder,
  UncoveredPosition,
  InfeasibleM,
  EmptyScope,
  NoMatch,
  EmptyInput,
  EmptyScore,
  PitchOutOfRange,
  InsufficientCorpus,
  BadT,
  StepOutOfRange,
  LengthMismatch,
  ShapeMismatch,
  AlignmentMissing,
  BatchTooSmall,
  GraphNotRecorded,
  ModelMissing,
  PromptLengthMismatch,
  MissingInput,
  ConfigInvalid,
  ChecksumMismatch,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const { return code_; }

private:
  Errc code_;
};

}  // namespace musicdiff
