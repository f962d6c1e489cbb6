#include "musicdiff/common.hpp"

namespace musicdiff {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::UnsupportedTimeSignature: return "UnsupportedTimeSignature";
    case Errc::ChordListMismatch: return "ChordListMismatch";
    case Errc::IllegalTokenOrder: return "IllegalTokenOrder";
    case Errc::UncoveredPosition: return "UncoveredPosition";
    case Errc::InfeasibleM: return "InfeasibleM";
    case Errc::EmptyScope: return "EmptyScope";
    case Errc::NoMatch: return "NoMatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EmptyScore: return "EmptyScore";
    case Errc::PitchOutOfRange: return "PitchOutOfRange";
    case Errc::InsufficientCorpus: return "InsufficientCorpus";
    case Errc::BadT: return "BadT";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::AlignmentMissing: return "AlignmentMissing";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::GraphNotRecorded: return "GraphNotRecorded";
    case Errc::ModelMissing: return "ModelMissing";
    case Errc::PromptLengthMismatch: return "PromptLengthMismatch";
    case Errc::MissingInput: return "MissingInput";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
  }
  return "UnknownError";
}

}  // namespace musicdiff
