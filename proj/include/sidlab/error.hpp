#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sidlab {

enum class Errc {
  // corpus
  MissingIntent,
  RaggedBlock,
  BadColumnCount,
  NonNumericHead,
  HeadOutOfRange,
  InvalidEncoding,
  MalformedTag,
  EmptyDataset,
  // metrics / distance
  LengthMismatch,
  NoMaskedTokens,
  MissingSlotTags,
  MisalignedCorpora,
  // model
  InvalidModelConfig,
  EmptySentence,
  UnknownTask,
  EmptyBatch,
  CorruptCheckpoint,
  VersionMismatch,
  // schedule
  EmptyStage,
  EmptySchedule,
  ScheduleSyntax,
  MissingBinding,
  NoTrainableData,
  // plumbing
  InvalidConfig,
  Io,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::MissingIntent: return "MissingIntent";
    case Errc::RaggedBlock: return "RaggedBlock";
    case Errc::BadColumnCount: return "BadColumnCount";
    case Errc::NonNumericHead: return "NonNumericHead";
    case Errc::HeadOutOfRange: return "HeadOutOfRange";
    case Errc::InvalidEncoding: return "InvalidEncoding";
    case Errc::MalformedTag: return "MalformedTag";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NoMaskedTokens: return "NoMaskedTokens";
    case Errc::MissingSlotTags: return "MissingSlotTags";
    case Errc::MisalignedCorpora: return "MisalignedCorpora";
    case Errc::InvalidModelConfig: return "InvalidModelConfig";
    case Errc::EmptySentence: return "EmptySentence";
    case Errc::UnknownTask: return "UnknownTask";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::EmptyStage: return "EmptyStage";
    case Errc::EmptySchedule: return "EmptySchedule";
    case Errc::ScheduleSyntax: return "ScheduleSyntax";
    case Errc::MissingBinding: return "MissingBinding";
    case Errc::NoTrainableData: return "NoTrainableData";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised by the corpus readers. Block numbers count sentence blocks from 1,
// line numbers count physical lines from 1; either may be 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(Errc code, std::size_t block, std::size_t line, const std::string& what)
      : Error(code, "block " + std::to_string(block) + ", line " + std::to_string(line) + ": " + what),
        block_(block),
        line_(line) {}

  std::size_t block() const noexcept { return block_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t block_;
  std::size_t line_;
};

}  // namespace sidlab
