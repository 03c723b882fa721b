#pragma once

#include <stdexcept>
#include <string>

namespace flowsentry {

enum class Errc {
  // ingest
  VersionMismatch,
  TruncatedDatagram,
  TooManyRecords,
  FieldOverflow,
  SchemaMismatch,
  RowParseError,
  // synth
  EmptyVectorList,
  UnknownVector,
  // sequencer
  EmptyWindow,
  // model
  EmptyFit,
  DimensionMismatch,
  SequenceTooLong,
  AllPositionsMasked,
  NoLabeledData,
  // predictor
  InsufficientDistinctPoints,
  MaliciousInTrainingSet,
  EmptyValidation,
  // promptcls
  EmptyQuery,
  InsufficientClassExamples,
  MalformedPrompt,
  Timeout,
  HttpError,
  RetriesExhausted,
  // harness
  InsufficientFlows,
  LengthMismatch,
  FormatVersionMismatch,
  CorruptBlob,
  InvalidConfig,
  Io,
};

const char* errc_name(Errc code);

/// Broad failure class; the CLI maps it onto its exit code.
enum class ErrorCategory { Config, Data, Remote };

ErrorCategory errc_category(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return errc_category(code_); }

  /// Pipeline stage that raised the error ("" when raised outside the harness).
  const std::string& stage() const noexcept { return stage_; }
  void set_stage(std::string stage) { stage_ = std::move(stage); }

 private:
  Errc code_;
  std::string stage_;
};

class RowParseError : public Error {
 public:
  RowParseError(std::size_t row, const std::string& detail);
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& body);
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace flowsentry
