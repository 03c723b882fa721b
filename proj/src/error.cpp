#include "flowsentry/error.hpp"

namespace flowsentry {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::TruncatedDatagram: return "TruncatedDatagram";
    case Errc::TooManyRecords: return "TooManyRecords";
    case Errc::FieldOverflow: return "FieldOverflow";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::RowParseError: return "RowParseError";
    case Errc::EmptyVectorList: return "EmptyVectorList";
    case Errc::UnknownVector: return "UnknownVector";
    case Errc::EmptyWindow: return "EmptyWindow";
    case Errc::EmptyFit: return "EmptyFit";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::AllPositionsMasked: return "AllPositionsMasked";
    case Errc::NoLabeledData: return "NoLabeledData";
    case Errc::InsufficientDistinctPoints: return "InsufficientDistinctPoints";
    case Errc::MaliciousInTrainingSet: return "MaliciousInTrainingSet";
    case Errc::EmptyValidation: return "EmptyValidation";
    case Errc::EmptyQuery: return "EmptyQuery";
    case Errc::InsufficientClassExamples: return "InsufficientClassExamples";
    case Errc::MalformedPrompt: return "MalformedPrompt";
    case Errc::Timeout: return "Timeout";
    case Errc::HttpError: return "HttpError";
    case Errc::RetriesExhausted: return "RetriesExhausted";
    case Errc::InsufficientFlows: return "InsufficientFlows";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::FormatVersionMismatch: return "FormatVersionMismatch";
    case Errc::CorruptBlob: return "CorruptBlob";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

ErrorCategory errc_category(Errc code) {
  switch (code) {
    case Errc::Timeout:
    case Errc::HttpError:
    case Errc::RetriesExhausted:
      return ErrorCategory::Remote;
    case Errc::EmptyVectorList:
    case Errc::UnknownVector:
    case Errc::DimensionMismatch:
    case Errc::SequenceTooLong:
    case Errc::InvalidConfig:
      return ErrorCategory::Config;
    default:
      return ErrorCategory::Data;
  }
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

RowParseError::RowParseError(std::size_t row, const std::string& detail)
    : Error(Errc::RowParseError, "row " + std::to_string(row) + ": " + detail), row_(row) {}

HttpError::HttpError(int status, const std::string& body)
    : Error(Errc::HttpError, "HTTP " + std::to_string(status) + (body.empty() ? "" : ": " + body)),
      status_(status) {}

}  // namespace flowsentry
