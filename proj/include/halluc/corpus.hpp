#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace halluc {

enum class Label { Accurate, Inaccurate, Analysis, Unsure };
inline constexpr std::size_t kLabelCount = 4;

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

enum class Split { Train, Val };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

/// A labeled character range of a response. Offsets count Unicode scalar
/// values; `end` is exclusive.
struct SpanAnnotation {
  std::size_t start = 0;
  std::size_t end = 0;
  Label label = Label::Accurate;

  friend bool operator==(const SpanAnnotation&, const SpanAnnotation&) = default;
};

/// One image-prompt-response triplet. Characters outside every span are
/// implicitly Accurate; gaps are never stored as spans.
struct AnnotatedResponse {
  std::string id;
  std::string image_ref;
  std::string prompt;
  std::string response;  // UTF-8
  std::vector<SpanAnnotation> spans;
  Split split = Split::Train;

  friend bool operator==(const AnnotatedResponse&, const AnnotatedResponse&) = default;
};

using Corpus = std::vector<AnnotatedResponse>;

enum class ViolationKind {
  EmptySpan,
  OutOfBounds,
  Unsorted,
  Overlap,
  UnknownLabel,
  Schema,
  InvalidUtf8,
  DuplicateId,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(ViolationKind kind) const;
};

ValidationReport validate(const AnnotatedResponse& record);

/// One problem found while reading a JSONL file.
struct IngestIssue {
  std::size_t line = 0;  // 1-based
  std::string id;        // empty when the line could not be parsed far enough
  Violation violation;
};

class IngestError : public std::runtime_error {
 public:
  explicit IngestError(std::vector<IngestIssue> issues);

  const std::vector<IngestIssue>& issues() const { return issues_; }

 private:
  std::vector<IngestIssue> issues_;
};

/// Parses one JSON line into a record. Schema problems and unknown labels are
/// appended to `report`; the returned record is only meaningful when the
/// report stays empty.
AnnotatedResponse parse_record(std::string_view line, ValidationReport& report);

/// Reads JSONL text, validating every record. Collects all problems and
/// throws IngestError if there are any.
Corpus ingest_text(std::string_view text);
Corpus ingest(const std::filesystem::path& path);

/// Canonical serialization of one record (no trailing newline).
std::string export_record(const AnnotatedResponse& record);
/// Canonical JSONL: fixed field order, sorted spans, UTF-8, LF endings.
std::string export_corpus(const Corpus& corpus);

/// Effective label of every scalar value of the response, gaps filled with
/// Accurate.
std::vector<Label> materialize_labels(const AnnotatedResponse& record);

inline constexpr std::size_t kDensityBins = 10;

struct CorpusStats {
  std::size_t train_records = 0;
  std::size_t val_records = 0;
  std::size_t total_characters = 0;
  std::size_t implicit_accurate_characters = 0;
  std::array<std::size_t, kLabelCount> label_characters{};
  std::array<std::size_t, kLabelCount> label_spans{};
  std::size_t sentences = 0;
  // Bin k holds sentences whose Inaccurate fraction lies in [k/10, (k+1)/10);
  // a fully Inaccurate sentence lands in the last bin.
  std::array<std::size_t, kDensityBins> inaccurate_density{};
};

/// Throws IngestError if any record is invalid.
CorpusStats stats(const Corpus& corpus);

std::string stats_csv(const CorpusStats& stats);

}  // namespace halluc
