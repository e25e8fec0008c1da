#include "halluc/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "halluc/text.hpp"

namespace halluc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::array<std::string_view, kLabelCount> kLabelNames = {"accurate", "inaccurate",
                                                                  "analysis", "unsure"};

std::string describe(const SpanAnnotation& span) {
  return "[" + std::to_string(span.start) + "," + std::to_string(span.end) + ") " +
         std::string(to_string(span.label));
}

void add(ValidationReport& report, ViolationKind kind, std::string message) {
  report.violations.push_back({kind, std::move(message)});
}

const json* require(const json& object, const char* key, ValidationReport& report) {
  auto it = object.find(key);
  if (it == object.end()) {
    add(report, ViolationKind::Schema, std::string("missing field \"") + key + "\"");
    return nullptr;
  }
  return &*it;
}

std::string require_string(const json& object, const char* key, ValidationReport& report) {
  const json* value = require(object, key, report);
  if (value == nullptr) return {};
  if (!value->is_string()) {
    add(report, ViolationKind::Schema, std::string("field \"") + key + "\" must be a string");
    return {};
  }
  return value->get<std::string>();
}

std::optional<std::size_t> require_offset(const json& object, const char* key,
                                          ValidationReport& report) {
  const json* value = require(object, key, report);
  if (value == nullptr) return std::nullopt;
  if (!value->is_number_integer() || value->get<std::int64_t>() < 0) {
    add(report, ViolationKind::Schema,
        std::string("span field \"") + key + "\" must be a non-negative integer");
    return std::nullopt;
  }
  return value->get<std::size_t>();
}

}  // namespace

std::string_view to_string(Label label) { return kLabelNames[static_cast<std::size_t>(label)]; }

std::optional<Label> parse_label(std::string_view text) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (kLabelNames[i] == text) return static_cast<Label>(i);
  }
  return std::nullopt;
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "val"; }

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  return std::nullopt;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::EmptySpan: return "empty span";
    case ViolationKind::OutOfBounds: return "span out of bounds";
    case ViolationKind::Unsorted: return "spans not sorted by start";
    case ViolationKind::Overlap: return "overlapping spans";
    case ViolationKind::UnknownLabel: return "unknown label";
    case ViolationKind::Schema: return "schema violation";
    case ViolationKind::InvalidUtf8: return "invalid UTF-8";
    case ViolationKind::DuplicateId: return "duplicate id";
  }
  return "unknown";
}

bool ValidationReport::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [kind](const Violation& v) { return v.kind == kind; });
}

ValidationReport validate(const AnnotatedResponse& record) {
  ValidationReport report;
  std::size_t length = 0;
  try {
    length = scalar_length(record.response);
  } catch (const Utf8Error& e) {
    add(report, ViolationKind::InvalidUtf8, std::string("response: ") + e.what());
    return report;
  }
  if (record.id.empty()) add(report, ViolationKind::Schema, "id must not be empty");

  const auto& spans = record.spans;
  for (const auto& span : spans) {
    if (span.start == span.end) {
      add(report, ViolationKind::EmptySpan, "empty span " + describe(span));
    } else if (span.start > span.end) {
      add(report, ViolationKind::OutOfBounds, "span start after end " + describe(span));
    }
    if (span.end > length) {
      add(report, ViolationKind::OutOfBounds,
          "span " + describe(span) + " exceeds response length " + std::to_string(length));
    }
  }
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].start < spans[i - 1].start) {
      add(report, ViolationKind::Unsorted,
          "spans not sorted by start: " + describe(spans[i - 1]) + " before " + describe(spans[i]));
      break;
    }
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = i + 1; j < spans.size(); ++j) {
      const auto& a = spans[i];
      const auto& b = spans[j];
      if (a.start < b.end && b.start < a.end) {
        add(report, ViolationKind::Overlap,
            "spans " + describe(a) + " and " + describe(b) + " overlap");
      }
    }
  }
  return report;
}

IngestError::IngestError(std::vector<IngestIssue> issues)
    : std::runtime_error([&] {
        std::ostringstream msg;
        msg << issues.size() << " problem(s) in corpus";
        if (!issues.empty()) {
          msg << "; first at line " << issues.front().line << ": "
              << issues.front().violation.message;
        }
        return msg.str();
      }()),
      issues_(std::move(issues)) {}

AnnotatedResponse parse_record(std::string_view line, ValidationReport& report) {
  AnnotatedResponse record;
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    add(report, ViolationKind::Schema, std::string("malformed JSON: ") + e.what());
    return record;
  }
  if (!doc.is_object()) {
    add(report, ViolationKind::Schema, "line is not a JSON object");
    return record;
  }
  record.id = require_string(doc, "id", report);
  record.image_ref = require_string(doc, "image_ref", report);
  record.prompt = require_string(doc, "prompt", report);
  record.response = require_string(doc, "response", report);

  const std::string split = require_string(doc, "split", report);
  if (doc.contains("split") && doc["split"].is_string()) {
    if (auto parsed = parse_split(split)) {
      record.split = *parsed;
    } else {
      add(report, ViolationKind::Schema, "unknown split \"" + split + "\"");
    }
  }

  if (const json* spans = require(doc, "spans", report)) {
    if (!spans->is_array()) {
      add(report, ViolationKind::Schema, "field \"spans\" must be an array");
    } else {
      for (const auto& item : *spans) {
        if (!item.is_object()) {
          add(report, ViolationKind::Schema, "span must be an object");
          continue;
        }
        auto start = require_offset(item, "start", report);
        auto end = require_offset(item, "end", report);
        const std::string label_text = require_string(item, "label", report);
        auto label = parse_label(label_text);
        if (item.contains("label") && item["label"].is_string() && !label) {
          add(report, ViolationKind::UnknownLabel, "unknown label \"" + label_text + "\"");
        }
        if (start && end && label) record.spans.push_back({*start, *end, *label});
      }
    }
  }
  return record;
}

Corpus ingest_text(std::string_view text) {
  Corpus corpus;
  std::vector<IngestIssue> issues;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    ValidationReport report;
    AnnotatedResponse record = parse_record(line, report);
    if (report.ok()) report = validate(record);
    if (!record.id.empty() && !seen.insert(record.id).second) {
      report.violations.push_back(
          {ViolationKind::DuplicateId, "duplicate id \"" + record.id + "\""});
    }
    for (auto& violation : report.violations) {
      issues.push_back({line_no, record.id, std::move(violation)});
    }
    if (report.ok()) corpus.push_back(std::move(record));
  }
  if (!issues.empty()) throw IngestError(std::move(issues));
  return corpus;
}

Corpus ingest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IngestError({{0, {}, {ViolationKind::Schema, "cannot open " + path.string()}}});
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ingest_text(buffer.str());
}

std::string export_record(const AnnotatedResponse& record) {
  auto spans = record.spans;
  std::stable_sort(spans.begin(), spans.end(),
                   [](const auto& a, const auto& b) { return a.start < b.start; });
  ordered_json doc;
  doc["id"] = record.id;
  doc["image_ref"] = record.image_ref;
  doc["prompt"] = record.prompt;
  doc["response"] = record.response;
  doc["spans"] = ordered_json::array();
  for (const auto& span : spans) {
    ordered_json item;
    item["start"] = span.start;
    item["end"] = span.end;
    item["label"] = to_string(span.label);
    doc["spans"].push_back(std::move(item));
  }
  doc["split"] = to_string(record.split);
  return doc.dump();
}

std::string export_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& record : corpus) {
    out += export_record(record);
    out += '\n';
  }
  return out;
}

std::vector<Label> materialize_labels(const AnnotatedResponse& record) {
  std::vector<Label> labels(scalar_length(record.response), Label::Accurate);
  for (const auto& span : record.spans) {
    const std::size_t end = std::min(span.end, labels.size());
    for (std::size_t i = span.start; i < end; ++i) labels[i] = span.label;
  }
  return labels;
}

}  // namespace halluc
