#include "halluc/annotation_server.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <unistd.h>

namespace halluc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ApiResponse error_response(int status, const std::string& message) {
  ordered_json doc;
  doc["error"] = message;
  return {status, doc.dump()};
}

ordered_json spans_json(const std::vector<SpanAnnotation>& spans) {
  ordered_json out = ordered_json::array();
  for (const auto& span : spans) {
    ordered_json item;
    item["start"] = span.start;
    item["end"] = span.end;
    item["label"] = to_string(span.label);
    out.push_back(std::move(item));
  }
  return out;
}

ordered_json task_json(const TaskRecord& task) {
  ordered_json doc;
  doc["task_id"] = task.task_id;
  doc["image_ref"] = task.image_ref;
  doc["prompt"] = task.prompt;
  doc["responses"] = task.responses;
  doc["split"] = to_string(task.split);
  doc["status"] = task.status == TaskStatus::Done ? "done" : "pending";
  ordered_json spans = ordered_json::array();
  for (const auto& s : task.spans) spans.push_back(spans_json(s));
  doc["spans"] = std::move(spans);
  return doc;
}

// Parses {"spans": [[...], ...]} using the corpus span rules; problems are
// collected per response.
std::vector<std::vector<SpanAnnotation>> parse_submission(const TaskRecord& task,
                                                          std::string_view body,
                                                          ordered_json& violations) {
  std::vector<std::vector<SpanAnnotation>> out;
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    violations.push_back({{"response", nullptr}, {"kind", "schema violation"},
                          {"message", std::string("malformed JSON: ") + e.what()}});
    return out;
  }
  if (!doc.is_object() || !doc.contains("spans") || !doc["spans"].is_array()) {
    violations.push_back({{"response", nullptr}, {"kind", "schema violation"},
                          {"message", "body must be an object with a \"spans\" array"}});
    return out;
  }
  const auto& per_response = doc["spans"];
  if (per_response.size() != task.responses.size()) {
    violations.push_back({{"response", nullptr}, {"kind", "schema violation"},
                          {"message", "expected spans for " + std::to_string(task.responses.size()) +
                                          " responses, got " + std::to_string(per_response.size())}});
    return out;
  }
  for (std::size_t i = 0; i < per_response.size(); ++i) {
    // Reuse the corpus parser so the API accepts exactly what ingest accepts.
    ordered_json line;
    line["id"] = task.task_id + "-" + std::to_string(i);
    line["image_ref"] = task.image_ref;
    line["prompt"] = task.prompt;
    line["response"] = task.responses[i];
    line["spans"] = per_response[i];
    line["split"] = to_string(task.split);
    ValidationReport report;
    AnnotatedResponse record = parse_record(line.dump(), report);
    if (report.ok()) report = validate(record);
    for (const auto& v : report.violations) {
      ordered_json item;
      item["response"] = i;
      item["kind"] = to_string(v.kind);
      item["message"] = v.message;
      violations.push_back(std::move(item));
    }
    out.push_back(std::move(record.spans));
  }
  return out;
}

}  // namespace

std::vector<TaskRecord> parse_tasks(std::string_view text, std::size_t responses_per_task) {
  std::vector<TaskRecord> tasks;
  std::set<std::string> ids;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto fail = [&](const std::string& what) {
      throw TaskFileError("tasks line " + std::to_string(line_no) + ": " + what);
    };
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    TaskRecord task;
    for (const char* key : {"task_id", "image_ref", "prompt"}) {
      if (!doc.contains(key) || !doc[key].is_string()) fail(std::string("missing string \"") + key + "\"");
    }
    task.task_id = doc["task_id"].get<std::string>();
    task.image_ref = doc["image_ref"].get<std::string>();
    task.prompt = doc["prompt"].get<std::string>();
    if (!doc.contains("responses") || !doc["responses"].is_array()) fail("missing \"responses\" array");
    for (const auto& r : doc["responses"]) {
      if (!r.is_string()) fail("responses must be strings");
      task.responses.push_back(r.get<std::string>());
    }
    if (task.responses.size() != responses_per_task) {
      fail("expected " + std::to_string(responses_per_task) + " responses, got " +
           std::to_string(task.responses.size()));
    }
    if (doc.contains("split")) {
      auto split = doc["split"].is_string() ? parse_split(doc["split"].get<std::string>()) : std::nullopt;
      if (!split) fail("unknown split");
      task.split = *split;
    }
    if (!ids.insert(task.task_id).second) fail("duplicate task id \"" + task.task_id + "\"");
    tasks.push_back(std::move(task));
  }
  return tasks;
}

Corpus task_to_corpus(const TaskRecord& task) {
  Corpus out;
  for (std::size_t i = 0; i < task.responses.size(); ++i) {
    AnnotatedResponse record;
    record.id = task.task_id + "-" + std::to_string(i);
    record.image_ref = task.image_ref;
    record.prompt = task.prompt;
    record.response = task.responses[i];
    if (i < task.spans.size()) record.spans = task.spans[i];
    record.split = task.split;
    out.push_back(std::move(record));
  }
  return out;
}

AnnotationService::AnnotationService(std::vector<TaskRecord> tasks, std::filesystem::path output)
    : output_(std::move(output)) {
  for (std::size_t i = 0; i < tasks.size(); ++i) index_[tasks[i].task_id] = i;
  state_ = std::make_shared<const State>(std::move(tasks));
  restore();
}

std::shared_ptr<const AnnotationService::State> AnnotationService::current() const {
  std::lock_guard lock(pointer_mutex_);
  return state_;
}

std::vector<TaskRecord> AnnotationService::snapshot() const { return *current(); }

void AnnotationService::restore() {
  std::ifstream in(output_);
  if (!in) return;
  auto state = *state_;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw TaskFileError(output_.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto id = doc.value("task_id", std::string());
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw TaskFileError(output_.string() + " refers to unknown task \"" + id + "\"");
    }
    auto& task = state[it->second];
    ordered_json violations = ordered_json::array();
    json body;
    body["spans"] = doc.value("spans", json::array());
    task.spans = parse_submission(task, body.dump(), violations);
    if (!violations.empty()) {
      throw TaskFileError(output_.string() + " holds invalid spans for task \"" + id + "\"");
    }
    task.status = TaskStatus::Done;
  }
  state_ = std::make_shared<const State>(std::move(state));
}

void AnnotationService::persist(const State& state) const {
  std::string text;
  for (const auto& task : state) {
    if (task.status != TaskStatus::Done) continue;
    ordered_json doc;
    doc["task_id"] = task.task_id;
    ordered_json spans = ordered_json::array();
    for (const auto& s : task.spans) spans.push_back(spans_json(s));
    doc["spans"] = std::move(spans);
    text += doc.dump();
    text += '\n';
  }
  auto tmp = output_;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, output_);
}

ApiResponse AnnotationService::list_tasks(std::optional<TaskStatus> status) const {
  const auto state = current();
  ordered_json out = ordered_json::array();
  for (const auto& task : *state) {
    if (status && task.status != *status) continue;
    out.push_back(task_json(task));
  }
  return {200, out.dump()};
}

ApiResponse AnnotationService::get_task(const std::string& task_id) const {
  const auto state = current();
  auto it = index_.find(task_id);
  if (it == index_.end()) return error_response(404, "unknown task \"" + task_id + "\"");
  return {200, task_json((*state)[it->second]).dump()};
}

ApiResponse AnnotationService::submit(const std::string& task_id, std::string_view body,
                                      bool overwrite) {
  auto it = index_.find(task_id);
  if (it == index_.end()) return error_response(404, "unknown task \"" + task_id + "\"");

  std::lock_guard writer(writer_mutex_);
  const auto state = current();
  const auto& task = (*state)[it->second];
  if (task.status == TaskStatus::Done && !overwrite) {
    return error_response(409, "task \"" + task_id + "\" is already annotated");
  }
  ordered_json violations = ordered_json::array();
  auto spans = parse_submission(task, body, violations);
  if (!violations.empty()) {
    ordered_json doc;
    doc["error"] = "invalid spans";
    doc["violations"] = std::move(violations);
    return {400, doc.dump()};
  }
  auto next = std::make_shared<State>(*state);
  auto& updated = (*next)[it->second];
  updated.spans = std::move(spans);
  updated.status = TaskStatus::Done;
  persist(*next);
  {
    std::lock_guard lock(pointer_mutex_);
    state_ = std::move(next);
  }
  ordered_json doc;
  doc["task_id"] = task_id;
  doc["status"] = "done";
  return {200, doc.dump()};
}

ApiResponse AnnotationService::export_corpus() const {
  const auto state = current();
  Corpus corpus;
  for (const auto& task : *state) {
    if (task.status != TaskStatus::Done) continue;
    for (auto& record : task_to_corpus(task)) corpus.push_back(std::move(record));
  }
  return {200, halluc::export_corpus(corpus), "application/x-ndjson"};
}

void register_routes(httplib::Server& server, AnnotationService& service,
                     const std::optional<std::filesystem::path>& static_dir) {
  const auto reply = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body, api.content_type);
  };

  server.Get("/api/tasks", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    std::optional<TaskStatus> status;
    if (req.has_param("status")) {
      const auto value = req.get_param_value("status");
      if (value == "pending") {
        status = TaskStatus::Pending;
      } else if (value == "done") {
        status = TaskStatus::Done;
      } else {
        reply(res, error_response(400, "status must be pending or done"));
        return;
      }
    }
    reply(res, service.list_tasks(status));
  });

  server.Get(R"(/api/tasks/([^/]+))",
             [&service, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, service.get_task(req.matches[1]));
             });

  server.Post(R"(/api/tasks/([^/]+)/annotations)",
              [&service, reply](const httplib::Request& req, httplib::Response& res) {
                const bool overwrite =
                    req.has_param("overwrite") && req.get_param_value("overwrite") == "true";
                reply(res, service.submit(req.matches[1], req.body, overwrite));
              });

  server.Get("/api/export", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.export_corpus());
  });

  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace halluc
