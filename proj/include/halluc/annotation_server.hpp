#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "halluc/corpus.hpp"

namespace httplib {
class Server;
}

namespace halluc {

enum class TaskStatus { Pending, Done };

/// One labeling job: an image, a prompt and a fixed number of responses.
struct TaskRecord {
  std::string task_id;
  std::string image_ref;
  std::string prompt;
  std::vector<std::string> responses;
  Split split = Split::Train;
  TaskStatus status = TaskStatus::Pending;
  std::vector<std::vector<SpanAnnotation>> spans;  // per response, once done
};

class TaskFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads tasks JSONL: {"task_id","image_ref","prompt","responses":[...]} with
/// an optional "split". Every task must carry `responses_per_task` responses.
std::vector<TaskRecord> parse_tasks(std::string_view text, std::size_t responses_per_task = 4);

/// Corpus records for a finished task, one per response ("<task_id>-<i>").
Corpus task_to_corpus(const TaskRecord& task);

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Backend state behind the annotation API. Reads work on immutable
/// snapshots; submissions are serialized and persisted with a temp-file
/// rename so the output file is never half written.
class AnnotationService {
 public:
  /// Restores finished tasks from `output` when it already exists.
  AnnotationService(std::vector<TaskRecord> tasks, std::filesystem::path output);

  ApiResponse list_tasks(std::optional<TaskStatus> status) const;
  ApiResponse get_task(const std::string& task_id) const;
  ApiResponse submit(const std::string& task_id, std::string_view body, bool overwrite);
  ApiResponse export_corpus() const;

  std::vector<TaskRecord> snapshot() const;

 private:
  using State = std::vector<TaskRecord>;

  std::shared_ptr<const State> current() const;
  void persist(const State& state) const;
  void restore();

  std::filesystem::path output_;
  std::map<std::string, std::size_t> index_;
  mutable std::mutex pointer_mutex_;
  std::mutex writer_mutex_;
  std::shared_ptr<const State> state_;
};

/// Registers the HTTP routes on `server`; static UI files are mounted at "/"
/// when `static_dir` is set.
void register_routes(httplib::Server& server, AnnotationService& service,
                     const std::optional<std::filesystem::path>& static_dir);

}  // namespace halluc
