/* Copyright 2026 The cdadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Annotation queue for the selected micro-label samples.
//
// On disk (store root):
//   state.json          current queue state, rewritten atomically per mutation
//   journal.jsonl       append-only event log (audit history)
//   submissions/<sample_id>/<n>.png   every submitted mask, 0/255
//   label/<sample_id>.png             latest submission per sample
//
// Mutations are serialized by one writer mutex; readers take the current
// immutable snapshot.

#ifndef CDADAPT_LABEL_SERVICE_HPP
#define CDADAPT_LABEL_SERVICE_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdadapt/image.hpp"
#include "cdadapt/mlft_trainer.hpp"

namespace cdadapt {

inline constexpr int kLabelSchemaVersion = 1;

enum class TaskStatus { kPending, kInProgress, kDone };
std::string to_string(TaskStatus s);
TaskStatus parse_task_status(const std::string& s);

struct AnnotationTask {
  std::string task_id;
  std::string sample_id;
  int rank = 0;
  TaskStatus status = TaskStatus::kPending;
  double target_prob = 0;
  std::int64_t created_at = 0;  // ms since epoch
  std::int64_t updated_at = 0;
  std::string lease_holder;
  std::int64_t lease_expires_at = 0;
  std::string annotator;       // author of the current submission
  int submissions = 0;
};

nlohmann::json to_json(const AnnotationTask& t);

struct QueueProgress {
  int pending = 0;
  int in_progress = 0;
  int done = 0;
};

class LabelError : public std::runtime_error {
 public:
  enum class Kind { kInvalid, kNotFound, kConflict, kDrained };
  LabelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using Clock = std::function<std::chrono::system_clock::time_point()>;

struct ExportManifest {
  int count = 0;
  std::vector<std::string> samples;
  std::vector<std::string> missing;
  std::map<std::string, std::string> annotators;  // sample_id -> annotator
};

nlohmann::json to_json(const ExportManifest& m);

class LabelStore {
 public:
  static constexpr std::chrono::minutes kLeaseDuration{30};

  /// `samples` holds the image pairs that may be queued (keyed by id);
  /// existing state under `root` is reloaded.
  LabelStore(std::filesystem::path root, std::map<std::string, ImagePair> samples,
             Clock clock = std::chrono::system_clock::now);

  /// Creates one pending task per selected sample. Importing the same id set
  /// again leaves the queue unchanged; a different id set on a non-empty queue
  /// is a conflict.
  void create_tasks(const Selection& selection);

  /// Leases the lowest-rank pending task (expired leases count as pending).
  /// Throws LabelError(kDrained) when nothing is pending.
  AnnotationTask next_task(const std::string& annotator);

  /// Stores a binary mask for a task leased to `annotator`, or overwrites the
  /// mask of a task that is already done.
  AnnotationTask submit_mask(const std::string& task_id, const Mask& mask,
                             const std::string& annotator);

  /// Writes A/, B/, label/ and manifest.json for the done tasks.
  ExportManifest export_labels(const std::filesystem::path& out_dir);

  [[nodiscard]] std::vector<AnnotationTask> tasks() const;  // rank order, leases resolved
  [[nodiscard]] QueueProgress progress() const;
  [[nodiscard]] std::optional<AnnotationTask> find_task(const std::string& task_id) const;
  [[nodiscard]] const ImagePair& sample(const std::string& sample_id) const;
  [[nodiscard]] const std::filesystem::path& root() const { return root_; }

  /// Submission history of one task (journal entries).
  [[nodiscard]] std::vector<nlohmann::json> history(const std::string& task_id) const;

 private:
  struct State {
    std::vector<AnnotationTask> tasks;  // rank order
  };

  [[nodiscard]] std::int64_t now_ms() const;
  [[nodiscard]] std::shared_ptr<const State> snapshot() const;
  void commit(std::shared_ptr<State> next, const nlohmann::json& event);
  void load();
  static void resolve_leases(State& s, std::int64_t now);

  std::filesystem::path root_;
  std::map<std::string, ImagePair> samples_;
  Clock clock_;
  std::mutex write_mu_;
  std::shared_ptr<const State> state_;
};

struct LabelServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;                 // 0: pick a free port
  std::string token;               // empty: no auth
  std::function<std::optional<Mask>(const ImagePair&)> hint;  // model prediction
};

/// HTTP front end over a LabelStore. Endpoints:
///   GET  /tasks                  queue summary
///   POST /tasks/next             {"annotator": ...}
///   GET  /image/<id>/<t1|t2|hint>
///   POST /tasks/<task_id>/mask   PNG body, ?annotator=...
///   POST /export                 {"out_dir": ...} (optional)
///   GET  /progress
class LabelServer {
 public:
  LabelServer(LabelStore& store, LabelServerOptions options);
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  /// Binds and returns the bound port; serving starts on a background thread.
  int start();
  /// Stops accepting and waits for in-flight requests.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cdadapt

#endif  // CDADAPT_LABEL_SERVICE_HPP
