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

#include "cdadapt/label_service.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>

namespace cdadapt {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

AnnotationTask task_from_json(const json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.sample_id = j.at("sample_id").get<std::string>();
  t.rank = j.at("rank").get<int>();
  t.status = parse_task_status(j.at("status").get<std::string>());
  t.target_prob = j.value("target_prob", 0.0);
  t.created_at = j.value("created_at", std::int64_t{0});
  t.updated_at = j.value("updated_at", std::int64_t{0});
  t.lease_holder = j.value("lease_holder", std::string{});
  t.lease_expires_at = j.value("lease_expires_at", std::int64_t{0});
  t.annotator = j.value("annotator", std::string{});
  t.submissions = j.value("submissions", 0);
  return t;
}

}  // namespace

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kInProgress: return "in_progress";
    case TaskStatus::kDone: return "done";
  }
  return "pending";
}

TaskStatus parse_task_status(const std::string& s) {
  if (s == "pending") return TaskStatus::kPending;
  if (s == "in_progress") return TaskStatus::kInProgress;
  if (s == "done") return TaskStatus::kDone;
  throw std::invalid_argument("unknown task status '" + s + "'");
}

json to_json(const AnnotationTask& t) {
  return {{"task_id", t.task_id},
          {"sample_id", t.sample_id},
          {"rank", t.rank},
          {"status", to_string(t.status)},
          {"target_prob", t.target_prob},
          {"created_at", t.created_at},
          {"updated_at", t.updated_at},
          {"lease_holder", t.lease_holder},
          {"lease_expires_at", t.lease_expires_at},
          {"annotator", t.annotator},
          {"submissions", t.submissions}};
}

json to_json(const ExportManifest& m) {
  return {{"schema_version", kLabelSchemaVersion},
          {"count", m.count},
          {"samples", m.samples},
          {"missing", m.missing},
          {"n_missing", m.missing.size()},
          {"annotators", m.annotators}};
}

LabelStore::LabelStore(fs::path root, std::map<std::string, ImagePair> samples, Clock clock)
    : root_(std::move(root)), samples_(std::move(samples)), clock_(std::move(clock)) {
  fs::create_directories(root_);
  state_ = std::make_shared<const State>();
  load();
}

std::int64_t LabelStore::now_ms() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(clock_().time_since_epoch()).count();
}

std::shared_ptr<const LabelStore::State> LabelStore::snapshot() const { return std::atomic_load(&state_); }

void LabelStore::load() {
  const fs::path path = root_ / "state.json";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  const json j = json::parse(in);
  auto s = std::make_shared<State>();
  for (const auto& t : j.at("tasks")) s->tasks.push_back(task_from_json(t));
  std::sort(s->tasks.begin(), s->tasks.end(),
            [](const AnnotationTask& a, const AnnotationTask& b) { return a.rank < b.rank; });
  std::atomic_store(&state_, std::shared_ptr<const State>(std::move(s)));
}

void LabelStore::commit(std::shared_ptr<State> next, const json& event) {
  json tasks = json::array();
  for (const auto& t : next->tasks) tasks.push_back(to_json(t));
  write_text_atomic(root_ / "state.json",
                    json{{"schema_version", kLabelSchemaVersion}, {"tasks", tasks}}.dump(1) + "\n");
  std::ofstream(root_ / "journal.jsonl", std::ios::app) << event.dump() << '\n';
  std::atomic_store(&state_, std::shared_ptr<const State>(std::move(next)));
}

void LabelStore::resolve_leases(State& s, std::int64_t now) {
  for (auto& t : s.tasks) {
    if (t.status == TaskStatus::kInProgress && t.lease_expires_at <= now) {
      t.status = TaskStatus::kPending;
      t.lease_holder.clear();
      t.lease_expires_at = 0;
    }
  }
}

void LabelStore::create_tasks(const Selection& selection) {
  if (selection.entries.empty()) throw LabelError(LabelError::Kind::kInvalid, "selection is empty");
  std::set<std::string> ids;
  std::set<int> ranks;
  for (const auto& e : selection.entries) {
    if (!ids.insert(e.sample_id).second) {
      throw LabelError(LabelError::Kind::kInvalid, "duplicate sample_id '" + e.sample_id + "' in report");
    }
    if (!ranks.insert(e.rank).second) {
      throw LabelError(LabelError::Kind::kInvalid, "duplicate rank " + std::to_string(e.rank));
    }
    if (!samples_.contains(e.sample_id)) {
      throw LabelError(LabelError::Kind::kNotFound, "sample '" + e.sample_id + "' is not in the dataset");
    }
  }
  if (*ranks.begin() != 1 || *ranks.rbegin() != static_cast<int>(ranks.size())) {
    throw LabelError(LabelError::Kind::kInvalid, "ranks must be dense 1..k");
  }

  std::lock_guard lock(write_mu_);
  const auto cur = snapshot();
  if (!cur->tasks.empty()) {
    std::set<std::string> existing;
    for (const auto& t : cur->tasks) existing.insert(t.sample_id);
    if (existing == ids) return;
    throw LabelError(LabelError::Kind::kConflict, "queue already holds a different selection");
  }
  auto next = std::make_shared<State>();
  const auto now = now_ms();
  for (const auto& e : selection.entries) {
    AnnotationTask t;
    t.task_id = "task-" + e.sample_id;
    t.sample_id = e.sample_id;
    t.rank = e.rank;
    t.target_prob = e.target_prob;
    t.created_at = t.updated_at = now;
    next->tasks.push_back(std::move(t));
  }
  std::sort(next->tasks.begin(), next->tasks.end(),
            [](const AnnotationTask& a, const AnnotationTask& b) { return a.rank < b.rank; });
  commit(next, {{"event", "create"}, {"at", now}, {"count", next->tasks.size()}});
}

AnnotationTask LabelStore::next_task(const std::string& annotator) {
  if (annotator.empty()) throw LabelError(LabelError::Kind::kInvalid, "annotator is required");
  std::lock_guard lock(write_mu_);
  auto next = std::make_shared<State>(*snapshot());
  const auto now = now_ms();
  resolve_leases(*next, now);
  for (auto& t : next->tasks) {
    if (t.status != TaskStatus::kPending) continue;
    t.status = TaskStatus::kInProgress;
    t.lease_holder = annotator;
    t.lease_expires_at =
        now + std::chrono::duration_cast<std::chrono::milliseconds>(kLeaseDuration).count();
    t.updated_at = now;
    AnnotationTask out = t;
    commit(next, {{"event", "lease"}, {"at", now}, {"task_id", t.task_id}, {"annotator", annotator}});
    return out;
  }
  throw LabelError(LabelError::Kind::kDrained, "queue drained");
}

AnnotationTask LabelStore::submit_mask(const std::string& task_id, const Mask& mask,
                                       const std::string& annotator) {
  if (annotator.empty()) throw LabelError(LabelError::Kind::kInvalid, "annotator is required");
  std::lock_guard lock(write_mu_);
  auto next = std::make_shared<State>(*snapshot());
  const auto now = now_ms();
  auto it = std::find_if(next->tasks.begin(), next->tasks.end(),
                         [&](const AnnotationTask& t) { return t.task_id == task_id; });
  if (it == next->tasks.end()) throw LabelError(LabelError::Kind::kNotFound, "unknown task '" + task_id + "'");
  const ImagePair& pair = samples_.at(it->sample_id);
  if (mask.height != pair.t1.height || mask.width != pair.t1.width) {
    throw LabelError(LabelError::Kind::kInvalid,
                     "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         ", expected " + std::to_string(pair.t1.height) + "x" +
                         std::to_string(pair.t1.width));
  }
  for (auto v : mask.data) {
    if (v > 1) throw LabelError(LabelError::Kind::kInvalid, "mask values must be 0 or 1");
  }
  if (it->status == TaskStatus::kPending) {
    throw LabelError(LabelError::Kind::kConflict, "task '" + task_id + "' is not leased");
  }
  if (it->status == TaskStatus::kInProgress && it->lease_holder != annotator) {
    throw LabelError(LabelError::Kind::kConflict, "task '" + task_id + "' is leased to another annotator");
  }

  const auto bytes = encode_png_mask(mask);
  const int n = it->submissions + 1;
  const fs::path rel = fs::path("submissions") / it->sample_id / (std::to_string(n) + ".png");
  write_bytes(root_ / rel, bytes);
  write_bytes(root_ / "label" / (it->sample_id + ".png"), bytes);
  it->status = TaskStatus::kDone;
  it->lease_holder.clear();
  it->lease_expires_at = 0;
  it->annotator = annotator;
  it->submissions = n;
  it->updated_at = now;
  AnnotationTask out = *it;
  commit(next, {{"event", "submit"},
                {"at", now},
                {"task_id", task_id},
                {"sample_id", out.sample_id},
                {"annotator", annotator},
                {"file", rel.generic_string()}});
  return out;
}

ExportManifest LabelStore::export_labels(const fs::path& out_dir) {
  std::lock_guard lock(write_mu_);
  const auto cur = snapshot();
  ExportManifest m;
  for (const auto& t : cur->tasks) {
    if (t.status == TaskStatus::kDone) {
      m.samples.push_back(t.sample_id);
      m.annotators[t.sample_id] = t.annotator;
    } else {
      m.missing.push_back(t.sample_id);
    }
  }
  m.count = static_cast<int>(m.samples.size());
  if (m.count == 0) throw LabelError(LabelError::Kind::kConflict, "no completed tasks to export");

  for (const char* sub : {"A", "B", "label"}) fs::remove_all(out_dir / sub);
  for (const auto& id : m.samples) {
    const ImagePair& pair = samples_.at(id);
    write_bytes(out_dir / "A" / (id + ".png"), encode_png_image(pair.t1));
    write_bytes(out_dir / "B" / (id + ".png"), encode_png_image(pair.t2));
    write_bytes(out_dir / "label" / (id + ".png"), read_bytes(root_ / "label" / (id + ".png")));
  }
  write_text_atomic(out_dir / "manifest.json", to_json(m).dump(2) + "\n");
  std::ofstream(root_ / "journal.jsonl", std::ios::app)
      << json{{"event", "export"}, {"at", now_ms()}, {"out_dir", out_dir.string()}, {"count", m.count}}.dump()
      << '\n';
  return m;
}

std::vector<AnnotationTask> LabelStore::tasks() const {
  State s = *snapshot();
  resolve_leases(s, now_ms());
  return s.tasks;
}

QueueProgress LabelStore::progress() const {
  QueueProgress p;
  for (const auto& t : tasks()) {
    switch (t.status) {
      case TaskStatus::kPending: ++p.pending; break;
      case TaskStatus::kInProgress: ++p.in_progress; break;
      case TaskStatus::kDone: ++p.done; break;
    }
  }
  return p;
}

std::optional<AnnotationTask> LabelStore::find_task(const std::string& task_id) const {
  for (auto& t : tasks()) {
    if (t.task_id == task_id) return t;
  }
  return std::nullopt;
}

const ImagePair& LabelStore::sample(const std::string& sample_id) const {
  auto it = samples_.find(sample_id);
  if (it == samples_.end()) throw LabelError(LabelError::Kind::kNotFound, "unknown sample '" + sample_id + "'");
  return it->second;
}

std::vector<json> LabelStore::history(const std::string& task_id) const {
  std::vector<json> out;
  std::ifstream in(root_ / "journal.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("event", "") == "submit" && j.value("task_id", "") == task_id) out.push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP front end

struct LabelServer::Impl {
  LabelStore& store;
  LabelServerOptions options;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> running{false};

  Impl(LabelStore& s, LabelServerOptions o) : store(s), options(std::move(o)) {}

  static void send_json(httplib::Response& res, int status, json body) {
    body["schema_version"] = kLabelSchemaVersion;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_png(httplib::Response& res, const std::vector<std::uint8_t>& bytes) {
    res.status = 200;
    res.set_header("X-Schema-Version", std::to_string(kLabelSchemaVersion));
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  static void send_error(httplib::Response& res, const LabelError& e) {
    int status = 400;
    switch (e.kind()) {
      case LabelError::Kind::kInvalid: status = 400; break;
      case LabelError::Kind::kNotFound: status = 404; break;
      case LabelError::Kind::kConflict: status = 409; break;
      case LabelError::Kind::kDrained: status = 200; break;
    }
    send_json(res, status, {{"error", e.what()}});
  }

  json progress_json() const {
    const auto p = store.progress();
    return {{"pending", p.pending}, {"in_progress", p.in_progress}, {"done", p.done}};
  }

  json task_json(const AnnotationTask& t) const {
    json j = to_json(t);
    const std::string base = "/image/" + t.sample_id + "/";
    j["images"] = {{"t1", base + "t1"}, {"t2", base + "t2"}, {"hint", base + "hint"}};
    return j;
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (options.token.empty()) return httplib::Server::HandlerResponse::Unhandled;
      const std::string bearer = "Bearer " + options.token;
      if (req.get_header_value("Authorization") == bearer ||
          req.get_header_value("X-Label-Token") == options.token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      send_json(res, 401, {{"error", "missing or invalid token"}});
      return httplib::Server::HandlerResponse::Handled;
    });

    server.Get("/tasks", [this](const httplib::Request&, httplib::Response& res) {
      json tasks = json::array();
      for (const auto& t : store.tasks()) tasks.push_back(to_json(t));
      send_json(res, 200, {{"tasks", tasks}, {"progress", progress_json()}});
    });

    server.Get("/progress", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, progress_json());
    });

    server.Post("/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      std::string annotator;
      try {
        if (!req.body.empty()) annotator = json::parse(req.body).value("annotator", std::string{});
      } catch (const json::exception&) {
        send_json(res, 400, {{"error", "body must be JSON {\"annotator\": ...}"}});
        return;
      }
      try {
        send_json(res, 200, {{"drained", false}, {"task", task_json(store.next_task(annotator))}});
      } catch (const LabelError& e) {
        if (e.kind() == LabelError::Kind::kDrained) {
          send_json(res, 200, {{"drained", true}, {"message", e.what()}, {"progress", progress_json()}});
        } else {
          send_error(res, e);
        }
      }
    });

    server.Post(R"(/tasks/([^/]+)/mask)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string task_id = req.matches[1];
      const std::string annotator = req.get_param_value("annotator");
      const auto task = store.find_task(task_id);
      if (!task) {
        send_json(res, 404, {{"error", "unknown task '" + task_id + "'"}});
        return;
      }
      const std::vector<std::uint8_t> bytes(req.body.begin(), req.body.end());
      cv::Mat raw = bytes.empty() ? cv::Mat() : cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
      if (raw.empty()) {
        send_json(res, 400, {{"error", "body is not a decodable PNG"}});
        return;
      }
      const ImagePair& pair = store.sample(task->sample_id);
      if (raw.rows != pair.t1.height || raw.cols != pair.t1.width) {
        send_json(res, 400, {{"error", "mask dimensions do not match the sample"},
                             {"expected", {{"height", pair.t1.height}, {"width", pair.t1.width}}},
                             {"got", {{"height", raw.rows}, {"width", raw.cols}}}});
        return;
      }
      Mask mask(raw.rows, raw.cols);
      bool zero_one = true;
      bool zero_255 = true;
      for (int y = 0; y < raw.rows; ++y) {
        for (int x = 0; x < raw.cols; ++x) {
          const auto v = raw.at<std::uint8_t>(y, x);
          zero_one = zero_one && v <= 1;
          zero_255 = zero_255 && (v == 0 || v == 255);
          mask.at(y, x) = v != 0 ? 1 : 0;
        }
      }
      if (!zero_one && !zero_255) {
        send_json(res, 400, {{"error", "mask must be binary (0/1 or 0/255)"}});
        return;
      }
      try {
        const auto done = store.submit_mask(task_id, mask, annotator);
        send_json(res, 200, {{"task", to_json(done)}, {"stored", "label/" + done.sample_id + ".png"},
                             {"progress", progress_json()}});
      } catch (const LabelError& e) {
        send_error(res, e);
      }
    });

    server.Get(R"(/image/([^/]+)/(t1|t2|hint))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const std::string which = req.matches[2];
      try {
        const ImagePair& pair = store.sample(id);
        if (which == "t1") {
          send_png(res, encode_png_image(pair.t1));
        } else if (which == "t2") {
          send_png(res, encode_png_image(pair.t2));
        } else {
          std::optional<Mask> hint;
          if (options.hint) hint = options.hint(pair);
          if (!hint) hint = Mask(pair.t1.height, pair.t1.width);
          send_png(res, encode_png_mask(*hint));
        }
      } catch (const LabelError& e) {
        send_error(res, e);
      }
    });

    server.Post("/export", [this](const httplib::Request& req, httplib::Response& res) {
      fs::path out = store.root() / "export";
      try {
        if (!req.body.empty()) {
          const json j = json::parse(req.body);
          if (j.contains("out_dir")) out = j.at("out_dir").get<std::string>();
        }
      } catch (const json::exception&) {
        send_json(res, 400, {{"error", "body must be JSON"}});
        return;
      }
      try {
        json m = to_json(store.export_labels(out));
        m["out_dir"] = out.string();
        send_json(res, 200, m);
      } catch (const LabelError& e) {
        send_error(res, e);
      }
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send_json(res, 500, {{"error", what}});
    });
  }
};

LabelServer::LabelServer(LabelStore& store, LabelServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  impl_->routes();
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::start() {
  auto& s = impl_->server;
  int port = impl_->options.port;
  if (port == 0) {
    port = s.bind_to_any_port(impl_->options.host);
  } else if (!s.bind_to_port(impl_->options.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw std::runtime_error("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  return port;
}

void LabelServer::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cdadapt
