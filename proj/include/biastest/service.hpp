#pragma once

// JSON HTTP API over the library plus the asynchronous job runner backing
// the long-running endpoints (generation, bias tests, quality reports).
//
// Routes (all under /api):
//   GET  /specs                      stored specifications
//   POST /specs                      validate and store; 400 lists every problem
//   GET  /specs/{name}
//   GET  /specs/{name}/sentences     stored sentences, every run merged
//   POST /generate                   -> {job_id}
//   POST /biastest                   -> {job_id}
//   POST /quality                    -> {job_id}
//   POST /discover                   synchronous draft specifications
//   GET  /jobs/{id}
//   GET  /results/{id}               409 until the job has finished
//   GET  /results/{id}/export.csv
//
// The chat API key is read from CHAT_API_KEY or the X-Chat-Api-Key request
// header. A request body carrying a key is rejected.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "biastest/chat.hpp"
#include "biastest/datastore.hpp"
#include "biastest/error.hpp"
#include "biastest/genpipeline.hpp"
#include "biastest/metrics.hpp"
#include "biastest/scorers.hpp"
#include "biastest/specs.hpp"
#include "biastest/textquality.hpp"

namespace biastest::service {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// --- jobs ----------------------------------------------------------------

enum class JobKind { Generate, BiasTest, Quality };
enum class JobState { Queued, Running, Done, Failed, Partial };

inline std::string_view to_string(JobKind k) {
  switch (k) {
    case JobKind::Generate: return "generate";
    case JobKind::BiasTest: return "biastest";
    case JobKind::Quality: return "quality";
  }
  return "generate";
}

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    case JobState::Partial: return "partial";
  }
  return "queued";
}

inline bool finished(JobState s) { return s == JobState::Done || s == JobState::Failed || s == JobState::Partial; }

struct Job {
  std::string id;
  JobKind kind = JobKind::Generate;
  JobState state = JobState::Queued;
  long progress_done = 0;
  long progress_total = 0;
  std::string result_ref;  // set iff done or partial
  std::string error_message;
};

inline json to_json(const Job& j) {
  json out;
  out["id"] = j.id;
  out["kind"] = std::string(to_string(j.kind));
  out["state"] = std::string(to_string(j.state));
  out["progress"] = {{"done", j.progress_done}, {"total", j.progress_total}};
  out["result_ref"] = j.result_ref.empty() ? json(nullptr) : json(j.result_ref);
  out["error_message"] = j.error_message.empty() ? json(nullptr) : json(j.error_message);
  return out;
}

/// Thrown by a job body that stopped early but left usable output behind.
class PartialResult : public std::runtime_error {
 public:
  PartialResult(std::string result_ref, const std::string& message)
      : std::runtime_error(message), result_ref_(std::move(result_ref)) {}
  const std::string& result_ref() const { return result_ref_; }

 private:
  std::string result_ref_;
};

class JobRunner;

class JobContext {
 public:
  JobContext(JobRunner& runner, std::string id) : runner_(runner), id_(std::move(id)) {}
  const std::string& id() const { return id_; }
  void set_total(long total);
  /// Progress never moves backwards; smaller values are ignored.
  void set_done(long done);

 private:
  JobRunner& runner_;
  std::string id_;
};

using JobBody = std::function<std::string(JobContext&)>;  // returns result_ref

/// Fixed pool of worker threads draining a FIFO queue.
class JobRunner {
 public:
  explicit JobRunner(int workers = 2) {
    workers = std::max(1, workers);
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
  }

  ~JobRunner() { shutdown(); }

  JobRunner(const JobRunner&) = delete;
  JobRunner& operator=(const JobRunner&) = delete;

  std::string submit(JobKind kind, JobBody body, long total = 0) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (stopping_) throw Error(ErrorCode::InvalidConfig, "job runner is shutting down");
    Job job;
    job.id = new_id();
    job.kind = kind;
    job.progress_total = total;
    jobs_[job.id] = job;
    queue_.push_back({job.id, std::move(body)});
    work_cv_.notify_one();
    return job.id;
  }

  std::optional<Job> get(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Blocks until the job finishes or the timeout passes.
  std::optional<Job> wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait_for(lock, timeout, [&] {
      auto it = jobs_.find(id);
      return it == jobs_.end() || finished(it->second.state);
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Stops the workers. Jobs still queued are marked failed so nothing is
  /// left looking queued forever.
  void shutdown() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (stopping_ && threads_.empty()) return;
      stopping_ = true;
      for (auto& q : queue_) {
        auto& job = jobs_[q.id];
        job.state = JobState::Failed;
        job.error_message = "service stopped before the job started";
      }
      queue_.clear();
      work_cv_.notify_all();
      done_cv_.notify_all();
    }
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
    threads_.clear();
  }

 private:
  friend class JobContext;

  struct Queued {
    std::string id;
    JobBody body;
  };

  std::string new_id() {
    std::uniform_int_distribution<std::uint64_t> dist;
    char buf[24];
    std::snprintf(buf, sizeof buf, "j%012llx", static_cast<unsigned long long>(dist(rng_) & 0xffffffffffffULL));
    return jobs_.count(buf) ? new_id() : std::string(buf);
  }

  void update(const std::string& id, const std::function<void(Job&)>& fn) {
    std::lock_guard<std::mutex> lock(mutex_);
    fn(jobs_[id]);
  }

  void work() {
    for (;;) {
      Queued item;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
        jobs_[item.id].state = JobState::Running;
      }
      JobContext ctx(*this, item.id);
      JobState state = JobState::Done;
      std::string ref, error;
      try {
        ref = item.body(ctx);
      } catch (const PartialResult& p) {
        state = JobState::Partial;
        ref = p.result_ref();
        error = p.what();
      } catch (const std::exception& e) {
        state = JobState::Failed;
        error = e.what();
      } catch (...) {
        state = JobState::Failed;
        error = "unknown failure";
      }
      {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& job = jobs_[item.id];
        job.state = state;
        job.result_ref = state == JobState::Failed ? std::string() : ref;
        job.error_message = error;
        if (state == JobState::Done) job.progress_done = std::max(job.progress_done, job.progress_total);
      }
      done_cv_.notify_all();
    }
  }

  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::deque<Queued> queue_;
  std::map<std::string, Job> jobs_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
  std::mt19937_64 rng_{std::random_device{}()};
};

inline void JobContext::set_total(long total) {
  runner_.update(id_, [&](Job& j) { j.progress_total = std::max(j.progress_total, total); });
}

inline void JobContext::set_done(long done) {
  runner_.update(id_, [&](Job& j) { j.progress_done = std::max(j.progress_done, done); });
}

// --- request helpers -----------------------------------------------------

/// HTTP status for a library error.
inline int status_for(ErrorCode code) {
  if (is_backend_failure(code) || code == ErrorCode::UnparseableReply) return 502;
  if (code == ErrorCode::NotFound) return 404;
  if (code == ErrorCode::IoError) return 500;
  return 400;
}

inline json error_body(ErrorCode code, const std::string& message) {
  return {{"error", std::string(to_string(code))}, {"message", message}};
}

/// True when any object key anywhere in `j` names an API key.
inline bool carries_api_key(const nlohmann::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto k = text::lower(it.key());
      if (k.find("api_key") != std::string::npos || k.find("apikey") != std::string::npos) return true;
      if (carries_api_key(it.value())) return true;
    }
  } else if (j.is_array()) {
    for (const auto& v : j) {
      if (carries_api_key(v)) return true;
    }
  }
  return false;
}

/// Reads a GenerationConfig from a request/CLI JSON object. Unknown keys are
/// ignored; mistyped known keys raise InvalidConfig.
template <typename Json>
gen::GenerationConfig generation_config_from_json(const Json& j) {
  gen::GenerationConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be an object");
  try {
    c.per_attribute_quota = j.value("per_attribute_quota", j.value("quota", c.per_attribute_quota));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_tries = j.value("max_tries", c.max_tries);
    c.concurrency_limit = j.value("concurrency_limit", c.concurrency_limit);
    c.temperature = j.value("temperature", c.temperature);
    c.chat_model = j.value("model", c.chat_model);
    c.seed = j.value("seed", c.seed);
    const auto mode = j.value("pair_mode", std::string("chat"));
    if (mode == "chat") c.pair_mode = gen::PairMode::Chat;
    else if (mode == "deterministic") c.pair_mode = gen::PairMode::Deterministic;
    else throw Error(ErrorCode::InvalidConfig, "pair_mode must be 'chat' or 'deterministic'");
    if (j.contains("few_shot_examples")) {
      for (const auto& e : j.at("few_shot_examples")) {
        c.few_shot_examples.push_back({e.at("terms").template get<std::vector<std::string>>(),
                                       e.at("sentence").template get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad generation config: ") + e.what());
  }
  gen::validate_config(c);
  return c;
}

template <typename Json>
chat::MockChatOptions mock_options_from_json(const Json& j, std::uint64_t seed) {
  chat::MockChatOptions o;
  o.seed = seed;
  if (j.is_object()) {
    o.omission_rate = j.value("omission_rate", 0.0);
    o.refusal_rate = j.value("refusal_rate", 0.0);
    o.bad_rewrite_rate = j.value("bad_rewrite_rate", 0.0);
  }
  for (double r : {o.omission_rate, o.refusal_rate, o.bad_rewrite_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::InvalidConfig, "mock rates must lie in [0, 1]");
  }
  return o;
}

// --- service -------------------------------------------------------------

struct ServiceOptions {
  fs::path data_dir = "biastest-data";
  int workers = 2;
  std::optional<std::string> toxicity_url;
  std::optional<fs::path> seed_specs_dir;  // copied into the store when missing
  bool log_requests = false;
};

/// Reads BIASTEST_DATA_DIR and TOXICITY_URL.
inline ServiceOptions options_from_environment() {
  ServiceOptions o;
  if (auto d = http::env("BIASTEST_DATA_DIR")) o.data_dir = *d;
  o.toxicity_url = http::env("TOXICITY_URL");
  return o;
}

class Service {
 public:
  explicit Service(ServiceOptions options)
      : options_(std::move(options)), store_(options_.data_dir), jobs_(options_.workers) {
    if (options_.seed_specs_dir && fs::is_directory(*options_.seed_specs_dir)) {
      for (const auto& e : fs::directory_iterator(*options_.seed_specs_dir)) {
        if (e.path().extension() != ".json") continue;
        auto spec = specs::load_spec_file(e.path().string());
        if (!store_.get_spec(spec.name)) store_.put_spec(spec);
      }
    }
  }

  ~Service() {
    stop();
    jobs_.shutdown();
  }

  store::Store& store() { return store_; }
  JobRunner& jobs() { return jobs_; }

  /// Registers every route on `server`.
  void mount(httplib::Server& server) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Chat-Api-Key");
      res.status = 204;
    });
    if (options_.log_requests) {
      // Method, path and status only; headers may hold the chat key.
      server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        std::fprintf(stderr, "%s %s %d\n", req.method.c_str(), req.path.c_str(), res.status);
      });
    }

    server.Get("/api/specs", wrap([this](const httplib::Request&, httplib::Response& res) { list_specs(res); }));
    server.Post("/api/specs", wrap([this](const httplib::Request& req, httplib::Response& res) { post_spec(req, res); }));
    server.Get(R"(/api/specs/([^/]+))",
               wrap([this](const httplib::Request& req, httplib::Response& res) { get_spec(req, res); }));
    server.Get(R"(/api/specs/([^/]+)/sentences)",
               wrap([this](const httplib::Request& req, httplib::Response& res) { get_sentences(req, res); }));
    server.Post("/api/generate", wrap([this](const httplib::Request& req, httplib::Response& res) { generate(req, res); }));
    server.Post("/api/biastest", wrap([this](const httplib::Request& req, httplib::Response& res) { biastest(req, res); }));
    server.Post("/api/quality", wrap([this](const httplib::Request& req, httplib::Response& res) { quality(req, res); }));
    server.Post("/api/discover", wrap([this](const httplib::Request& req, httplib::Response& res) { discover(req, res); }));
    server.Get(R"(/api/jobs/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) { get_job(req, res); }));
    server.Get(R"(/api/results/([^/]+))",
               wrap([this](const httplib::Request& req, httplib::Response& res) { get_result(req, res); }));
    server.Get(R"(/api/results/([^/]+)/export\.csv)",
               wrap([this](const httplib::Request& req, httplib::Response& res) { export_result(req, res); }));
  }

  /// Binds and serves until stop(). Returns false if the port cannot be bound.
  bool listen(const std::string& host, int port) {
    {
      std::lock_guard<std::mutex> lock(server_mutex_);
      server_ = std::make_unique<httplib::Server>();
      mount(*server_);
    }
    return server_->listen(host, port);
  }

  /// Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    std::lock_guard<std::mutex> lock(server_mutex_);
    server_ = std::make_unique<httplib::Server>();
    mount(*server_);
    const int port = server_->bind_to_any_port(host);
    if (port <= 0) throw Error(ErrorCode::IoError, "cannot bind a port on " + host);
    background_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
  }

  void stop() {
    std::lock_guard<std::mutex> lock(server_mutex_);
    if (server_) server_->stop();
    if (background_.joinable()) background_.join();
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const gen::UnparseableReply& e) {
        auto body = error_body(e.code(), e.what());
        body["raw_text"] = e.raw_text();
        send(res, 502, body);
      } catch (const Error& e) {
        send(res, status_for(e.code()), error_body(e.code(), e.what()));
      } catch (const nlohmann::json::exception& e) {
        send(res, 400, error_body(ErrorCode::SchemaViolation, std::string("malformed JSON: ") + e.what()));
      } catch (const std::exception& e) {
        send(res, 500, {{"error", "Internal"}, {"message", e.what()}});
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "request body must be a JSON object");
    if (carries_api_key(j)) {
      throw Error(ErrorCode::InvalidConfig,
                  "API keys are not accepted in request bodies; set CHAT_API_KEY on the server or send the "
                  "X-Chat-Api-Key header");
    }
    return j;
  }

  specs::ValidatedSpec stored_spec(const std::string& name) const {
    auto spec = store_.get_spec(name);
    if (!spec) throw Error(ErrorCode::NotFound, "no specification named '" + name + "'");
    return specs::require_valid(*spec);
  }

  store::DatasetFile dataset_for(const std::string& spec_name, const std::string& run) const {
    if (!run.empty()) return store_.get_dataset(spec_name, run);
    auto merged = store_.merged_dataset(spec_name);
    if (!merged) throw Error(ErrorCode::NotFound, "no stored sentences for specification '" + spec_name + "'");
    return *merged;
  }

  // GET /api/specs
  void list_specs(httplib::Response& res) {
    json arr = json::array();
    for (const auto& name : store_.list_specs()) {
      if (auto s = store_.get_spec(name)) arr.push_back(specs::to_json(*s));
    }
    send(res, 200, arr);
  }

  // POST /api/specs
  void post_spec(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    const auto spec = specs::spec_from_json(body.contains("spec") ? body.at("spec") : body);
    auto validated = specs::validate_spec(spec);
    if (auto* errors = std::get_if<specs::ValidationErrorList>(&validated)) {
      send(res, 400, {{"error", "ValidationFailed"}, {"errors", specs::to_json(*errors)}});
      return;
    }
    const auto& ok = std::get<specs::ValidatedSpec>(validated);
    store::Store::check_name(spec.name);
    store_.put_spec(spec);
    send(res, 201, {{"spec", specs::to_json(spec)}, {"warnings", specs::to_json(ok.warnings())}});
  }

  // GET /api/specs/{name}
  void get_spec(const httplib::Request& req, httplib::Response& res) {
    auto spec = store_.get_spec(req.matches[1]);
    if (!spec) throw Error(ErrorCode::NotFound, "no specification named '" + std::string(req.matches[1]) + "'");
    send(res, 200, specs::to_json(*spec));
  }

  // GET /api/specs/{name}/sentences[?run=ID]
  void get_sentences(const httplib::Request& req, httplib::Response& res) {
    const std::string name = req.matches[1];
    if (!store_.get_spec(name)) throw Error(ErrorCode::NotFound, "no specification named '" + name + "'");
    json out;
    out["spec_name"] = name;
    out["runs"] = store_.list_runs(name);
    json sentences = json::array();
    std::optional<store::DatasetFile> d;
    if (req.has_param("run")) d = store_.get_dataset(name, req.get_param_value("run"));
    else d = store_.merged_dataset(name);
    if (d) {
      for (const auto& s : d->sentences) sentences.push_back(gen::to_json(s));
    }
    out["count"] = sentences.size();
    out["sentences"] = std::move(sentences);
    send(res, 200, out);
  }

  std::unique_ptr<chat::ChatClient> chat_client_for(const httplib::Request& req, const nlohmann::json& config,
                                                    std::uint64_t seed) const {
    const auto backend = config.value("backend", std::string("chat"));
    if (backend == "mock") {
      return std::make_unique<chat::MockChatClient>(
          mock_options_from_json(config.contains("mock") ? config.at("mock") : nlohmann::json(), seed));
    }
    if (backend != "chat") throw Error(ErrorCode::InvalidConfig, "backend must be 'chat', 'mock' or 'templates'");
    if (req.has_header("X-Chat-Api-Key")) {
      chat::ChatEnvironment env;
      if (auto v = http::env("CHAT_API_BASE")) env.base_url = *v;
      return std::make_unique<chat::HttpChatClient>(env.base_url, req.get_header_value("X-Chat-Api-Key"));
    }
    return chat::chat_client_from_environment();
  }

  // POST /api/generate {spec_name | inline_spec, config}
  void generate(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    specs::BiasSpecification raw;
    if (body.contains("inline_spec")) {
      raw = specs::spec_from_json(body.at("inline_spec"));
      auto validated = specs::validate_spec(raw);
      if (auto* errors = std::get_if<specs::ValidationErrorList>(&validated)) {
        send(res, 400, {{"error", "ValidationFailed"}, {"errors", specs::to_json(*errors)}});
        return;
      }
      store::Store::check_name(raw.name);
      if (!store_.get_spec(raw.name)) store_.put_spec(raw);
    } else {
      raw = stored_spec(body.value("spec_name", std::string())).spec();
    }
    const auto spec = specs::require_valid(raw);
    const auto config_json = body.value("config", nlohmann::json::object());
    const auto backend = config_json.value("backend", std::string("chat"));

    if (backend == "templates") {
      const auto patterns = config_json.at("templates").get<std::vector<std::string>>();
      gen::fill_templates(spec, patterns);  // reject malformed patterns up front
      const auto id = jobs_.submit(
          JobKind::Generate,
          [this, spec, patterns](JobContext& ctx) {
            auto sentences = gen::fill_templates(spec, patterns);
            ctx.set_total(static_cast<long>(sentences.size()));
            const std::string run = "run-" + ctx.id();
            store_.put_dataset(run, store::make_dataset(spec.spec(), std::move(sentences), {{"source", "templates"}}));
            ctx.set_done(static_cast<long>(patterns.size()));
            store_.put_result_json(ctx.id(), {{"kind", "generate"}, {"spec_name", spec.name()}, {"run_id", run}});
            return "datasets/" + spec.name() + "/" + run;
          });
      send(res, 202, {{"job_id", id}});
      return;
    }

    auto config = generation_config_from_json(config_json);
    std::shared_ptr<chat::ChatClient> client = chat_client_for(req, config_json, config.seed);
    const long total = static_cast<long>(config.per_attribute_quota) *
                       static_cast<long>(spec->attr1_terms.size() + spec->attr2_terms.size());
    const auto id = jobs_.submit(
        JobKind::Generate,
        [this, spec, config, client, backend](JobContext& ctx) {
          const std::string run = "run-" + ctx.id();
          const std::string ref = "datasets/" + spec.name() + "/" + run;
          json meta = {{"backend", backend}, {"model", config.chat_model}, {"seed", config.seed}};
          std::vector<gen::TestSentence> accepted;
          // Each accepted sentence is written through so a backend failure
          // leaves everything gathered so far on disk.
          auto checkpoint = [&](const gen::TestSentence& s) {
            accepted.push_back(s);
            store_.put_dataset(run, store::make_dataset(spec.spec(), accepted, meta));
            ctx.set_done(static_cast<long>(accepted.size()));
          };
          try {
            auto result = gen::generate_for_spec(spec, config, *client, checkpoint);
            meta["report"] = gen::to_json(result.report);
            store_.put_dataset(run, store::make_dataset(spec.spec(), result.sentences, meta));
            store_.put_result_json(ctx.id(), {{"kind", "generate"},
                                              {"spec_name", spec.name()},
                                              {"run_id", run},
                                              {"report", gen::to_json(result.report)}});
            if (!result.report.quota_met()) throw PartialResult(ref, "quota not met for some attributes");
            return ref;
          } catch (const Error& e) {
            if (accepted.empty()) throw;
            store_.put_result_json(ctx.id(), {{"kind", "generate"},
                                              {"spec_name", spec.name()},
                                              {"run_id", run},
                                              {"error", e.what()}});
            throw PartialResult(ref, e.what());
          }
        },
        total);
    send(res, 202, {{"job_id", id}});
  }

  std::unique_ptr<scoring::Scorer> scorer_for(const nlohmann::json& j) const {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "scorer must be an object");
    auto copy = j;
    // Scorer files are looked up by name under <data>/scorers, never by an
    // arbitrary server path.
    if (copy.contains("path")) {
      const auto name = copy.at("path").get<std::string>();
      store::Store::check_name(name);
      const auto file = store_.root() / "scorers" / name;
      if (!fs::exists(file)) throw Error(ErrorCode::NotFound, "no scorer file '" + name + "' under the data directory");
      copy["path"] = file.string();
    }
    return scoring::scorer_from_json(copy);
  }

  // POST /api/biastest {spec_name, dataset_run?, scorer, k_per_attribute, replicates, seed}
  void biastest(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    const auto spec = stored_spec(body.value("spec_name", std::string()));
    const auto run = body.value("dataset_run", std::string());
    auto dataset = dataset_for(spec.name(), run);
    std::shared_ptr<scoring::Scorer> scorer = scorer_for(body.value("scorer", nlohmann::json::object()));
    const int k = body.value("k_per_attribute", 4);
    const int replicates = body.value("replicates", 30);
    const std::uint64_t seed = body.value("seed", std::uint64_t{0});
    if (k < 1 || replicates < 1) throw Error(ErrorCode::InvalidConfig, "k_per_attribute and replicates must be >= 1");
    const auto id = jobs_.submit(
        JobKind::BiasTest,
        [this, spec, dataset = std::move(dataset), scorer, k, replicates, seed](JobContext& ctx) {
          auto result = metrics::run_bias_test(dataset.sentences, spec, *scorer, k, replicates, seed);
          ctx.set_done(static_cast<long>(dataset.sentences.size()));
          store_.put_result(ctx.id(), result);
          store_.export_result(ctx.id(), result);
          return "results/" + ctx.id();
        },
        1);
    send(res, 202, {{"job_id", id}});
  }

  // POST /api/quality {spec_name, dataset_run?, seed?}
  void quality(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    const auto spec = stored_spec(body.value("spec_name", std::string()));
    auto dataset = dataset_for(spec.name(), body.value("dataset_run", std::string()));
    quality::QualityOptions qo;
    qo.seed = body.value("seed", std::uint64_t{0});
    qo.toxicity_endpoint = options_.toxicity_url;
    const auto id = jobs_.submit(
        JobKind::Quality,
        [this, name = spec.name(), dataset = std::move(dataset), qo](JobContext& ctx) {
          std::vector<std::string> texts;
          for (const auto& s : dataset.sentences) texts.push_back(s.text);
          const auto report = quality::quality_report(texts, qo);
          ctx.set_done(1);
          store_.put_result_json(ctx.id(), {{"kind", "quality"}, {"spec_name", name}, {"report", quality::to_json(report)}});
          return "results/" + ctx.id();
        },
        1);
    send(res, 202, {{"job_id", id}});
  }

  // POST /api/discover {domain_hint, backend?}
  void discover(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    const auto hint = body.value("domain_hint", std::string());
    if (text::trim(hint).empty()) throw Error(ErrorCode::InvalidConfig, "domain_hint is required");
    auto client = chat_client_for(req, body, body.value("seed", std::uint64_t{0}));
    const auto model = body.value("model", http::env("CHAT_MODEL").value_or("gpt-3.5-turbo"));
    const auto result = gen::discover_bias_candidates(hint, *client, model, body.value("temperature", 0.8));
    json drafts = json::array();
    for (const auto& d : result.drafts) {
      json entry;
      entry["spec"] = specs::to_json(d);
      auto v = specs::validate_spec(d);
      if (auto* errors = std::get_if<specs::ValidationErrorList>(&v)) {
        entry["valid"] = false;
        entry["errors"] = specs::to_json(*errors);
      } else {
        entry["valid"] = true;
        entry["errors"] = json::array();
      }
      drafts.push_back(std::move(entry));
    }
    send(res, 200, {{"drafts", drafts}, {"broad_reply", result.broad_reply}});
  }

  // GET /api/jobs/{id}
  void get_job(const httplib::Request& req, httplib::Response& res) {
    auto job = jobs_.get(req.matches[1]);
    if (!job) throw Error(ErrorCode::NotFound, "no job '" + std::string(req.matches[1]) + "'");
    send(res, 200, to_json(*job));
  }

  /// 409 while the job behind `id` is unfinished; 404 for unknown ids.
  json finished_result(const std::string& id) {
    if (auto job = jobs_.get(id); job && !finished(job->state)) {
      throw std::pair<int, json>(409, error_body(ErrorCode::InvalidConfig,
                                                 "job '" + id + "' is " + std::string(to_string(job->state))));
    }
    store::Store::check_name(id);
    auto stored = store_.get_result_json(id);
    if (!stored) {
      if (auto job = jobs_.get(id); job && job->state == JobState::Failed) {
        throw std::pair<int, json>(409, error_body(ErrorCode::InvalidConfig, "job '" + id + "' failed: " + job->error_message));
      }
      throw Error(ErrorCode::NotFound, "no result '" + id + "'");
    }
    return *stored;
  }

  void get_result(const httplib::Request& req, httplib::Response& res) {
    try {
      send(res, 200, finished_result(req.matches[1]));
    } catch (const std::pair<int, json>& conflict) {
      send(res, conflict.first, conflict.second);
    }
  }

  void export_result(const httplib::Request& req, httplib::Response& res) {
    try {
      const std::string id = req.matches[1];
      const auto stored = finished_result(id);
      if (!stored.contains("model_id")) {
        send(res, 409, error_body(ErrorCode::InvalidConfig, "result '" + id + "' is not a bias test result"));
        return;
      }
      const auto result = metrics::result_from_json(stored);
      res.status = 200;
      res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".csv\"");
      res.set_content(store::result_csv(result), "text/csv; charset=utf-8");
    } catch (const std::pair<int, json>& conflict) {
      send(res, conflict.first, conflict.second);
    }
  }

  ServiceOptions options_;
  store::Store store_;
  JobRunner jobs_;
  std::mutex server_mutex_;
  std::unique_ptr<httplib::Server> server_;
  std::thread background_;
};

}  // namespace biastest::service
