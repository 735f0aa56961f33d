#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>

#include <array>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "httplib.h"

#include "biastest/chat.hpp"
#include "biastest/datastore.hpp"
#include "biastest/genpipeline.hpp"
#include "biastest/metrics.hpp"
#include "biastest/scorers.hpp"
#include "biastest/service.hpp"
#include "biastest/textquality.hpp"
#include "support.hpp"

using namespace biastest;
using testsupport::gender_spec;
using testsupport::TempDir;
using json = nlohmann::json;

namespace {

template <typename F>
void expect_code(ErrorCode code, F&& f, const std::string& message_part = {}) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    if (!message_part.empty()) {
      EXPECT_NE(std::string(e.what()).find(message_part), std::string::npos) << e.what();
    }
  }
}

store::DatasetFile toy_file() {
  const auto spec = specs::require_valid(gender_spec());
  return store::make_dataset(gender_spec(), gen::fill_templates(spec, {"[T] likes [A]", "[T], \"really\" likes [A]"}),
                             {{"source", "templates"}});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- datastore -----------------------------------------------------------

TEST(Datastore, RoundTrip) {
  TempDir dir;
  auto d = toy_file();
  d.created_at = "2024-01-01T00:00:00Z";
  store::save(d, dir / "nested/run.jsonl");
  const auto back = store::load(dir / "nested/run.jsonl");
  EXPECT_EQ(back, d);
  EXPECT_EQ(store::serialize(back), slurp(dir / "nested/run.jsonl"));
}

TEST(Datastore, SchemaViolationNamesRecord) {
  auto d = toy_file();
  auto text = store::serialize(d);
  auto lines = std::vector<std::string>{};
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto record = json::parse(lines[3]);
  record.erase("attribute_term");
  lines[3] = record.dump();
  std::string broken;
  for (const auto& l : lines) broken += l + "\n";
  expect_code(ErrorCode::SchemaViolation, [&] { store::parse_dataset(broken, "x.jsonl"); }, "x.jsonl:4: record 2");

  auto wrong = json::parse(lines[1]);
  wrong["text"] = "nothing relevant here";
  lines = {lines[0], wrong.dump()};
  expect_code(ErrorCode::SchemaViolation, [&] { store::parse_dataset(lines[0] + "\n" + lines[1] + "\n"); }, "record 0");
}

TEST(Datastore, UnknownFormatVersion) {
  auto d = toy_file();
  auto text = store::serialize(d);
  auto header = json::parse(text.substr(0, text.find('\n')));
  header["format_version"] = 7;
  expect_code(ErrorCode::SchemaViolation, [&] { store::parse_dataset(header.dump() + "\n"); }, "format_version 7");
  expect_code(ErrorCode::SchemaViolation, [&] { store::parse_dataset(""); });
}

TEST(Datastore, Merge) {
  const auto d = toy_file();
  auto a = d, b = d;
  a.sentences.resize(10);
  b.sentences.erase(b.sentences.begin(), b.sentences.begin() + 10);
  const auto both = store::merge(a, b);
  EXPECT_EQ(both.sentences.size(), a.sentences.size() + b.sentences.size());
  EXPECT_EQ(both.sentences, d.sentences);
  EXPECT_EQ(store::merge(d, d).sentences, d.sentences);
  EXPECT_EQ(store::merge(both, a).sentences, both.sentences);
  auto other = d;
  other.spec.name = "other";
  expect_code(ErrorCode::SpecMismatch, [&] { store::merge(d, other); });
}

TEST(Datastore, CsvQuoting) {
  EXPECT_EQ(store::csv::quote("plain"), "plain");
  EXPECT_EQ(store::csv::quote("a,b"), "\"a,b\"");
  EXPECT_EQ(store::csv::quote("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(store::csv::row({"a", "b\nc"}), "a,\"b\nc\"\r\n");
  const auto rows = store::csv::parse("x,\"y,\"\"z\"\"\"\r\n\"multi\nline\",\nlast,row\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"x", "y,\"z\""}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"multi\nline", ""}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"last", "row"}));
}

TEST(Datastore, DatasetCsvRoundTrip) {
  const auto d = toy_file();
  const auto csv = store::dataset_csv(d);
  const auto rows = store::csv::parse(csv);
  ASSERT_EQ(rows.size(), d.sentences.size() + 1);
  EXPECT_EQ(rows[0], store::dataset_csv_columns());
  EXPECT_EQ(store::sentences_from_csv(csv), d.sentences);

  auto empty = d;
  empty.sentences.clear();
  EXPECT_EQ(store::csv::parse(store::dataset_csv(empty)).size(), 1u);
}

TEST(Datastore, ResultCsv) {
  const auto spec = specs::require_valid(gender_spec());
  const auto data = gen::fill_templates(spec, {"[T] likes [A]"});
  scoring::TableScorer flat("flat", {}, -1.0);
  const auto r = metrics::run_bias_test(data, spec, flat, 2, 3, 0);
  const auto rows = store::csv::parse(store::result_csv(r));
  EXPECT_EQ(rows[0], store::result_csv_columns());
  EXPECT_EQ(rows.size(), 1 + data.size() + 3 * 2 * 4);
  EXPECT_EQ(rows[1][0], "toy_gender");
  EXPECT_EQ(rows[1][7], "tie");
  EXPECT_EQ(rows[1][9], "");
  EXPECT_EQ(rows.back()[9], "2");
}

TEST(Datastore, Store) {
  TempDir dir;
  store::Store s(dir.path());
  s.put_spec(gender_spec());
  EXPECT_EQ(s.list_specs(), std::vector<std::string>{"toy_gender"});
  EXPECT_EQ(*s.get_spec("toy_gender"), gender_spec());
  EXPECT_FALSE(s.get_spec("nope"));
  expect_code(ErrorCode::InvalidConfig, [&] { s.get_spec("../etc"); });

  auto d = toy_file();
  auto first = d, second = d;
  first.sentences.resize(4);
  second.sentences.erase(second.sentences.begin(), second.sentences.begin() + 2);
  s.put_dataset("r1", first);
  s.put_dataset("r2", second);
  EXPECT_EQ(s.list_runs("toy_gender"), (std::vector<std::string>{"r1", "r2"}));
  EXPECT_EQ(s.merged_dataset("toy_gender")->sentences, d.sentences);
  expect_code(ErrorCode::NotFound, [&] { s.get_dataset("toy_gender", "r9"); });
  EXPECT_FALSE(s.merged_dataset("empty"));
}

// --- remote backends -----------------------------------------------------

namespace {

class LocalServer {
 public:
  explicit LocalServer(const std::function<void(httplib::Server&)>& setup) {
    setup(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

http::PostOptions quick() {
  http::PostOptions o;
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(2);
  return o;
}

// A port held by a socket that never listens, so connects are refused.
std::string dead_url() {
  static const int port = [] {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    return static_cast<int>(ntohs(addr.sin_port));
  }();
  return "http://127.0.0.1:" + std::to_string(port);
}

}  // namespace

TEST(Remote, ScorerProtocol) {
  json seen;
  std::atomic<int> calls{0};
  LocalServer server([&](httplib::Server& s) {
    s.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
      if (calls++ == 0) {
        res.status = 503;
        return;
      }
      seen = json::parse(req.body);
      json scores = json::array();
      for (const auto& t : seen["sentences"]) scores.push_back({{"log_likelihood", -double(t.get<std::string>().size())}, {"token_count", 2}});
      res.set_content(json{{"scores", scores}}.dump(), "application/json");
    });
  });
  scoring::RemoteScorer scorer(server.url() + "/v1", "gpt2", scoring::Normalization::PerTokenMean, quick());
  const std::string texts[] = {"ab", "abcd"};
  const auto out = scorer.score(texts);
  EXPECT_EQ(calls.load(), 2);
  EXPECT_EQ(seen["model"], "gpt2");
  EXPECT_EQ(seen["normalization"], "per_token_mean");
  EXPECT_EQ(seen["sentences"], json({"ab", "abcd"}));
  EXPECT_DOUBLE_EQ(out[1].log_likelihood, -4.0);
  EXPECT_EQ(out[1].token_count, 2);
}

TEST(Remote, UnreachableScorerAndToxicity) {
  const auto url = dead_url();
  scoring::RemoteScorer scorer(url, "m", scoring::Normalization::JointSum, quick());
  const std::string texts[] = {"a"};
  expect_code(ErrorCode::BackendUnavailable, [&] { scorer.score(texts); });
  expect_code(ErrorCode::BackendUnavailable, [&] { quality::toxicity({"a"}, url); });
  quality::QualityOptions qo;
  qo.toxicity_endpoint = url;
  const auto r = quality::quality_report({"A fine day."}, qo);
  EXPECT_FALSE(r.toxicity_mean);
  EXPECT_NE(r.toxicity_note.find("unreachable"), std::string::npos);
}

TEST(Remote, Toxicity) {
  LocalServer server([](httplib::Server& s) {
    s.Post("/toxicity", [](const httplib::Request& req, httplib::Response& res) {
      const auto texts = json::parse(req.body).at("texts");
      json scores = json::array();
      for (const auto& t : texts) scores.push_back(t.get<std::string>().find("awful") != std::string::npos ? 0.9 : 0.1);
      res.set_content(json{{"scores", scores}}.dump(), "application/json");
    });
  });
  quality::QualityOptions qo;
  qo.toxicity_endpoint = server.url();
  const auto r = quality::quality_report({"An awful remark.", "A kind remark."}, qo);
  ASSERT_TRUE(r.toxicity_mean);
  EXPECT_NEAR(*r.toxicity_mean, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(*r.toxic_fraction_at_0_5, 0.5);
}

TEST(Remote, ChatRequestShape) {
  json seen;
  std::string auth;
  LocalServer server([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      seen = json::parse(req.body);
      auth = req.get_header_value("Authorization");
      res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"one"}},)"
                      R"({"message":{"role":"assistant","content":"two"}}]})",
                      "application/json");
    });
  });
  chat::HttpChatClient client(server.url() + "/v1", "sk-test");
  chat::ChatRequest req{"gpt-x", 0.5, 2, {{"system", "be brief"}, {"user", "hello"}}};
  EXPECT_EQ(client.complete(req), (std::vector<std::string>{"one", "two"}));
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["model"], "gpt-x");
  EXPECT_EQ(seen["n"], 2);
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][1]["content"], "hello");

  chat::HttpChatClient dead(dead_url(), "k", std::chrono::seconds(1));
  expect_code(ErrorCode::ChatBackendUnavailable, [&] { dead.complete(req); });
}

// --- service -------------------------------------------------------------

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(dir_ / "scorers");
    std::filesystem::copy_file(testsupport::data_dir() / "scorers/constant.json", dir_ / "scorers/constant.json");
    service::ServiceOptions o;
    o.data_dir = dir_.path();
    o.workers = 2;
    svc_ = std::make_unique<service::Service>(o);
    port_ = svc_->start_background();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override { svc_.reset(); }

  std::pair<int, json> post(const std::string& path, const json& body, const httplib::Headers& headers = {}) {
    auto res = client_->Post(path, headers, body.dump(), "application/json");
    if (!res) return {0, json()};
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
  std::pair<int, std::string> get(const std::string& path) {
    auto res = client_->Get(path);
    if (!res) return {0, ""};
    return {res->status, res->body};
  }
  service::Job wait(const std::string& id) {
    auto job = svc_->jobs().wait(id, std::chrono::seconds(60));
    EXPECT_TRUE(job);
    return *job;
  }
  void add_spec() { ASSERT_EQ(post("/api/specs", specs::to_json(gender_spec())).first, 201); }

  std::string generate_templates() {
    auto [status, body] = post("/api/generate", {{"spec_name", "toy_gender"},
                                                 {"config", {{"backend", "templates"}, {"templates", {"[T] likes [A]"}}}}});
    EXPECT_EQ(status, 202);
    const std::string id = body.at("job_id");
    EXPECT_EQ(wait(id).state, service::JobState::Done);
    return id;
  }

  TempDir dir_;
  std::unique_ptr<service::Service> svc_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, SpecValidationListsEveryError) {
  auto bad = specs::to_json(gender_spec());
  bad["group2_terms"] = {"she"};
  bad["attr1_terms"] = {"math", "Math"};
  auto [status, body] = post("/api/specs", bad);
  EXPECT_EQ(status, 400);
  EXPECT_EQ(body["error"], "ValidationFailed");
  std::set<std::string> codes;
  for (const auto& e : body["errors"]) codes.insert(e.at("code").get<std::string>());
  EXPECT_TRUE(codes.count("UnequalGroupLengths"));
  EXPECT_TRUE(codes.count("DuplicateTerm"));

  add_spec();
  auto [list_status, list] = get("/api/specs");
  EXPECT_EQ(list_status, 200);
  EXPECT_EQ(json::parse(list).size(), 1u);
  EXPECT_EQ(get("/api/specs/toy_gender").first, 200);
  EXPECT_EQ(get("/api/specs/missing").first, 404);
}

TEST_F(ServiceTest, ApiKeyInBodyIsRejected) {
  add_spec();
  auto [status, body] = post("/api/generate", {{"spec_name", "toy_gender"}, {"config", {{"backend", "mock"}, {"api_key", "sk-x"}}}});
  EXPECT_EQ(status, 400);
  EXPECT_EQ(body["message"].get<std::string>().find("sk-x"), std::string::npos);
}

TEST_F(ServiceTest, TemplatesThenBiasTestThenExport) {
  add_spec();
  generate_templates();
  auto [sstatus, sentences] = get("/api/specs/toy_gender/sentences");
  EXPECT_EQ(sstatus, 200);
  EXPECT_EQ(json::parse(sentences)["count"], 16);

  auto [status, body] = post("/api/biastest", {{"spec_name", "toy_gender"},
                                                {"scorer", {{"kind", "table"}, {"path", "constant.json"}}},
                                                {"k_per_attribute", 2},
                                                {"replicates", 5},
                                                {"seed", 3}});
  ASSERT_EQ(status, 202);
  const std::string id = body.at("job_id");
  const auto job = wait(id);
  ASSERT_EQ(job.state, service::JobState::Done) << job.error_message;
  auto [rstatus, result] = get("/api/results/" + id);
  ASSERT_EQ(rstatus, 200);
  const auto r = json::parse(result);
  EXPECT_DOUBLE_EQ(r["overall_ss"].get<double>(), 50.0);
  EXPECT_EQ(r["bootstrap"]["replicate_ss"].size(), 5u);

  auto [cstatus, csv] = get("/api/results/" + id + "/export.csv");
  EXPECT_EQ(cstatus, 200);
  EXPECT_EQ(store::csv::parse(csv)[0], store::result_csv_columns());
  EXPECT_TRUE(std::filesystem::exists(dir_ / ("exports/" + id + ".csv")));

  auto [jstatus, jbody] = get("/api/jobs/" + id);
  EXPECT_EQ(jstatus, 200);
  EXPECT_EQ(json::parse(jbody)["state"], "done");
}

TEST_F(ServiceTest, ResultStatuses) {
  EXPECT_EQ(get("/api/results/j000000000999").first, 404);
  EXPECT_EQ(get("/api/jobs/j000000000999").first, 404);

  std::promise<void> release;
  auto gate = release.get_future().share();
  const auto id = svc_->jobs().submit(service::JobKind::Quality, [gate](service::JobContext&) {
    gate.wait();
    return std::string("results/none");
  });
  EXPECT_EQ(get("/api/results/" + id).first, 409);
  release.set_value();
  wait(id);

  add_spec();
  const auto gen_id = generate_templates();
  EXPECT_EQ(get("/api/results/" + gen_id).first, 200);
  EXPECT_EQ(get("/api/results/" + gen_id + "/export.csv").first, 409);

  const auto failing = svc_->jobs().submit(service::JobKind::Quality, [](service::JobContext&) -> std::string {
    throw Error(ErrorCode::EmptyDataset, "nothing");
  });
  EXPECT_EQ(wait(failing).state, service::JobState::Failed);
  EXPECT_EQ(get("/api/results/" + failing).first, 409);
}

TEST_F(ServiceTest, MockGenerationDoneAndPartial) {
  add_spec();
  auto [status, body] = post("/api/generate", {{"spec_name", "toy_gender"},
                                                {"config", {{"backend", "mock"},
                                                            {"quota", 2},
                                                            {"max_tries", 10},
                                                            {"seed", 4},
                                                            {"pair_mode", "deterministic"}}}});
  ASSERT_EQ(status, 202);
  auto job = wait(body.at("job_id"));
  EXPECT_EQ(job.state, service::JobState::Done) << job.error_message;
  const auto result = json::parse(get("/api/results/" + job.id).second);
  EXPECT_EQ(result["kind"], "generate");
  EXPECT_EQ(result["report"]["accepted"].get<long>() >= 8, true);
  const auto run = result["run_id"].get<std::string>();
  EXPECT_EQ(svc_->store().get_dataset("toy_gender", run).sentences.size(), 8u);

  auto [pstatus, pbody] = post("/api/generate", {{"spec_name", "toy_gender"},
                                                  {"config", {{"backend", "mock"},
                                                              {"quota", 2},
                                                              {"max_tries", 2},
                                                              {"mock", {{"refusal_rate", 1.0}}}}}});
  ASSERT_EQ(pstatus, 202);
  EXPECT_EQ(wait(pbody.at("job_id")).state, service::JobState::Partial);
}

TEST_F(ServiceTest, QualityAndDiscover) {
  add_spec();
  generate_templates();
  auto [status, body] = post("/api/quality", {{"spec_name", "toy_gender"}});
  ASSERT_EQ(status, 202);
  const auto job = wait(body.at("job_id"));
  ASSERT_EQ(job.state, service::JobState::Done) << job.error_message;
  const auto r = json::parse(get("/api/results/" + job.id).second);
  EXPECT_EQ(r["report"]["sentence_count"], 16);
  EXPECT_TRUE(r["report"]["toxicity_mean"].is_null());

  auto [dstatus, drafts] = post("/api/discover", {{"domain_hint", "hospital staff"}, {"backend", "mock"}});
  EXPECT_EQ(dstatus, 200);
  ASSERT_FALSE(drafts["drafts"].empty());
  EXPECT_TRUE(drafts["drafts"][0].contains("valid"));
  EXPECT_EQ(post("/api/discover", {{"domain_hint", " "}, {"backend", "mock"}}).first, 400);
}

TEST_F(ServiceTest, ChatBackendWithoutKeyIs502) {
  add_spec();
  unsetenv("CHAT_API_KEY");
  auto [status, body] = post("/api/generate", {{"spec_name", "toy_gender"}, {"config", {{"backend", "chat"}}}});
  EXPECT_EQ(status, 502);
  EXPECT_EQ(body["error"], "ChatBackendUnavailable");
}

TEST_F(ServiceTest, Cors) {
  auto res = client_->Options("/api/specs");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Headers").find("X-Chat-Api-Key"), std::string::npos);
}

// --- command line --------------------------------------------------------

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + std::string(BIASTEST_CLI) + "\" " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto specs_dir = testsupport::data_dir() / "specs";
  EXPECT_EQ(cli("specs validate " + q(specs_dir / "gender_science_arts.json")).code, 0);
  auto bad = specs::to_json(gender_spec());
  bad["group2_terms"] = {"she"};
  std::ofstream(dir / "bad.json") << bad.dump();
  const auto invalid = cli("specs validate " + q(dir / "bad.json"));
  EXPECT_EQ(invalid.code, 1);
  EXPECT_NE(invalid.output.find("UnequalGroupLengths"), std::string::npos);
  EXPECT_EQ(cli("no-such-command").code, 1);
  const auto nokey = cli("generate --spec " + q(specs_dir / "gender_science_arts.json") + " --out " + q(dir / "o.jsonl"),
                         "env -u CHAT_API_KEY");
  EXPECT_EQ(nokey.code, 2);
  EXPECT_NE(nokey.output.find("CHAT_API_KEY"), std::string::npos);
  EXPECT_EQ(cli("specs list --dir " + q(specs_dir)).code, 0);
}

TEST(Cli, TemplatesTestCompare) {
  TempDir dir;
  const auto spec_file = dir / "toy.json";
  specs::save_spec_file(gender_spec(), spec_file.string());
  std::ofstream(dir / "t.txt") << "[T] likes [A]\n[T] enjoys [A]\n";
  ASSERT_EQ(cli("templates --spec " + q(spec_file) + " --templates " + q(dir / "t.txt") + " --out " + q(dir / "d.jsonl")).code, 0);

  // table preferring every stereotype-side sentence
  const auto data = store::load(dir / "d.jsonl");
  const auto pairs = metrics::make_pairs(data.sentences, specs::require_valid(data.spec));
  json scores = json::object();
  for (const auto& p : pairs) {
    scores[p.stereotype_text] = -1.0;
    scores[p.antistereotype_text] = -2.0;
  }
  std::ofstream(dir / "stereo.json") << json{{"model_id", "stereo"}, {"scores", scores}}.dump();

  const auto run = cli("test --spec " + q(spec_file) + " --dataset " + q(dir / "d.jsonl") + " --scorer table:" +
                       q(dir / "stereo.json") + " --k 2 --replicates 4 --out " + q(dir / "a.json") + " --export " +
                       q(dir / "a.csv"));
  ASSERT_EQ(run.code, 0) << run.output;
  EXPECT_NE(run.output.find("SS 100.0"), std::string::npos) << run.output;
  EXPECT_EQ(store::csv::parse(slurp(dir / "a.csv"))[0], store::result_csv_columns());

  const auto cmp = cli("compare --a " + q(dir / "a.json") + " --b " + q(dir / "a.json"));
  ASSERT_EQ(cmp.code, 0) << cmp.output;
  const auto out = json::parse(cmp.output);
  EXPECT_TRUE(out["welch_ttest"].contains("notice"));
  EXPECT_DOUBLE_EQ(out["per_attribute"]["mean_difference"].get<double>(), 0.0);

  const auto quality = cli("quality --json --dataset " + q(dir / "d.jsonl"));
  ASSERT_EQ(quality.code, 0) << quality.output;
  EXPECT_EQ(json::parse(quality.output)["sentence_count"], 32);

  EXPECT_EQ(cli("test --spec " + q(spec_file) + " --dataset " + q(dir / "missing.jsonl") + " --scorer table:" +
                q(dir / "stereo.json")).code,
            1);
}

TEST(Cli, MockGenerate) {
  TempDir dir;
  const auto spec_file = dir / "toy.json";
  specs::save_spec_file(gender_spec(), spec_file.string());
  const auto run = cli("generate --mock --quota 2 --max-tries 10 --seed 3 --omission-rate 0.3 --spec " + q(spec_file) +
                       " --out " + q(dir / "g.jsonl"));
  ASSERT_EQ(run.code, 0) << run.output;
  const auto d = store::load(dir / "g.jsonl");
  EXPECT_EQ(d.sentences.size(), 8u);
  for (const auto& s : d.sentences) EXPECT_FALSE(gen::check_sentence(s));
}
