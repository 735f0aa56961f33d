// biastest command line: specification management, sentence generation and
// template filling, bias tests, quality reports, result comparison and the
// HTTP service.
//
// Exit codes: 0 success, 1 validation or usage error, 2 backend failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "biastest/chat.hpp"
#include "biastest/datastore.hpp"
#include "biastest/genpipeline.hpp"
#include "biastest/metrics.hpp"
#include "biastest/scorers.hpp"
#include "biastest/service.hpp"
#include "biastest/specs.hpp"
#include "biastest/textquality.hpp"

namespace fs = std::filesystem;
using namespace biastest;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;

void print_issues(const specs::ValidationErrorList& errors) {
  for (const auto& e : errors) std::cerr << "  " << to_string(e.code) << ": " << e.message << '\n';
}

/// Loads and validates a spec file, printing every problem on failure.
std::optional<specs::ValidatedSpec> load_valid_spec(const std::string& path) {
  auto raw = specs::load_spec_file(path);
  auto v = specs::validate_spec(raw);
  if (auto* errors = std::get_if<specs::ValidationErrorList>(&v)) {
    std::cerr << path << ": invalid specification\n";
    print_issues(*errors);
    return std::nullopt;
  }
  return std::get<specs::ValidatedSpec>(std::move(v));
}

std::string format_ss(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

void write_file(const std::string& path, const std::string& data) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << data;
}

// --- specs ---------------------------------------------------------------

int specs_list(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto s = specs::load_spec_file(f.string());
    std::cout << s.name << "\t" << s.group1_label << " vs " << s.group2_label << "\t" << s.attr1_label << " / "
              << s.attr2_label << "\t" << specs::to_string(s.source) << '\n';
  }
  return kExitOk;
}

int specs_validate(const std::string& file) {
  auto spec = load_valid_spec(file);
  if (!spec) return kExitValidation;
  for (const auto& w : spec->warnings()) std::cerr << "warning: " << to_string(w.code) << ": " << w.message << '\n';
  std::cout << spec->name() << ": valid\n";
  return kExitOk;
}

int specs_add(const std::string& file, const std::string& dir) {
  auto spec = load_valid_spec(file);
  if (!spec) return kExitValidation;
  store::Store::check_name(spec->name());
  const auto target = fs::path(dir) / (spec->name() + ".json");
  fs::create_directories(dir);
  specs::save_spec_file(spec->spec(), target.string());
  std::cout << "added " << target.string() << '\n';
  return kExitOk;
}

// --- generate / templates ------------------------------------------------

struct GenerateArgs {
  std::string spec;
  std::string out;
  int quota = 2;
  int batch = 5;
  int max_tries = 40;
  int concurrency = 4;
  double temperature = 0.8;
  std::uint64_t seed = 0;
  std::string pair_mode = "chat";
  std::string model;
  bool mock = false;
  double omission_rate = 0.0;
  double refusal_rate = 0.0;
  double bad_rewrite_rate = 0.0;
};

int run_generate(const GenerateArgs& a) {
  auto spec = load_valid_spec(a.spec);
  if (!spec) return kExitValidation;
  nlohmann::json cfg = {{"per_attribute_quota", a.quota}, {"batch_size", a.batch},   {"max_tries", a.max_tries},
                        {"concurrency_limit", a.concurrency}, {"temperature", a.temperature}, {"seed", a.seed},
                        {"pair_mode", a.pair_mode}};
  std::unique_ptr<chat::ChatClient> client;
  std::string backend;
  if (a.mock) {
    backend = "mock";
    client = std::make_unique<chat::MockChatClient>(service::mock_options_from_json(
        nlohmann::json{{"omission_rate", a.omission_rate},
                       {"refusal_rate", a.refusal_rate},
                       {"bad_rewrite_rate", a.bad_rewrite_rate}},
        a.seed));
    cfg["model"] = a.model.empty() ? std::string("mock") : a.model;
  } else {
    backend = "chat";
    const auto env = chat::chat_environment();  // throws with guidance when the key is missing
    client = std::make_unique<chat::HttpChatClient>(env.base_url, env.api_key);
    cfg["model"] = a.model.empty() ? env.model : a.model;
  }
  auto config = service::generation_config_from_json(cfg);
  config.clock = [] { return store::created_at_now(); };

  auto result = gen::generate_for_spec(*spec, config, *client);
  nlohmann::ordered_json meta = {{"backend", backend}, {"model", config.chat_model}, {"seed", config.seed},
                                 {"report", gen::to_json(result.report)}};
  store::save(store::make_dataset(spec->spec(), result.sentences, meta), a.out);
  std::cout << gen::to_json(result.report).dump(2) << '\n';
  std::cerr << "wrote " << result.sentences.size() << " sentences to " << a.out << '\n';
  if (!result.report.quota_met()) {
    std::cerr << "warning: quota not met for";
    for (const auto& s : result.report.quota_shortfalls) std::cerr << " '" << s << "'";
    std::cerr << '\n';
  }
  return kExitOk;
}

int run_templates(const std::string& spec_file, const std::string& templates_file, const std::string& out) {
  auto spec = load_valid_spec(spec_file);
  if (!spec) return kExitValidation;
  const auto patterns = gen::load_template_file(templates_file);
  auto sentences = gen::fill_templates(*spec, patterns);
  const auto n = sentences.size();
  store::save(store::make_dataset(spec->spec(), std::move(sentences), {{"source", "templates"}}), out);
  std::cout << "wrote " << n << " sentences from " << patterns.size() << " templates to " << out << '\n';
  return kExitOk;
}

// --- test ----------------------------------------------------------------

struct TestArgs {
  std::string spec;
  std::string dataset;
  std::string scorer;
  std::string model_id;
  std::string normalization = "joint_sum";
  int k = 4;
  int replicates = 30;
  std::uint64_t seed = 0;
  std::string out;
  std::string export_csv;
};

int run_test(const TestArgs& a) {
  auto spec = load_valid_spec(a.spec);
  if (!spec) return kExitValidation;
  const auto dataset = store::load(a.dataset);
  if (dataset.spec.name != spec->name()) {
    throw Error(ErrorCode::SpecMismatch,
                "dataset belongs to '" + dataset.spec.name + "', not '" + spec->name() + "'");
  }
  std::string uri = a.scorer;
  if (uri.empty()) uri = http::env("SCORER_URL").value_or("");
  if (uri.empty()) throw Error(ErrorCode::InvalidConfig, "no scorer given; pass --scorer or set SCORER_URL");
  const auto scorer = scoring::scorer_from_uri(uri, a.model_id, scoring::parse_normalization(a.normalization));
  const auto result = metrics::run_bias_test(dataset.sentences, *spec, *scorer, a.k, a.replicates, a.seed);

  std::cout << "spec " << result.spec_name << "  model " << result.model_id << "  pairs " << result.pair_count << '\n';
  std::cout << "SS " << format_ss(result.overall_ss) << '\n';
  for (const auto& [attr, ss] : result.per_attribute_ss) std::cout << "  " << attr << "\t" << format_ss(ss) << '\n';
  if (result.bootstrap) {
    std::cout << "bootstrap k=" << result.bootstrap->k_per_attribute << " R=" << result.bootstrap->replicates
              << " seed=" << result.bootstrap->seed << ": mean " << format_ss(result.bootstrap->mean_ss) << " sd "
              << format_ss(result.bootstrap->sd_ss) << '\n';
    for (const auto& w : result.bootstrap->warnings) std::cerr << "warning: " << w << '\n';
  }
  if (!a.out.empty()) write_file(a.out, metrics::to_json(result).dump(2) + "\n");
  if (!a.export_csv.empty()) store::export_csv(result, a.export_csv);
  return kExitOk;
}

// --- quality -------------------------------------------------------------

int run_quality(const std::string& dataset_file, std::uint64_t seed, bool as_json, const std::string& toxicity_url,
                const std::string& lexicon) {
  const auto dataset = store::load(dataset_file);
  std::vector<std::string> texts;
  for (const auto& s : dataset.sentences) texts.push_back(s.text);
  quality::QualityOptions o;
  o.seed = seed;
  if (!lexicon.empty()) o.lexicon = quality::load_lexicon(lexicon);
  if (!toxicity_url.empty()) o.toxicity_endpoint = toxicity_url;
  else o.toxicity_endpoint = http::env("TOXICITY_URL");
  const auto report = quality::quality_report(texts, o);
  if (as_json) std::cout << quality::to_json(report).dump(2) << '\n';
  else std::cout << quality::summary_text(report);
  return kExitOk;
}

// --- compare -------------------------------------------------------------

int run_compare(const std::string& a_file, const std::string& b_file) {
  const auto a = metrics::result_from_json(scoring::read_json_file(a_file));
  const auto b = metrics::result_from_json(scoring::read_json_file(b_file));
  nlohmann::ordered_json out;
  out["a"] = {{"model_id", a.model_id}, {"overall_ss", a.overall_ss}};
  out["b"] = {{"model_id", b.model_id}, {"overall_ss", b.overall_ss}};

  if (!a.bootstrap || !b.bootstrap) {
    throw Error(ErrorCode::SampleTooSmall, "both results need bootstrap replicates for a t-test");
  }
  try {
    out["welch_ttest"] = metrics::to_json(metrics::welch_ttest(a.bootstrap->replicate_ss, b.bootstrap->replicate_ss));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateVariance) throw;
    out["welch_ttest"] = {{"notice", e.what()}};
  }

  std::vector<double> xa, xb;
  std::vector<std::string> shared;
  for (const auto& [attr, ss] : a.per_attribute_ss) {
    if (auto it = b.per_attribute_ss.find(attr); it != b.per_attribute_ss.end()) {
      shared.push_back(attr);
      xa.push_back(ss);
      xb.push_back(it->second);
    }
  }
  out["shared_attributes"] = shared;
  try {
    out["per_attribute"] = metrics::to_json(metrics::compare_estimates(xa, xb));
  } catch (const Error& e) {
    out["per_attribute"] = {{"notice", e.what()}};
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

// --- serve ---------------------------------------------------------------

int run_serve(const std::string& host, int port, const std::string& data_dir, const std::string& specs_dir,
              int workers) {
  auto options = service::options_from_environment();
  if (!data_dir.empty()) options.data_dir = data_dir;
  if (!specs_dir.empty()) options.seed_specs_dir = specs_dir;
  options.workers = workers;
  options.log_requests = true;
  if (port <= 0) port = std::atoi(http::env("BIASTEST_PORT").value_or("8080").c_str());
  service::Service svc(options);
  std::cerr << "serving on http://" << host << ":" << port << "/api (data in " << options.data_dir.string() << ")\n";
  if (!svc.listen(host, port)) {
    std::cerr << "cannot listen on " << host << ":" << port << '\n';
    return kExitBackend;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate stereotype test sentences and measure social bias in language models"};
  app.require_subcommand(1);

  // specs
  auto* specs_cmd = app.add_subcommand("specs", "Manage bias specifications");
  specs_cmd->require_subcommand(1);
  std::string specs_dir = "data/specs";
  std::string spec_file;
  auto* specs_list_cmd = specs_cmd->add_subcommand("list", "List specifications in a directory");
  specs_list_cmd->add_option("--dir", specs_dir, "Specification directory")->capture_default_str();
  auto* specs_add_cmd = specs_cmd->add_subcommand("add", "Validate a specification and copy it into a directory");
  specs_add_cmd->add_option("file", spec_file, "Specification JSON")->required();
  specs_add_cmd->add_option("--dir", specs_dir, "Specification directory")->capture_default_str();
  auto* specs_validate_cmd = specs_cmd->add_subcommand("validate", "Validate a specification file");
  specs_validate_cmd->add_option("file", spec_file, "Specification JSON")->required();

  // generate
  GenerateArgs g;
  auto* gen_cmd = app.add_subcommand("generate", "Generate test sentences with a chat backend");
  gen_cmd->add_option("--spec", g.spec, "Specification JSON")->required();
  gen_cmd->add_option("--out", g.out, "Output dataset (.jsonl)")->required();
  gen_cmd->add_option("--quota", g.quota, "Sentences per attribute term")->capture_default_str();
  gen_cmd->add_option("--batch", g.batch, "Completions per chat call")->capture_default_str();
  gen_cmd->add_option("--max-tries", g.max_tries, "Attempts per attribute term")->capture_default_str();
  gen_cmd->add_option("--concurrency", g.concurrency, "Parallel rewrite calls")->capture_default_str();
  gen_cmd->add_option("--temperature", g.temperature, "Sampling temperature")->capture_default_str();
  gen_cmd->add_option("--seed", g.seed, "Seed for group-term choice and the mock")->capture_default_str();
  gen_cmd->add_option("--pair-mode", g.pair_mode, "chat or deterministic")
      ->check(CLI::IsMember({"chat", "deterministic"}))
      ->capture_default_str();
  gen_cmd->add_option("--model", g.model, "Chat model (default CHAT_MODEL)");
  gen_cmd->add_flag("--mock", g.mock, "Use the offline mock chat backend");
  gen_cmd->add_option("--omission-rate", g.omission_rate, "Mock: share of replies missing a term");
  gen_cmd->add_option("--refusal-rate", g.refusal_rate, "Mock: share of refusals");
  gen_cmd->add_option("--bad-rewrite-rate", g.bad_rewrite_rate, "Mock: share of unchanged rewrites");

  // templates
  std::string tpl_spec, tpl_file, tpl_out;
  auto* tpl_cmd = app.add_subcommand("templates", "Fill sentence templates for a specification");
  tpl_cmd->add_option("--spec", tpl_spec, "Specification JSON")->required();
  tpl_cmd->add_option("--templates", tpl_file, "Template file, one pattern with [T] and [A] per line")->required();
  tpl_cmd->add_option("--out", tpl_out, "Output dataset (.jsonl)")->required();

  // test
  TestArgs t;
  auto* test_cmd = app.add_subcommand("test", "Score a dataset and report the Stereotype Score");
  test_cmd->add_option("--spec", t.spec, "Specification JSON")->required();
  test_cmd->add_option("--dataset", t.dataset, "Dataset (.jsonl)")->required();
  test_cmd->add_option("--scorer", t.scorer, "URL, table:FILE or unigram:FILE (default SCORER_URL)");
  test_cmd->add_option("--model-id", t.model_id, "Model id recorded in the result");
  test_cmd->add_option("--normalization", t.normalization, "joint_sum or per_token_mean")
      ->check(CLI::IsMember({"joint_sum", "per_token_mean"}))
      ->capture_default_str();
  test_cmd->add_option("--k", t.k, "Sentences per attribute term per replicate")->capture_default_str();
  test_cmd->add_option("--replicates", t.replicates, "Bootstrap replicates")->capture_default_str();
  test_cmd->add_option("--seed", t.seed, "Bootstrap seed")->capture_default_str();
  test_cmd->add_option("--out", t.out, "Write the result JSON here");
  test_cmd->add_option("--export", t.export_csv, "Write the result CSV here");

  // quality
  std::string q_dataset, q_toxicity, q_lexicon;
  std::uint64_t q_seed = 0;
  bool q_json = false;
  auto* q_cmd = app.add_subcommand("quality", "Dataset quality statistics");
  q_cmd->add_option("--dataset", q_dataset, "Dataset (.jsonl)")->required();
  q_cmd->add_option("--seed", q_seed, "Sampling seed for the unique-token statistic")->capture_default_str();
  q_cmd->add_option("--toxicity-url", q_toxicity, "Toxicity classifier endpoint (default TOXICITY_URL)");
  q_cmd->add_option("--lexicon", q_lexicon, "Sentiment lexicon TSV (default: the built-in lexicon)");
  q_cmd->add_flag("--json", q_json, "Print JSON");

  // compare
  std::string cmp_a, cmp_b;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare two bias test results");
  cmp_cmd->add_option("--a", cmp_a, "First result JSON")->required();
  cmp_cmd->add_option("--b", cmp_b, "Second result JSON")->required();

  // serve
  std::string host = "127.0.0.1", data_dir, serve_specs = "data/specs";
  int port = 0, workers = 2;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--host", host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", port, "Port (default BIASTEST_PORT or 8080)");
  serve_cmd->add_option("--data-dir", data_dir, "Data directory (default BIASTEST_DATA_DIR)");
  serve_cmd->add_option("--specs-dir", serve_specs, "Specifications copied into the store at startup")
      ->capture_default_str();
  serve_cmd->add_option("--workers", workers, "Job worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*specs_list_cmd) return specs_list(specs_dir);
    if (*specs_add_cmd) return specs_add(spec_file, specs_dir);
    if (*specs_validate_cmd) return specs_validate(spec_file);
    if (*gen_cmd) return run_generate(g);
    if (*tpl_cmd) return run_templates(tpl_spec, tpl_file, tpl_out);
    if (*test_cmd) return run_test(t);
    if (*q_cmd) return run_quality(q_dataset, q_seed, q_json, q_toxicity, q_lexicon);
    if (*cmp_cmd) return run_compare(cmp_a, cmp_b);
    if (*serve_cmd) return run_serve(host, port, data_dir, serve_specs, workers);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_backend_failure(e.code()) ? kExitBackend : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
