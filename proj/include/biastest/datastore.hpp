#pragma once

// On-disk persistence for specifications, sentence datasets and results.
//
// A dataset file is newline-delimited JSON: the first line is a header
// object {format_version, spec, created_at, generator_metadata}, each
// following line one TestSentence. Keys are written in a fixed order so
// save(load(f)) reproduces f byte for byte.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biastest/error.hpp"
#include "biastest/genpipeline.hpp"
#include "biastest/metrics.hpp"
#include "biastest/specs.hpp"

namespace biastest::store {

namespace fs = std::filesystem;
using gen::TestSentence;
using specs::BiasSpecification;

inline constexpr int kFormatVersion = 1;

struct DatasetFile {
  int format_version = kFormatVersion;
  BiasSpecification spec;
  std::vector<TestSentence> sentences;
  std::string created_at;
  nlohmann::ordered_json generator_metadata = nlohmann::ordered_json::object();

  bool operator==(const DatasetFile& o) const {
    return format_version == o.format_version && spec == o.spec && sentences == o.sentences &&
           created_at == o.created_at && generator_metadata == o.generator_metadata;
  }
};

/// UTC timestamp; honours SOURCE_DATE_EPOCH so reproducible runs write
/// identical files.
inline std::string created_at_now() {
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    char* end = nullptr;
    const long long secs = std::strtoll(epoch, &end, 10);
    if (end && *end == '\0') {
      const std::time_t t = static_cast<std::time_t>(secs);
      std::tm tm{};
      gmtime_r(&t, &tm);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
      return buf;
    }
  }
  return gen::utc_timestamp();
}

inline DatasetFile make_dataset(const BiasSpecification& spec, std::vector<TestSentence> sentences,
                                nlohmann::ordered_json generator_metadata = nlohmann::ordered_json::object()) {
  DatasetFile d;
  d.spec = spec;
  d.sentences = std::move(sentences);
  d.created_at = created_at_now();
  d.generator_metadata = std::move(generator_metadata);
  return d;
}

namespace detail {

inline std::string record_problem(const TestSentence& s, const std::string& spec_name) {
  if (s.spec_name != spec_name) return "spec_name '" + s.spec_name + "' does not match dataset spec '" + spec_name + "'";
  if (auto p = gen::check_sentence(s)) return *p;
  return {};
}

inline void write_text(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  // Write to a sibling file and rename so readers never see a torn file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << data;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string serialize(const DatasetFile& d) {
  nlohmann::ordered_json header;
  header["format_version"] = d.format_version;
  header["spec"] = specs::to_json(d.spec);
  header["created_at"] = d.created_at;
  header["generator_metadata"] = d.generator_metadata;
  std::string out = header.dump() + "\n";
  for (const auto& s : d.sentences) out += gen::to_json(s).dump() + "\n";
  return out;
}

/// Parses JSONL text. Errors name the 0-based record index (header excluded)
/// and the 1-based line number.
inline DatasetFile parse_dataset(const std::string& data, const std::string& origin = "<memory>") {
  std::istringstream in(data);
  std::string line;
  std::size_t lineno = 0;
  DatasetFile d;
  bool have_header = false;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      const std::string where = have_header ? "record " + std::to_string(record) : "header";
      throw Error(ErrorCode::SchemaViolation,
                  origin + ":" + std::to_string(lineno) + ": " + where + ": invalid JSON (" + e.what() + ")");
    }
    if (!have_header) {
      if (!j.is_object() || !j.contains("format_version")) {
        throw Error(ErrorCode::SchemaViolation, origin + ":" + std::to_string(lineno) + ": missing dataset header");
      }
      if (!j.at("format_version").is_number_integer() || j.at("format_version").get<int>() != kFormatVersion) {
        throw Error(ErrorCode::SchemaViolation, origin + ": unsupported format_version " + j.at("format_version").dump() +
                                                    " (expected " + std::to_string(kFormatVersion) + ")");
      }
      try {
        d.spec = specs::spec_from_json(j.at("spec"));
        d.created_at = j.value("created_at", std::string());
        if (j.contains("generator_metadata")) d.generator_metadata = j.at("generator_metadata");
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, origin + ":" + std::to_string(lineno) + ": bad header: " + e.what());
      } catch (const Error& e) {
        throw Error(ErrorCode::SchemaViolation, origin + ":" + std::to_string(lineno) + ": bad header: " + e.what());
      }
      have_header = true;
      continue;
    }
    TestSentence s;
    try {
      s = gen::sentence_from_json(j);
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaViolation,
                  origin + ":" + std::to_string(lineno) + ": record " + std::to_string(record) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaViolation,
                  origin + ":" + std::to_string(lineno) + ": record " + std::to_string(record) + ": " + e.what());
    }
    if (auto problem = detail::record_problem(s, d.spec.name); !problem.empty()) {
      throw Error(ErrorCode::SchemaViolation,
                  origin + ":" + std::to_string(lineno) + ": record " + std::to_string(record) + ": " + problem);
    }
    d.sentences.push_back(std::move(s));
    ++record;
  }
  if (!have_header) throw Error(ErrorCode::SchemaViolation, origin + ": empty dataset file (no header)");
  return d;
}

inline void save(const DatasetFile& d, const fs::path& path) {
  for (std::size_t i = 0; i < d.sentences.size(); ++i) {
    if (auto problem = detail::record_problem(d.sentences[i], d.spec.name); !problem.empty()) {
      throw Error(ErrorCode::SchemaViolation, "record " + std::to_string(i) + ": " + problem);
    }
  }
  detail::write_text(path, serialize(d));
}

inline DatasetFile load(const fs::path& path) { return parse_dataset(detail::read_text(path), path.string()); }

/// Union of both datasets keeping a's records first; records equal on
/// (text, paired_text, group_term, attribute_term) are kept once.
inline DatasetFile merge(const DatasetFile& a, const DatasetFile& b) {
  if (a.spec.name != b.spec.name) {
    throw Error(ErrorCode::SpecMismatch, "cannot merge datasets for '" + a.spec.name + "' and '" + b.spec.name + "'");
  }
  DatasetFile out = a;
  out.sentences.clear();
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  for (const auto* src : {&a, &b}) {
    for (const auto& s : src->sentences) {
      if (seen.emplace(s.text, s.paired_text, s.group_term, s.attribute_term).second) out.sentences.push_back(s);
    }
  }
  return out;
}

// --- CSV -----------------------------------------------------------------

namespace csv {

inline std::string quote(std::string_view field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += quote(fields[i]);
  }
  out += "\r\n";
  return out;
}

/// RFC 4180 reader. Accepts CRLF or LF record separators.
inline std::vector<std::vector<std::string>> parse(std::string_view data) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      current.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      current.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(current));
      current.clear();
      field_started = false;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::SchemaViolation, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !current.empty()) {
    current.push_back(std::move(field));
    rows.push_back(std::move(current));
  }
  return rows;
}

/// %.17g, enough digits to round-trip any double.
inline std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace csv

inline const std::vector<std::string>& dataset_csv_columns() {
  static const std::vector<std::string> cols = {"spec_name",      "group_term", "group_index",
                                                "counterpart_term", "attribute_term", "attribute_group_index",
                                                "text",           "paired_text", "source",
                                                "model",          "timestamp",   "temperature",
                                                "attempt"};
  return cols;
}

inline std::string dataset_csv(const DatasetFile& d) {
  std::string out = csv::row(dataset_csv_columns());
  for (const auto& s : d.sentences) {
    out += csv::row({s.spec_name, s.group_term, std::string(specs::to_string(s.group_index)), s.counterpart_term,
                     s.attribute_term, std::string(specs::to_string(s.attribute_group_index)), s.text, s.paired_text,
                     std::string(gen::to_string(s.source)), s.gen_metadata.model, s.gen_metadata.timestamp,
                     csv::number(s.gen_metadata.temperature), std::to_string(s.gen_metadata.attempt)});
  }
  return out;
}

/// Inverse of dataset_csv; checks the header row.
inline std::vector<TestSentence> sentences_from_csv(std::string_view data) {
  const auto rows = csv::parse(data);
  if (rows.empty() || rows.front() != dataset_csv_columns()) {
    throw Error(ErrorCode::SchemaViolation, "dataset CSV header does not match the expected columns");
  }
  std::vector<TestSentence> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() != dataset_csv_columns().size()) {
      throw Error(ErrorCode::SchemaViolation, "CSV row " + std::to_string(r) + " has " + std::to_string(f.size()) +
                                                  " fields");
    }
    TestSentence s;
    s.spec_name = f[0];
    s.group_term = f[1];
    s.group_index = specs::parse_group_index(f[2]);
    s.counterpart_term = f[3];
    s.attribute_term = f[4];
    s.attribute_group_index = specs::parse_attribute_index(f[5]);
    s.text = f[6];
    s.paired_text = f[7];
    s.source = gen::parse_sentence_source(f[8]);
    s.gen_metadata.model = f[9];
    s.gen_metadata.timestamp = f[10];
    s.gen_metadata.temperature = std::stod(f[11]);
    s.gen_metadata.attempt = std::stoi(f[12]);
    out.push_back(std::move(s));
  }
  return out;
}

inline const std::vector<std::string>& result_csv_columns() {
  static const std::vector<std::string> cols = {"spec_name",       "model_id",           "attribute_term",
                                                "group_term",      "counterpart_term",   "stereotype_text",
                                                "antistereotype_text", "chosen",         "delta",
                                                "replicate_index"};
  return cols;
}

/// One row per scored pair (replicate_index empty). With a bootstrap, one
/// additional row per sampled pair per replicate.
inline std::string result_csv(const metrics::BiasTestResult& r) {
  std::string out = csv::row(result_csv_columns());
  auto emit = [&](const metrics::PairRecord& rec, const std::string& replicate) {
    out += csv::row({r.spec_name, r.model_id, rec.pair.attribute_term, rec.pair.group_term_pair.first,
                     rec.pair.group_term_pair.second, rec.pair.stereotype_text, rec.pair.antistereotype_text,
                     std::string(scoring::to_string(rec.outcome.chosen)), csv::number(rec.outcome.delta), replicate});
  };
  for (const auto& rec : r.per_pair) emit(rec, "");
  if (r.bootstrap) {
    for (std::size_t rep = 0; rep < r.bootstrap->replicate_samples.size(); ++rep) {
      for (auto idx : r.bootstrap->replicate_samples[rep]) {
        if (idx < r.per_pair.size()) emit(r.per_pair[idx], std::to_string(rep));
      }
    }
  }
  return out;
}

inline void export_csv(const DatasetFile& d, const fs::path& path) { detail::write_text(path, dataset_csv(d)); }
inline void export_csv(const metrics::BiasTestResult& r, const fs::path& path) {
  detail::write_text(path, result_csv(r));
}

// --- directory store ------------------------------------------------------

/// specs/<name>.json, datasets/<name>/<run_id>.jsonl, results/<id>.json,
/// exports/<id>.csv under one root. Writes for a given spec are serialized;
/// reads take no lock (files are replaced atomically).
class Store {
 public:
  explicit Store(fs::path root) : root_(std::move(root)) {
    for (const char* sub : {"specs", "datasets", "results", "exports"}) {
      std::error_code ec;
      fs::create_directories(root_ / sub, ec);
      if (ec) throw Error(ErrorCode::IoError, "cannot create " + (root_ / sub).string() + ": " + ec.message());
    }
  }

  /// BIASTEST_DATA_DIR, or ./biastest-data.
  static Store from_environment() {
    const char* dir = std::getenv("BIASTEST_DATA_DIR");
    return Store(dir && *dir ? fs::path(dir) : fs::path("biastest-data"));
  }

  const fs::path& root() const { return root_; }

  static void check_name(const std::string& name) {
    if (name.empty() || name.size() > 128 || name.front() == '.' ||
        name.find_first_of("/\\") != std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "invalid name '" + name + "'");
    }
    for (unsigned char c : name) {
      if (c < 0x20) throw Error(ErrorCode::InvalidConfig, "invalid name '" + name + "'");
    }
  }

  // specs
  void put_spec(const BiasSpecification& spec) {
    check_name(spec.name);
    auto lock = lock_spec(spec.name);
    detail::write_text(root_ / "specs" / (spec.name + ".json"), specs::to_json(spec).dump(2) + "\n");
  }
  std::optional<BiasSpecification> get_spec(const std::string& name) const {
    check_name(name);
    const auto p = root_ / "specs" / (name + ".json");
    if (!fs::exists(p)) return std::nullopt;
    return specs::load_spec_file(p.string());
  }
  std::vector<std::string> list_specs() const {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root_ / "specs")) {
      if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
  }

  // datasets
  void put_dataset(const std::string& run_id, const DatasetFile& d) {
    check_name(d.spec.name);
    check_name(run_id);
    auto lock = lock_spec(d.spec.name);
    save(d, dataset_path(d.spec.name, run_id));
  }
  std::vector<std::string> list_runs(const std::string& spec_name) const {
    check_name(spec_name);
    std::vector<std::string> runs;
    const auto dir = root_ / "datasets" / spec_name;
    if (!fs::exists(dir)) return runs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".jsonl") runs.push_back(e.path().stem().string());
    }
    std::sort(runs.begin(), runs.end());
    return runs;
  }
  DatasetFile get_dataset(const std::string& spec_name, const std::string& run_id) const {
    check_name(spec_name);
    check_name(run_id);
    const auto p = dataset_path(spec_name, run_id);
    if (!fs::exists(p)) throw Error(ErrorCode::NotFound, "no dataset run '" + run_id + "' for spec '" + spec_name + "'");
    return load(p);
  }
  /// Every stored run for a spec merged in run-id order; nullopt when none.
  std::optional<DatasetFile> merged_dataset(const std::string& spec_name) const {
    std::optional<DatasetFile> out;
    for (const auto& run : list_runs(spec_name)) {
      auto d = get_dataset(spec_name, run);
      out = out ? merge(*out, d) : std::move(d);
    }
    return out;
  }

  // results
  void put_result(const std::string& id, const metrics::BiasTestResult& r) {
    check_name(id);
    detail::write_text(root_ / "results" / (id + ".json"), metrics::to_json(r).dump(2) + "\n");
  }
  void put_result_json(const std::string& id, const nlohmann::ordered_json& j) {
    check_name(id);
    detail::write_text(root_ / "results" / (id + ".json"), j.dump(2) + "\n");
  }
  std::optional<nlohmann::ordered_json> get_result_json(const std::string& id) const {
    check_name(id);
    const auto p = root_ / "results" / (id + ".json");
    if (!fs::exists(p)) return std::nullopt;
    try {
      return nlohmann::ordered_json::parse(detail::read_text(p));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, p.string() + ": " + e.what());
    }
  }
  fs::path export_result(const std::string& id, const metrics::BiasTestResult& r) {
    check_name(id);
    const auto p = root_ / "exports" / (id + ".csv");
    export_csv(r, p);
    return p;
  }

  fs::path dataset_path(const std::string& spec_name, const std::string& run_id) const {
    return root_ / "datasets" / spec_name / (run_id + ".jsonl");
  }

 private:
  std::unique_lock<std::mutex> lock_spec(const std::string& name) {
    std::mutex* m;
    {
      std::lock_guard<std::mutex> g(table_mutex_);
      auto& slot = spec_mutexes_[name];
      if (!slot) slot = std::make_unique<std::mutex>();
      m = slot.get();
    }
    return std::unique_lock<std::mutex>(*m);
  }

  fs::path root_;
  std::mutex table_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> spec_mutexes_;
};

}  // namespace biastest::store
