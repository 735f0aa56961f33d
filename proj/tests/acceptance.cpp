// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every expected value is computed here from first principles
// rather than through the library under test.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "biastest/chat.hpp"
#include "biastest/datastore.hpp"
#include "biastest/genpipeline.hpp"
#include "biastest/metrics.hpp"
#include "biastest/scorers.hpp"
#include "biastest/specs.hpp"
#include "biastest/textquality.hpp"
#include "support.hpp"

using namespace biastest;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects failures without stopping at the first one.
class Check {
 public:
  void expect(bool cond, const std::string& what) {
    if (!cond && ok_) first_ = what;
    if (!cond) ok_ = false, ++failures_;
  }
  Outcome done(const std::string& detail) const {
    if (ok_) return {true, detail};
    return {false, first_ + (failures_ > 1 ? " (+" + std::to_string(failures_ - 1) + " more)" : "")};
  }

 private:
  bool ok_ = true;
  int failures_ = 0;
  std::string first_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

specs::ValidatedSpec load_spec(const std::string& name) {
  return specs::require_valid(specs::load_spec_file((testsupport::data_dir() / "specs" / (name + ".json")).string()));
}

std::vector<std::string> attribute_terms() { return {"math", "physics", "poetry", "dance"}; }

// Template fill emits every sentence from both sides, so each pair appears
// twice with the roles swapped; keep the group-1 side to make texts unique.
std::vector<gen::TestSentence> one_side(std::vector<gen::TestSentence> v) {
  std::erase_if(v, [](const gen::TestSentence& s) { return s.group_index != specs::GroupIndex::G1; });
  return v;
}

// --- 1. SS oracle ----------------------------------------------------------

Outcome ss_oracle() {
  Check c;
  std::mt19937_64 rng(20240101);
  const auto attrs = attribute_terms();
  int instances = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = std::uniform_int_distribution<int>(1, 50)(rng);
    std::vector<metrics::SentencePair> pairs;
    std::unordered_map<std::string, double> table;
    // a small score range so ties occur regularly
    std::uniform_int_distribution<int> score(-4, 0);
    std::uniform_int_distribution<std::size_t> attr(0, attrs.size() - 1);
    std::map<std::string, std::pair<double, int>> by_attr;  // hits, count
    double hits = 0.0;
    for (int i = 0; i < n; ++i) {
      metrics::SentencePair p;
      p.stereotype_text = "s" + std::to_string(i);
      p.antistereotype_text = "a" + std::to_string(i);
      p.attribute_term = attrs[attr(rng)];
      const double ls = score(rng), la = score(rng);
      table[p.stereotype_text] = ls;
      table[p.antistereotype_text] = la;
      const double h = ls > la ? 1.0 : (ls == la ? 0.5 : 0.0);
      hits += h;
      by_attr[p.attribute_term].first += h;
      by_attr[p.attribute_term].second += 1;
      pairs.push_back(std::move(p));
    }
    scoring::TableScorer scorer("t", table);
    const auto r = metrics::stereotype_score(pairs, scorer);
    c.expect(r.overall_ss == 100.0 * hits / n, "instance " + std::to_string(inst) + ": overall SS differs from enumeration");
    for (const auto& [a, hc] : by_attr) {
      c.expect(r.per_attribute_ss.at(a) == 100.0 * hc.first / hc.second,
               "instance " + std::to_string(inst) + ": per-attribute SS differs for " + a);
    }
    auto swapped = pairs;
    for (auto& p : swapped) std::swap(p.stereotype_text, p.antistereotype_text);
    const double mirror = metrics::stereotype_score(swapped, scorer).overall_ss;
    c.expect(std::fabs(mirror - (100.0 - r.overall_ss)) < 1e-12,
             "instance " + std::to_string(inst) + ": swap symmetry broken");
    ++instances;
  }
  return c.done(std::to_string(instances) + " instances exact, swap symmetric");
}

// --- 2. injected bias ------------------------------------------------------

Outcome injected_bias() {
  Check c;
  const auto spec = load_spec("gender_science_arts");
  const auto data = one_side(gen::fill_templates(spec, {"[T] likes [A]"}));
  const auto pairs = metrics::make_pairs(data, spec);
  std::string seen;
  for (double f : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const std::size_t biased = static_cast<std::size_t>(f * static_cast<double>(pairs.size()));
    c.expect(static_cast<double>(biased) == f * static_cast<double>(pairs.size()), "pair count not divisible");
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), std::mt19937_64(static_cast<std::uint64_t>(f * 100)));
    std::unordered_map<std::string, double> table;
    for (std::size_t j = 0; j < order.size(); ++j) {
      const auto& p = pairs[order[j]];
      const bool prefer = j < biased;
      table[p.stereotype_text] = prefer ? -1.0 : -2.0;
      table[p.antistereotype_text] = prefer ? -2.0 : -1.0;
    }
    const double ss = metrics::stereotype_score(pairs, scoring::TableScorer("inj", table)).overall_ss;
    c.expect(ss == 100.0 * f, "f=" + fmt("%.2f", f) + " measured " + fmt("%.6f", ss));
    seen += (seen.empty() ? "" : ",") + fmt("%.0f", ss);
  }
  return c.done(std::to_string(pairs.size()) + " pairs, SS = {" + seen + "}");
}

// --- 3. bootstrap ----------------------------------------------------------

Outcome bootstrap_protocol() {
  Check c;
  const auto spec = load_spec("gender_science_arts");
  const auto data = one_side(gen::fill_templates(
      spec, gen::load_template_file((testsupport::data_dir() / "templates/gender_science_arts.txt").string())));
  const auto pairs = metrics::make_pairs(data, spec);
  const auto attrs = specs::all_attributes(spec.spec());
  double sd2 = 0.0, sd12 = 0.0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 coin(1000 + seed);
    std::bernoulli_distribution half(0.5);
    std::unordered_map<std::string, double> table;
    for (const auto& p : pairs) {
      const bool prefer = half(coin);
      table[p.stereotype_text] = prefer ? -1.0 : -2.0;
      table[p.antistereotype_text] = prefer ? -2.0 : -1.0;
    }
    scoring::TableScorer scorer("bern", table);
    const auto outcomes = metrics::compare_pairs(scorer, pairs);
    for (int k : {2, 12}) {
      const auto b = metrics::bootstrap_outcomes(pairs, outcomes, spec, k, 30, static_cast<std::uint64_t>(seed));
      for (const auto& sample : b.replicate_samples) {
        std::map<std::string, int> per;
        for (auto idx : sample) ++per[text::lower(pairs[idx].attribute_term)];
        c.expect(per.size() == attrs.size(), "replicate misses an attribute term");
        for (const auto& [a, _] : attrs) {
          c.expect(per[text::lower(a)] == k, "attribute '" + a + "' drawn " + std::to_string(per[text::lower(a)]) +
                                                 " times for k=" + std::to_string(k));
        }
      }
      const auto again = metrics::bootstrap_outcomes(pairs, outcomes, spec, k, 30, static_cast<std::uint64_t>(seed));
      c.expect(again.replicate_ss == b.replicate_ss && again.replicate_samples == b.replicate_samples,
               "seed " + std::to_string(seed) + " not reproducible");
      (k == 2 ? sd2 : sd12) += b.sd_ss / seeds;
    }
  }
  c.expect(sd12 <= sd2, "mean sd at k=12 (" + fmt("%.3f", sd12) + ") exceeds k=2 (" + fmt("%.3f", sd2) + ")");
  return c.done("mean sd k=2 " + fmt("%.3f", sd2) + " >= k=12 " + fmt("%.3f", sd12) + ", 20 seeds reproducible");
}

// --- 4. statistics oracle --------------------------------------------------

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  // two-pass textbook form
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// 1 - 2 * integral_0^|t| of the Student t density, by composite Simpson.
double simpson_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double a = std::fabs(t);
  const int n = 400000;
  const double h = a / n;
  double s = pdf(0) + pdf(a);
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4 : 2);
  return std::max(0.0, 1.0 - 2.0 * s * h / 3.0);
}

Outcome statistics_oracle() {
  Check c;
  std::mt19937_64 rng(77);
  int significant = 0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const std::size_t n = 5 + 3 * static_cast<std::size_t>(i);
    std::normal_distribution<double> da(50.0 + i, 2.0 + 0.5 * i), db(50.0 - 0.6 * i * i, 3.0);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = da(rng);
    for (auto& x : b) x = db(rng);

    const double va = var_of(a) / n, vb = var_of(b) / n;
    const double t = (mean_of(a) - mean_of(b)) / std::sqrt(va + vb);
    const double df = (va + vb) * (va + vb) / (va * va / (n - 1) + vb * vb / (n - 1));
    const double p = simpson_p(t, df);
    const auto r = metrics::welch_ttest(a, b);
    worst = std::max({worst, std::fabs(r.t_statistic - t), std::fabs(r.degrees_of_freedom - df), std::fabs(r.p_value - p)});
    c.expect(std::fabs(r.t_statistic - t) <= 1e-6, "pair " + std::to_string(i) + ": t");
    c.expect(std::fabs(r.degrees_of_freedom - df) <= 1e-6, "pair " + std::to_string(i) + ": df");
    c.expect(std::fabs(r.p_value - p) <= 1e-6, "pair " + std::to_string(i) + ": p " + fmt("%.9g", r.p_value) + " vs " + fmt("%.9g", p));
    c.expect(r.significant == (r.p_value < 0.001), "pair " + std::to_string(i) + ": significance flag");
    significant += r.significant;

    // Pearson by the raw-sums form
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t j = 0; j < n; ++j) {
      sx += a[j], sy += b[j], sxx += a[j] * a[j], syy += b[j] * b[j], sxy += a[j] * b[j];
    }
    const double rho = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    const auto ce = metrics::compare_estimates(a, b);
    c.expect(std::fabs(ce.mean_difference - (sx - sy) / n) <= 1e-6, "pair " + std::to_string(i) + ": mean difference");
    c.expect(ce.pearson_rho && std::fabs(*ce.pearson_rho - rho) <= 1e-6, "pair " + std::to_string(i) + ": pearson");
  }
  c.expect(significant > 0 && significant < 10, "fixtures should include both significant and non-significant pairs");
  return c.done("10 pairs, max |diff| " + fmt("%.2e", worst) + ", " + std::to_string(significant) + " significant at 0.001");
}

// --- 5. Algorithm 1 under a lossy mock -------------------------------------

Outcome generation_loop() {
  Check c;
  const auto spec = specs::require_valid(testsupport::gender_spec());
  c.expect(specs::all_attributes(spec.spec()).size() == 4, "spec must have 4 attribute terms");
  long requested = 0, accepted = 0, generations = 0, compliant = 0, stored = 0;
  int runs = 0;
  for (std::uint64_t seed = 1; requested < 1000; ++seed, ++runs) {
    chat::MockChatOptions mo;
    mo.seed = seed;
    mo.omission_rate = 0.4;
    mo.refusal_rate = 0.05;
    chat::MockChatClient mock(mo);
    gen::GenerationConfig cfg;
    cfg.per_attribute_quota = 2;
    cfg.max_tries = 40;
    cfg.seed = seed;
    cfg.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
    const auto res = gen::generate_for_spec(spec, cfg, mock);
    c.expect(res.report.quota_met(), "seed " + std::to_string(seed) + ": quota not met");
    for (const auto& [attr, n] : res.report.per_attribute_counts) {
      c.expect(n >= 2, "seed " + std::to_string(seed) + ": attribute " + attr + " below quota");
    }
    for (const auto& s : res.sentences) {
      c.expect(gen::contains_terms(s.text, {s.group_term, s.attribute_term}), "stored sentence lacks its terms: " + s.text);
      c.expect(gen::contains_terms(s.paired_text, {s.counterpart_term, s.attribute_term}),
               "paired text lacks its terms: " + s.paired_text);
    }
    const auto& r = res.report;
    c.expect(r.accepted + r.rejected_missing_terms + r.rejected_refusals <= r.requested, "report counts exceed requested");
    requested += r.requested;
    accepted += r.accepted;
    stored += static_cast<long>(res.sentences.size());
    generations += mock.stats().generations;
    compliant += mock.stats().compliant;
  }
  const double rate = static_cast<double>(accepted) / requested;
  const double empirical = static_cast<double>(compliant) / generations;
  c.expect(std::fabs(rate - empirical) <= 0.05, "acceptance_rate " + fmt("%.4f", rate) + " vs mock " + fmt("%.4f", empirical));
  return c.done(std::to_string(runs) + " runs, " + std::to_string(requested) + " requests, " + std::to_string(stored) +
                " stored; acceptance_rate " + fmt("%.4f", rate) + " vs mock " + fmt("%.4f", empirical));
}

// --- 6. readability --------------------------------------------------------

Outcome readability() {
  Check c;
  struct Fixture {
    const char* text;
    double words, sentences, complex, letters;
  };
  // counts derived by hand: syllables are vowel runs (a e i o u y) with a
  // trailing consonant+e dropped; complex means three or more
  const Fixture fixtures[] = {
      {"The cat sat.", 3, 1, 0, 9},
      {"He likes math.", 3, 1, 0, 11},
      {"My sister studies chemistry at night.", 6, 1, 1, 31},               // chem-is-try
      {"Her brother enjoys poetry. He writes every day.", 8, 2, 1, 38},      // ev-er-y
      {"Science is fun!", 3, 1, 0, 12},
  };
  double max_gf = 0.0;
  for (const auto& f : fixtures) {
    const double gf = 0.4 * (f.words / f.sentences + 100.0 * f.complex / f.words);
    const double ari = 4.71 * (f.letters / f.words) + 0.5 * (f.words / f.sentences) - 21.43;
    const double got_gf = quality::gunning_fog(f.text), got_ari = quality::ari(f.text);
    c.expect(std::fabs(got_gf - gf) <= 1e-9, std::string("GF of '") + f.text + "': " + fmt("%.12g", got_gf) + " vs " + fmt("%.12g", gf));
    c.expect(std::fabs(got_ari - ari) <= 1e-9, std::string("ARI of '") + f.text + "': " + fmt("%.12g", got_ari) + " vs " + fmt("%.12g", ari));
    c.expect(got_gf < 12.0, std::string("GF >= 12 for '") + f.text + "'");
    max_gf = std::max(max_gf, got_gf);
  }
  return c.done("5 fixtures at 1e-9, max GF " + fmt("%.3f", max_gf));
}

// --- 7. quality ordering ---------------------------------------------------

Outcome quality_ordering() {
  Check c;
  const auto spec = load_spec("gender_science_arts");
  const auto tpl = gen::fill_templates(spec, gen::load_template_file((testsupport::data_dir() / "templates/gender_science_arts.txt").string()));
  const auto rich = store::load(testsupport::data_dir() / "datasets/gender_science_arts_rich.jsonl");
  std::vector<std::string> base_texts, rich_texts;
  for (const auto& s : tpl) base_texts.push_back(s.text);
  for (const auto& s : rich.sentences) rich_texts.push_back(s.text);
  const auto base = quality::quality_report(base_texts);
  const auto gen = quality::quality_report(rich_texts);
  c.expect(gen.word_count_mean > base.word_count_mean, "word-count mean not higher for the richer corpus");
  c.expect(gen.unique_tokens_200 > base.unique_tokens_200, "unique tokens not higher for the richer corpus");
  return c.done("words " + fmt("%.2f", base.word_count_mean) + " -> " + fmt("%.2f", gen.word_count_mean) +
                ", unique tokens " + fmt("%.1f", base.unique_tokens_200) + " -> " + fmt("%.1f", gen.unique_tokens_200));
}

// --- 8. round trip ---------------------------------------------------------

Outcome round_trip() {
  Check c;
  const auto spec = load_spec("gender_science_arts");
  auto sentences = gen::fill_templates(spec, {"[T] likes [A], \"a lot\"", "Why does [T] enjoy [A]?\nNobody knows."});
  sentences.resize(100);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    sentences[i].source = i % 2 ? gen::SentenceSource::Chat : gen::SentenceSource::Template;
    sentences[i].gen_metadata = {i % 2 ? "gpt-x" : "template", "2024-05-0" + std::to_string(1 + i % 9) + "T10:00:00Z",
                                 0.1 * static_cast<double>(i % 7), static_cast<int>(i % 4)};
  }
  auto d = store::make_dataset(spec.spec(), sentences, {{"run", "acceptance"}});
  d.created_at = "2024-06-01T00:00:00Z";
  testsupport::TempDir dir;
  store::save(d, dir / "d.jsonl");
  const auto back = store::load(dir / "d.jsonl");
  c.expect(back == d, "save/load changed the dataset");
  c.expect(back.sentences.size() == 100, "record count");

  store::export_csv(d, dir / "d.csv");
  std::ifstream in(dir / "d.csv", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto rows = store::csv::parse(ss.str());
  c.expect(rows.size() == 101, "CSV row count");
  c.expect(store::sentences_from_csv(ss.str()) == d.sentences, "CSV re-parse lost fields");

  auto half = d;
  half.sentences.resize(60);
  const auto once = store::merge(d, d);
  c.expect(once.sentences == d.sentences, "merge(d, d) != d");
  const auto ab = store::merge(half, d);
  c.expect(store::merge(ab, d).sentences == ab.sentences, "merge not idempotent");
  c.expect(ab.sentences == d.sentences, "merge of a subset changed the dataset");
  return c.done("100 records identical through JSONL and CSV; merge idempotent");
}

// --- 9. end to end ---------------------------------------------------------

int run(const std::string& cmd, std::string* output = nullptr) {
  FILE* p = popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return -1;
  char buf[4096];
  std::size_t n;
  std::string out;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = pclose(p);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome end_to_end() {
  Check c;
  testsupport::TempDir dir;
  const auto data = testsupport::data_dir();
  const std::string cli = std::string("env -u CHAT_API_KEY -u SCORER_URL -u TOXICITY_URL SOURCE_DATE_EPOCH=1700000000 \"") +
                          BIASTEST_CLI + "\" ";
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  const auto spec = data / "specs/gender_science_arts.json";
  std::vector<std::string> printed;
  for (const char* tag : {"a", "b"}) {
    fs::create_directories(dir / tag);
    std::string out;
    int rc = run(cli + "templates --spec " + q(spec) + " --templates " + q(data / "templates/gender_science_arts.txt") +
                     " --out " + q(dir / tag / "d.jsonl"),
                 &out);
    c.expect(rc == 0, "templates exit " + std::to_string(rc) + ": " + out);
    rc = run(cli + "test --spec " + q(spec) + " --dataset " + q(dir / tag / "d.jsonl") + " --scorer table:" +
                 q(data / "scorers/constant.json") + " --k 4 --replicates 30 --seed 7 --out " + q(dir / tag / "r.json") +
                 " --export " + q(dir / tag / "r.csv"),
             &out);
    c.expect(rc == 0, "test exit " + std::to_string(rc) + ": " + out);
    c.expect(out.find("SS 50.0") != std::string::npos, "constant scorer did not give SS 50.0");
    printed.push_back(out);
  }
  for (const char* f : {"d.jsonl", "r.json", "r.csv"}) {
    const auto a = read_all(dir / "a" / f), b = read_all(dir / "b" / f);
    c.expect(!a.empty() && a == b, std::string(f) + " differs between runs");
  }
  c.expect(printed.size() == 2 && printed[0] == printed[1], "stdout differs between runs");
  const auto rows = store::csv::parse(read_all(dir / "a/r.csv"));
  c.expect(!rows.empty() && rows[0] == store::result_csv_columns(), "export header");
  return c.done("templates -> test -> export, exit 0, byte-identical across runs (" + std::to_string(rows.size() - 1) +
                " CSV rows)");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;  // 0: no runtime bound
    std::function<Outcome()> fn;
  };
  const Criterion criteria[] = {
      {"ss-oracle", 5, ss_oracle},
      {"injected-bias", 5, injected_bias},
      {"bootstrap-protocol", 30, bootstrap_protocol},
      {"statistics-oracle", 0, statistics_oracle},
      {"generation-termination", 10, generation_loop},
      {"readability", 0, readability},
      {"quality-ordering", 0, quality_ordering},
      {"round-trip-export", 0, round_trip},
      {"end-to-end-offline", 0, end_to_end},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.limit_s > 0 && secs >= cr.limit_s) {
      o.ok = false;
      o.detail += "; runtime " + fmt("%.2f", secs) + " s over " + fmt("%.0f", cr.limit_s) + " s";
    }
    std::printf("%s  %-24s %7.2fs  %s\n", o.ok ? "PASS" : "FAIL", cr.name, secs, o.detail.c_str());
    failed += o.ok ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
