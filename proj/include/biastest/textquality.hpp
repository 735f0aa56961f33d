#pragma once

// Dataset quality analytics: length and lexical diversity, readability
// (Gunning Fog, Automated Readability Index), lexicon sentiment and an
// optional remote toxicity classifier.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biastest/error.hpp"
#include "biastest/http.hpp"
#include "biastest/text.hpp"

namespace biastest::quality {

using text::tokenize;

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

namespace detail {

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace detail

/// Sample mean and Bessel-corrected sd of token counts; a single sentence
/// has sd 0.
inline MeanSd word_count_stats(const std::vector<std::string>& sentences) {
  if (sentences.empty()) throw Error(ErrorCode::EmptyDataset, "word_count_stats needs at least one sentence");
  std::vector<double> counts;
  counts.reserve(sentences.size());
  for (const auto& s : sentences) counts.push_back(static_cast<double>(tokenize(s).size()));
  return detail::mean_sd(counts);
}

/// Distinct tokens in `sample_size` sentences drawn without replacement
/// (all sentences when there are fewer), averaged over `trials` draws.
inline MeanSd unique_tokens(const std::vector<std::string>& sentences, std::size_t sample_size = 200, int trials = 30,
                            std::uint64_t seed = 0) {
  if (sentences.empty()) throw Error(ErrorCode::EmptyDataset, "unique_tokens needs at least one sentence");
  if (trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(sentences.size());
  for (const auto& s : sentences) tokenized.push_back(tokenize(s));
  std::vector<std::size_t> all(sentences.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  std::vector<double> counts;
  for (int t = 0; t < trials; ++t) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(t)};
    std::mt19937_64 engine(seq);
    std::vector<std::size_t> chosen;
    if (sentences.size() <= sample_size) {
      chosen = all;
    } else {
      std::sample(all.begin(), all.end(), std::back_inserter(chosen), sample_size, engine);
    }
    std::set<std::string> distinct;
    for (auto i : chosen) distinct.insert(tokenized[i].begin(), tokenized[i].end());
    counts.push_back(static_cast<double>(distinct.size()));
  }
  return detail::mean_sd(counts);
}

/// Vowel-group heuristic: count maximal runs of a/e/i/o/u/y, drop a final
/// silent "e" (a lone trailing e after a consonant) unless that would leave
/// zero, and never return less than one.
inline int syllable_count(std::string_view word) {
  std::string w;
  for (char c : word) {
    const char l = text::to_lower(c);
    if (l >= 'a' && l <= 'z') w += l;
  }
  if (w.empty()) return 1;
  auto vowel = [](char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; };
  int runs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (vowel(w[i]) && (i == 0 || !vowel(w[i - 1]))) ++runs;
  }
  const bool silent_e = w.size() >= 2 && w.back() == 'e' && !vowel(w[w.size() - 2]);
  if (silent_e && runs > 1) --runs;
  return std::max(1, runs);
}

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text;
/// only segments holding at least one word count.
inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < s.size(); ++i) {
    current += s[i];
    const bool terminal = s[i] == '.' || s[i] == '!' || s[i] == '?';
    if (terminal && (i + 1 == s.size() || text::is_space(s[i + 1]))) {
      if (!tokenize(current).empty()) out.push_back(text::trim(current));
      current.clear();
    }
  }
  if (!tokenize(current).empty()) out.push_back(text::trim(current));
  return out;
}

struct TextCounts {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t complex_words = 0;  // three or more syllables
  std::size_t letters = 0;        // alphanumeric characters
};

inline TextCounts text_counts(std::string_view s) {
  TextCounts c;
  const auto tokens = tokenize(s);
  c.words = tokens.size();
  if (c.words == 0) throw Error(ErrorCode::EmptyText, "text has no words");
  c.sentences = std::max<std::size_t>(1, split_sentences(s).size());
  for (const auto& t : tokens) {
    if (syllable_count(t) >= 3) ++c.complex_words;
  }
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if ((u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z')) ++c.letters;
  }
  return c;
}

/// 0.4 * (words / sentences + 100 * complex_words / words)
inline double gunning_fog(std::string_view s) {
  const auto c = text_counts(s);
  const double w = static_cast<double>(c.words);
  return 0.4 * (w / static_cast<double>(c.sentences) + 100.0 * static_cast<double>(c.complex_words) / w);
}

/// 4.71 * (letters / words) + 0.5 * (words / sentences) - 21.43
inline double ari(std::string_view s) {
  const auto c = text_counts(s);
  const double w = static_cast<double>(c.words);
  return 4.71 * (static_cast<double>(c.letters) / w) + 0.5 * (w / static_cast<double>(c.sentences)) - 21.43;
}

// --- sentiment -----------------------------------------------------------

struct SentimentLexicon {
  std::map<std::string, double> valence;
  double normalization_alpha = 15.0;
};

inline const std::vector<std::pair<const char*, double>>& default_lexicon_entries() {
  static const std::vector<std::pair<const char*, double>> entries = {
    {"admire", 2.1},
    {"adore", 2.6},
    {"amazing", 2.8},
    {"angry", -2.3},
    {"anxious", -1.0},
    {"appreciate", 1.9},
    {"awful", -2.0},
    {"bad", -2.5},
    {"beautiful", 2.9},
    {"benefit", 1.7},
    {"best", 3.2},
    {"better", 1.9},
    {"bored", -1.1},
    {"brave", 2.4},
    {"brilliant", 2.8},
    {"calm", 1.3},
    {"capable", 1.6},
    {"care", 2.2},
    {"careless", -1.5},
    {"caring", 2.3},
    {"cheerful", 2.5},
    {"clever", 1.8},
    {"compassion", 2.2},
    {"confident", 2.2},
    {"cruel", -2.8},
    {"curious", 1.3},
    {"danger", -2.4},
    {"dangerous", -2.1},
    {"dead", -3.3},
    {"death", -2.9},
    {"delight", 2.9},
    {"depressed", -2.3},
    {"dirty", -1.9},
    {"disappointed", -2.0},
    {"disaster", -3.1},
    {"disease", -1.7},
    {"dishonest", -2.7},
    {"dislike", -1.6},
    {"dreadful", -2.7},
    {"eager", 1.5},
    {"empathy", 2.0},
    {"enjoy", 2.2},
    {"enjoys", 2.2},
    {"evil", -3.4},
    {"excellent", 2.7},
    {"excels", 2.0},
    {"excited", 2.2},
    {"fail", -2.5},
    {"failure", -2.3},
    {"fair", 1.3},
    {"faithful", 1.9},
    {"fantastic", 2.6},
    {"fear", -2.2},
    {"fine", 0.8},
    {"fond", 1.9},
    {"free", 2.3},
    {"friendly", 2.2},
    {"fun", 2.3},
    {"gentle", 1.9},
    {"gift", 1.9},
    {"glad", 2.0},
    {"good", 1.9},
    {"great", 3.1},
    {"grief", -2.2},
    {"guilty", -1.8},
    {"happy", 2.7},
    {"harm", -2.5},
    {"hate", -2.7},
    {"hatred", -3.2},
    {"healthy", 1.7},
    {"help", 1.7},
    {"helpful", 1.8},
    {"honest", 2.3},
    {"hope", 1.9},
    {"horrible", -2.5},
    {"hurt", -2.4},
    {"ill", -1.8},
    {"illegal", -2.6},
    {"inspiring", 2.2},
    {"intelligent", 2.0},
    {"joy", 2.8},
    {"kind", 2.4},
    {"kill", -3.7},
    {"lazy", -1.5},
    {"love", 3.2},
    {"loves", 2.7},
    {"loyal", 2.1},
    {"lucky", 1.8},
    {"nasty", -2.6},
    {"neglect", -2.0},
    {"nice", 1.8},
    {"pain", -2.3},
    {"passionate", 2.1},
    {"peace", 2.5},
    {"pleasant", 2.3},
    {"pleasure", 2.7},
    {"poor", -2.1},
    {"proud", 2.1},
    {"rude", -2.0},
    {"sad", -2.1},
    {"safe", 1.9},
    {"scared", -1.9},
    {"sick", -2.3},
    {"smart", 1.7},
    {"strong", 2.3},
    {"stupid", -2.4},
    {"succeed", 2.2},
    {"success", 2.7},
    {"support", 1.7},
    {"terrible", -2.5},
    {"thrilled", 2.6},
    {"trust", 2.3},
    {"ugly", -2.2},
    {"unhappy", -1.8},
    {"unpleasant", -2.1},
    {"violent", -2.9},
    {"warm", 1.2},
    {"weak", -1.9},
    {"wise", 2.1},
    {"wonderful", 2.7},
    {"worry", -1.9},
    {"worst", -3.1},
    {"wrong", -2.1},
  };
  return entries;
}

inline SentimentLexicon default_lexicon() {
  SentimentLexicon lex;
  for (const auto& [w, v] : default_lexicon_entries()) lex.valence[w] = v;
  return lex;
}

/// Tab-separated "token<TAB>valence" lines; '#' starts a comment line.
inline SentimentLexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon " + path);
  SentimentLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    std::istringstream ls(trimmed);
    std::string word;
    double v;
    if (!(ls >> word >> v) || !std::isfinite(v)) {
      throw Error(ErrorCode::SchemaViolation, path + ":" + std::to_string(lineno) + ": expected 'token<TAB>valence'");
    }
    lex.valence[text::lower(word)] = v;
  }
  if (lex.valence.empty()) throw Error(ErrorCode::SchemaViolation, path + " holds no entries");
  return lex;
}

enum class SentimentLabel { Positive, Negative, Neutral };

inline std::string_view to_string(SentimentLabel l) {
  switch (l) {
    case SentimentLabel::Positive: return "positive";
    case SentimentLabel::Negative: return "negative";
    case SentimentLabel::Neutral: return "neutral";
  }
  return "neutral";
}

struct Sentiment {
  double compound = 0.0;
  SentimentLabel label = SentimentLabel::Neutral;
};

inline constexpr double kSentimentBand = 0.05;

/// compound = s / sqrt(s^2 + alpha), s the summed valences; a token directly
/// after "not", "no" or "never" contributes with flipped sign.
inline Sentiment sentiment(std::string_view s, const SentimentLexicon& lexicon) {
  const auto tokens = tokenize(s);
  double sum = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto it = lexicon.valence.find(tokens[i]);
    if (it == lexicon.valence.end()) continue;
    const bool negated = i > 0 && (tokens[i - 1] == "not" || tokens[i - 1] == "no" || tokens[i - 1] == "never");
    sum += negated ? -it->second : it->second;
  }
  Sentiment out;
  out.compound = sum == 0.0 ? 0.0 : sum / std::sqrt(sum * sum + lexicon.normalization_alpha);
  if (out.compound >= kSentimentBand) out.label = SentimentLabel::Positive;
  else if (out.compound <= -kSentimentBand) out.label = SentimentLabel::Negative;
  return out;
}

// --- toxicity ------------------------------------------------------------

inline constexpr double kToxicThreshold = 0.5;

struct ToxicityScores {
  std::vector<double> scores;
  std::vector<bool> toxic;  // score >= 0.5
};

inline ToxicityScores label_toxicity(std::vector<double> scores) {
  ToxicityScores t;
  for (double s : scores) t.toxic.push_back(s >= kToxicThreshold);
  t.scores = std::move(scores);
  return t;
}

/// POST {endpoint}/toxicity {texts} -> {scores}. Returns nullopt when no
/// endpoint is configured; an unreachable endpoint raises BackendUnavailable.
inline std::optional<ToxicityScores> toxicity(const std::vector<std::string>& texts,
                                              const std::optional<std::string>& endpoint) {
  if (!endpoint || endpoint->empty()) return std::nullopt;
  const auto res = http::post_json(*endpoint, "/toxicity", {{"texts", texts}}, {}, ErrorCode::BackendUnavailable);
  if (res.status != 200) throw Error(ErrorCode::BackendUnavailable, "toxicity endpoint answered HTTP " + std::to_string(res.status));
  std::vector<double> scores;
  try {
    scores = res.body.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed toxicity reply: ") + e.what());
  }
  if (scores.size() != texts.size()) throw Error(ErrorCode::BackendUnavailable, "toxicity score count mismatch");
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorCode::BackendUnavailable, "toxicity score outside [0, 1]");
  }
  return label_toxicity(std::move(scores));
}

// --- report --------------------------------------------------------------

struct SentimentFractions {
  double positive = 0.0;
  double negative = 0.0;
  double neutral = 0.0;
};

struct QualityReport {
  std::size_t sentence_count = 0;
  double word_count_mean = 0.0;
  double word_count_sd = 0.0;
  double unique_tokens_200 = 0.0;
  double unique_tokens_200_sd = 0.0;
  double gf_mean = 0.0;
  double ari_mean = 0.0;
  SentimentFractions sentiment_fractions;
  std::optional<double> toxicity_mean;
  std::optional<double> toxic_fraction_at_0_5;
  std::string toxicity_note;  // why toxicity is absent, if it is
};

struct QualityOptions {
  std::size_t sample_size = 200;
  int trials = 30;
  std::uint64_t seed = 0;
  SentimentLexicon lexicon = default_lexicon();
  std::optional<std::string> toxicity_endpoint;
};

inline QualityReport quality_report(const std::vector<std::string>& sentences, const QualityOptions& options = {}) {
  if (sentences.empty()) throw Error(ErrorCode::EmptyDataset, "quality report needs at least one sentence");
  QualityReport r;
  r.sentence_count = sentences.size();
  const auto wc = word_count_stats(sentences);
  r.word_count_mean = wc.mean;
  r.word_count_sd = wc.sd;
  const auto ut = unique_tokens(sentences, options.sample_size, options.trials, options.seed);
  r.unique_tokens_200 = ut.mean;
  r.unique_tokens_200_sd = ut.sd;

  double gf = 0.0, ar = 0.0;
  std::size_t readable = 0, pos = 0, neg = 0, neu = 0;
  for (const auto& s : sentences) {
    if (!tokenize(s).empty()) {
      gf += gunning_fog(s);
      ar += ari(s);
      ++readable;
    }
    switch (sentiment(s, options.lexicon).label) {
      case SentimentLabel::Positive: ++pos; break;
      case SentimentLabel::Negative: ++neg; break;
      case SentimentLabel::Neutral: ++neu; break;
    }
  }
  if (readable > 0) {
    r.gf_mean = gf / static_cast<double>(readable);
    r.ari_mean = ar / static_cast<double>(readable);
  }
  const double n = static_cast<double>(sentences.size());
  r.sentiment_fractions = {static_cast<double>(pos) / n, static_cast<double>(neg) / n, static_cast<double>(neu) / n};

  try {
    if (auto tox = toxicity(sentences, options.toxicity_endpoint)) {
      double sum = 0.0;
      std::size_t flagged = 0;
      for (std::size_t i = 0; i < tox->scores.size(); ++i) {
        sum += tox->scores[i];
        flagged += tox->toxic[i] ? 1 : 0;
      }
      r.toxicity_mean = sum / n;
      r.toxic_fraction_at_0_5 = static_cast<double>(flagged) / n;
    } else {
      r.toxicity_note = "not computed: no toxicity endpoint configured";
    }
  } catch (const Error& e) {
    if (!is_backend_failure(e.code())) throw;
    r.toxicity_note = std::string("not computed: ") + e.what();
  }
  return r;
}

inline nlohmann::ordered_json to_json(const QualityReport& r) {
  nlohmann::ordered_json j;
  j["sentence_count"] = r.sentence_count;
  j["word_count_mean"] = r.word_count_mean;
  j["word_count_sd"] = r.word_count_sd;
  j["unique_tokens_200"] = r.unique_tokens_200;
  j["unique_tokens_200_sd"] = r.unique_tokens_200_sd;
  j["gf_mean"] = r.gf_mean;
  j["ari_mean"] = r.ari_mean;
  j["sentiment_fractions"] = {{"positive", r.sentiment_fractions.positive},
                              {"negative", r.sentiment_fractions.negative},
                              {"neutral", r.sentiment_fractions.neutral}};
  j["toxicity_mean"] = r.toxicity_mean ? nlohmann::ordered_json(*r.toxicity_mean) : nlohmann::ordered_json(nullptr);
  j["toxic_fraction_at_0_5"] =
      r.toxic_fraction_at_0_5 ? nlohmann::ordered_json(*r.toxic_fraction_at_0_5) : nlohmann::ordered_json(nullptr);
  if (!r.toxicity_note.empty()) j["toxicity_note"] = r.toxicity_note;
  return j;
}

inline std::string summary_text(const QualityReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "sentences            " << r.sentence_count << '\n';
  out << "word count           " << r.word_count_mean << " +/- " << r.word_count_sd << '\n';
  out << "unique tokens (200)  " << r.unique_tokens_200 << " +/- " << r.unique_tokens_200_sd << '\n';
  out << "gunning fog (mean)   " << r.gf_mean << '\n';
  out << "ARI (mean)           " << r.ari_mean << '\n';
  out << "sentiment            positive " << 100.0 * r.sentiment_fractions.positive << "%, negative "
      << 100.0 * r.sentiment_fractions.negative << "%, neutral " << 100.0 * r.sentiment_fractions.neutral << "%\n";
  if (r.toxicity_mean) {
    out << "toxicity (mean)      " << std::setprecision(3) << *r.toxicity_mean << ", toxic at 0.5: "
        << std::setprecision(2) << 100.0 * *r.toxic_fraction_at_0_5 << "%\n";
  } else {
    out << "toxicity             " << r.toxicity_note << '\n';
  }
  return out.str();
}

}  // namespace biastest::quality
