#pragma once

// Bias specifications: two index-paired social-group term lists and two
// attribute term lists. The first group paired with the first attribute set
// (and the second with the second) is the stereotype direction.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "biastest/error.hpp"
#include "biastest/text.hpp"

namespace biastest::specs {

enum class SpecSource { Predefined, Custom, Discovered };
enum class GroupIndex { G1, G2 };
enum class AttributeIndex { A1, A2 };
enum class Orientation { Stereotype, AntiStereotype };

inline std::string_view to_string(SpecSource s) {
  switch (s) {
    case SpecSource::Predefined: return "predefined";
    case SpecSource::Custom: return "custom";
    case SpecSource::Discovered: return "discovered";
  }
  return "custom";
}

inline SpecSource parse_source(std::string_view s) {
  if (s == "predefined") return SpecSource::Predefined;
  if (s == "discovered") return SpecSource::Discovered;
  if (s == "custom") return SpecSource::Custom;
  throw Error(ErrorCode::SchemaViolation, "unknown spec source '" + std::string(s) + "'");
}

inline std::string_view to_string(GroupIndex g) { return g == GroupIndex::G1 ? "G1" : "G2"; }
inline std::string_view to_string(AttributeIndex a) { return a == AttributeIndex::A1 ? "A1" : "A2"; }
inline std::string_view to_string(Orientation o) {
  return o == Orientation::Stereotype ? "stereotype" : "anti-stereotype";
}

inline GroupIndex parse_group_index(std::string_view s) {
  if (s == "G1") return GroupIndex::G1;
  if (s == "G2") return GroupIndex::G2;
  throw Error(ErrorCode::SchemaViolation, "bad group index '" + std::string(s) + "'");
}

inline AttributeIndex parse_attribute_index(std::string_view s) {
  if (s == "A1") return AttributeIndex::A1;
  if (s == "A2") return AttributeIndex::A2;
  throw Error(ErrorCode::SchemaViolation, "bad attribute index '" + std::string(s) + "'");
}

inline GroupIndex other(GroupIndex g) { return g == GroupIndex::G1 ? GroupIndex::G2 : GroupIndex::G1; }

struct BiasSpecification {
  std::string name;
  std::string group1_label;
  std::vector<std::string> group1_terms;
  std::string group2_label;
  std::vector<std::string> group2_terms;
  std::string attr1_label;
  std::vector<std::string> attr1_terms;
  std::string attr2_label;
  std::vector<std::string> attr2_terms;
  SpecSource source = SpecSource::Custom;
  // Free-form provenance note (e.g. "reconstructed"); round-tripped, not validated.
  std::string notes;

  bool operator==(const BiasSpecification&) const = default;

  const std::vector<std::string>& group_terms(GroupIndex g) const {
    return g == GroupIndex::G1 ? group1_terms : group2_terms;
  }
  const std::vector<std::string>& attribute_terms(AttributeIndex a) const {
    return a == AttributeIndex::A1 ? attr1_terms : attr2_terms;
  }
};

struct ValidationIssue {
  ErrorCode code;
  std::string message;
  bool operator==(const ValidationIssue&) const = default;
};

using ValidationErrorList = std::vector<ValidationIssue>;

/// A specification that satisfied every invariant. Only validate_spec builds
/// one, so holding a ValidatedSpec is proof of validity.
class ValidatedSpec {
 public:
  const BiasSpecification& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  const std::vector<ValidationIssue>& warnings() const { return warnings_; }
  const BiasSpecification* operator->() const { return &spec_; }

  bool operator==(const ValidatedSpec& other) const { return spec_ == other.spec_; }

 private:
  friend std::variant<ValidatedSpec, ValidationErrorList> validate_spec(const BiasSpecification&);
  ValidatedSpec(BiasSpecification spec, std::vector<ValidationIssue> warnings)
      : spec_(std::move(spec)), warnings_(std::move(warnings)) {}

  BiasSpecification spec_;
  std::vector<ValidationIssue> warnings_;
};

/// Checks every invariant and reports all violations rather than the first.
/// Attribute overlap between the two attribute lists is a warning only.
inline std::variant<ValidatedSpec, ValidationErrorList> validate_spec(const BiasSpecification& raw) {
  ValidationErrorList errors;
  std::vector<ValidationIssue> warnings;

  struct NamedList {
    const char* key;
    const std::vector<std::string>* terms;
  };
  const NamedList lists[] = {{"group1_terms", &raw.group1_terms},
                             {"group2_terms", &raw.group2_terms},
                             {"attr1_terms", &raw.attr1_terms},
                             {"attr2_terms", &raw.attr2_terms}};

  if (raw.group1_terms.empty()) errors.push_back({ErrorCode::EmptyGroup, "group1_terms is empty"});
  if (raw.group2_terms.empty()) errors.push_back({ErrorCode::EmptyGroup, "group2_terms is empty"});
  if (raw.attr1_terms.empty()) errors.push_back({ErrorCode::EmptyAttribute, "attr1_terms is empty"});
  if (raw.attr2_terms.empty()) errors.push_back({ErrorCode::EmptyAttribute, "attr2_terms is empty"});
  if (raw.group1_terms.size() != raw.group2_terms.size()) {
    errors.push_back({ErrorCode::UnequalGroupLengths,
                      "group1_terms has " + std::to_string(raw.group1_terms.size()) + " terms but group2_terms has " +
                          std::to_string(raw.group2_terms.size())});
  }

  for (const auto& list : lists) {
    std::vector<std::string> seen;
    for (std::size_t i = 0; i < list.terms->size(); ++i) {
      const auto key = text::lower(text::trim((*list.terms)[i]));
      if (key.empty()) {
        errors.push_back({ErrorCode::EmptyTerm, std::string(list.key) + "[" + std::to_string(i) + "] is empty"});
        continue;
      }
      if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
        errors.push_back({ErrorCode::DuplicateTerm, "'" + (*list.terms)[i] + "' appears more than once in " + list.key});
      }
      seen.push_back(key);
    }
  }

  // Cross-list collisions. A1/A2 overlap is tolerated with a warning; any
  // collision involving a group list makes the term's role ambiguous.
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      for (const auto& ta : *lists[a].terms) {
        const auto ka = text::lower(text::trim(ta));
        if (ka.empty()) continue;
        const bool hit = std::any_of(lists[b].terms->begin(), lists[b].terms->end(),
                                     [&](const std::string& tb) { return text::lower(text::trim(tb)) == ka; });
        if (!hit) continue;
        const std::string msg = "'" + ta + "' appears in both " + lists[a].key + " and " + lists[b].key;
        if (a == 2 && b == 3) {
          warnings.push_back({ErrorCode::AmbiguousTerm, msg});
        } else {
          errors.push_back({ErrorCode::AmbiguousTerm, msg});
        }
      }
    }
  }

  if (!errors.empty()) return errors;
  return ValidatedSpec(raw, std::move(warnings));
}

/// Throwing convenience wrapper; the exception lists every violation.
inline ValidatedSpec require_valid(const BiasSpecification& raw) {
  auto result = validate_spec(raw);
  if (auto* errors = std::get_if<ValidationErrorList>(&result)) {
    std::string msg = "specification '" + raw.name + "' is invalid:";
    for (const auto& e : *errors) msg += " [" + std::string(to_string(e.code)) + "] " + e.message + ";";
    throw Error(errors->front().code, msg);
  }
  return std::get<ValidatedSpec>(std::move(result));
}

struct GroupRole {
  GroupIndex group;
  std::size_t position;
};

inline std::optional<GroupRole> find_group_term(const BiasSpecification& spec, std::string_view term) {
  const auto key = text::lower(text::trim(term));
  for (auto g : {GroupIndex::G1, GroupIndex::G2}) {
    const auto& terms = spec.group_terms(g);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (text::lower(text::trim(terms[i])) == key) return GroupRole{g, i};
    }
  }
  return std::nullopt;
}

inline std::optional<AttributeIndex> find_attribute_term(const BiasSpecification& spec, std::string_view term) {
  const auto key = text::lower(text::trim(term));
  for (auto a : {AttributeIndex::A1, AttributeIndex::A2}) {
    for (const auto& t : spec.attribute_terms(a)) {
      if (text::lower(text::trim(t)) == key) return a;
    }
  }
  return std::nullopt;
}

/// The phrase at the same position in the opposite group list.
inline std::string counterpart(const ValidatedSpec& spec, std::string_view term) {
  const auto role = find_group_term(spec.spec(), term);
  if (!role) throw Error(ErrorCode::UnknownTerm, "'" + std::string(term) + "' is not a group term of " + spec.name());
  return spec->group_terms(other(role->group))[role->position];
}

inline Orientation orientation(GroupIndex group, AttributeIndex attribute) {
  const bool aligned = (group == GroupIndex::G1) == (attribute == AttributeIndex::A1);
  return aligned ? Orientation::Stereotype : Orientation::AntiStereotype;
}

inline Orientation orientation(const ValidatedSpec&, GroupIndex group, AttributeIndex attribute) {
  return orientation(group, attribute);
}

/// Every attribute term in order: attr1 first, then attr2.
inline std::vector<std::pair<std::string, AttributeIndex>> all_attributes(const BiasSpecification& spec) {
  std::vector<std::pair<std::string, AttributeIndex>> out;
  for (const auto& t : spec.attr1_terms) out.emplace_back(t, AttributeIndex::A1);
  for (const auto& t : spec.attr2_terms) out.emplace_back(t, AttributeIndex::A2);
  return out;
}

// --- JSON ----------------------------------------------------------------

inline nlohmann::ordered_json to_json(const BiasSpecification& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["group1_label"] = s.group1_label;
  j["group1_terms"] = s.group1_terms;
  j["group2_label"] = s.group2_label;
  j["group2_terms"] = s.group2_terms;
  j["attr1_label"] = s.attr1_label;
  j["attr1_terms"] = s.attr1_terms;
  j["attr2_label"] = s.attr2_label;
  j["attr2_terms"] = s.attr2_terms;
  j["source"] = std::string(to_string(s.source));
  if (!s.notes.empty()) j["notes"] = s.notes;
  return j;
}

template <typename Json>
BiasSpecification spec_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "specification must be a JSON object");
  auto str = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key)) {
      if (required) throw Error(ErrorCode::SchemaViolation, std::string("missing key '") + key + "'");
      return {};
    }
    if (!j.at(key).is_string()) throw Error(ErrorCode::SchemaViolation, std::string("'") + key + "' must be a string");
    return j.at(key).template get<std::string>();
  };
  auto list = [&](const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::SchemaViolation, std::string("missing key '") + key + "'");
    const auto& arr = j.at(key);
    if (!arr.is_array()) throw Error(ErrorCode::SchemaViolation, std::string("'") + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& v : arr) {
      if (!v.is_string()) throw Error(ErrorCode::SchemaViolation, std::string("'") + key + "' must hold strings");
      out.push_back(v.template get<std::string>());
    }
    return out;
  };
  BiasSpecification s;
  s.name = str("name", true);
  s.group1_label = str("group1_label", false);
  s.group1_terms = list("group1_terms");
  s.group2_label = str("group2_label", false);
  s.group2_terms = list("group2_terms");
  s.attr1_label = str("attr1_label", false);
  s.attr1_terms = list("attr1_terms");
  s.attr2_label = str("attr2_label", false);
  s.attr2_terms = list("attr2_terms");
  const auto src = str("source", false);
  s.source = src.empty() ? SpecSource::Custom : parse_source(src);
  s.notes = str("notes", false);
  return s;
}

inline BiasSpecification load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open spec file " + path);
  try {
    return spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, path + ": " + e.what());
  }
}

inline void save_spec_file(const BiasSpecification& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write spec file " + path);
  out << to_json(spec).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

inline nlohmann::ordered_json to_json(const ValidationErrorList& errors) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : errors) {
    arr.push_back({{"code", std::string(to_string(e.code))}, {"message", e.message}});
  }
  return arr;
}

}  // namespace biastest::specs
