#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_set>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"

namespace fairlab {
namespace {

const std::unordered_set<std::string_view> kNegations = {
    "not", "no", "never", "isn't", "isnt", "unlikely", "neither", "nor",
    "hardly", "doesn't", "cannot", "can't", "rather"};

const std::unordered_set<std::string_view> kConcessive = {
    "while", "although", "though", "whereas", "despite", "even"};

const std::unordered_set<std::string_view> kInferenceCues = {
    "infer", "likely", "conclude", "conclusion", "deduce", "predict",
    "guess", "determine"};

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?' || c == '\n') {
      if (!tokenize_words(current).empty()) out.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!tokenize_words(current).empty()) out.push_back(current);
  return out;
}

// Labels asserted by one sentence after the concessive and negation rules.
std::set<int> sentence_labels(const std::string& sentence,
                              const AttributeSchema& schema) {
  auto tokens = tokenize_words(sentence);
  if (!tokens.empty() && kConcessive.contains(tokens.front())) {
    const auto comma = sentence.rfind(',');
    if (comma == std::string::npos) return {};
    tokens = tokenize_words(std::string_view(sentence).substr(comma + 1));
  }
  std::set<int> labels;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    bool negated = false;
    for (std::size_t back = 1; back <= 3 && back <= t; ++back) {
      if (kNegations.contains(tokens[t - back])) negated = true;
    }
    if (negated) continue;
    for (std::size_t label = 0; label < schema.arity(); ++label) {
      const auto& keys = schema.keywords[label];
      if (std::find(keys.begin(), keys.end(), tokens[t]) != keys.end()) {
        labels.insert(static_cast<int>(label));
      }
    }
  }
  return labels;
}

bool has_cue(const std::string& sentence) {
  const auto tokens = tokenize_words(sentence);
  return std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) {
    return kInferenceCues.contains(t);
  });
}

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    // Typographic apostrophes arrive as multi-byte UTF-8; treat them as breaks.
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void AttributeSchema::validate() const {
  if (names.empty() || keywords.size() != names.size()) {
    throw ConfigError("attribute schema needs one keyword set per label");
  }
  if (names.size() < 2) throw ConfigError("attribute schema needs >= 2 labels");
  std::set<std::string> seen;
  for (const auto& keys : keywords) {
    if (keys.empty()) throw ConfigError("attribute schema has an empty keyword set");
    for (const auto& k : keys) {
      if (k.empty() || std::any_of(k.begin(), k.end(), [](char c) {
            return std::isupper(static_cast<unsigned char>(c)) != 0;
          })) {
        throw ConfigError("schema keyword '" + k + "' must be nonempty lowercase");
      }
      if (!seen.insert(k).second) {
        throw ConfigError("schema keyword '" + k + "' belongs to two labels");
      }
    }
  }
}

AttributeSchema AttributeSchema::gender() {
  return AttributeSchema{
      {"male", "female"},
      {{"male", "males", "man", "men", "boy", "boys", "masculine", "guy", "guys"},
       {"female", "females", "woman", "women", "girl", "girls", "feminine",
        "lady", "ladies"}}};
}

int verbalize(std::string_view raw_text, const AttributeSchema& schema) {
  schema.validate();
  const auto sentences = split_sentences(raw_text);
  if (sentences.empty()) return kAbstain;

  const auto decide = [](const std::set<int>& labels) {
    return labels.size() == 1 ? *labels.begin() : kAbstain;
  };

  const auto final_labels = sentence_labels(sentences.back(), schema);
  if (!final_labels.empty()) return decide(final_labels);

  std::set<int> cue_labels;
  for (const auto& s : sentences) {
    if (has_cue(s)) {
      const auto labels = sentence_labels(s, schema);
      cue_labels.insert(labels.begin(), labels.end());
    }
  }
  if (!cue_labels.empty()) return decide(cue_labels);

  std::set<int> all_labels;
  for (const auto& s : sentences) {
    const auto labels = sentence_labels(s, schema);
    all_labels.insert(labels.begin(), labels.end());
  }
  return decide(all_labels);
}

}  // namespace fairlab
