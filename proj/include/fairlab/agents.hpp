#pragma once

// Multi-persona sensitive-attribute inference: a persona editor writes
// annotator personas, each annotator labels a user's history, a verbalizer
// turns the free text into a category, and a meta summarizer writes one
// rationale per user. Completion and embedding backends are pluggable; the
// mock, scripted and simulated backends are deterministic and offline.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "fairlab/data.hpp"

namespace fairlab {

inline constexpr int kAbstain = -1;

// Ordered label names with lowercase keyword sets (one per label, disjoint).
struct AttributeSchema {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> keywords;

  std::size_t arity() const { return names.size(); }
  void validate() const;  // ConfigError on empty / overlapping / uppercase
  static AttributeSchema gender();
};

// ---------------------------------------------------------------------------
// Verbalizer

// Maps free text to a label index or kAbstain. Tokens are lowercase words;
// keywords match whole tokens. A keyword occurrence is dropped when one of the
// three preceding tokens is a negation, and a sentence opening with a
// concessive marker (while, although, ...) only counts the clause after its
// last comma. Scopes are tried in order:
//   1. the final sentence,
//   2. all sentences carrying an inference cue (infer, likely, conclude, ...),
//   3. the whole text.
// The first scope mentioning any label decides: exactly one label matched
// gives that label, several give kAbstain. No mention anywhere gives kAbstain.
int verbalize(std::string_view raw_text, const AttributeSchema& schema);

// ---------------------------------------------------------------------------
// Records

struct PersonaProfile {
  int persona_id = 0;
  std::string description;
  std::vector<double> embedding;
};

struct AnnotationRecord {
  std::size_t user = 0;
  int annotator = 0;
  std::string raw_text;
  int label = kAbstain;
  std::string backend_tag;

  bool abstained() const { return label == kAbstain; }
  bool operator==(const AnnotationRecord&) const = default;
};

struct RationaleSummary {
  std::size_t user = 0;
  std::string summary_text;
  std::vector<double> embedding;
  int final_label = kAbstain;
};

// JSONL codecs. Users are written as dense indices.
std::string to_json_line(const AnnotationRecord& record);
AnnotationRecord annotation_from_json(std::string_view line);
std::string to_json_line(const RationaleSummary& summary);
RationaleSummary summary_from_json(std::string_view line);
std::string to_json_line(const PersonaProfile& persona);
PersonaProfile persona_from_json(std::string_view line);

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationRecord> records);
std::vector<RationaleSummary> read_summaries(const std::filesystem::path& path);
void write_summaries(const std::filesystem::path& path,
                     std::span<const RationaleSummary> summaries);
std::vector<PersonaProfile> read_personas(const std::filesystem::path& path);
void write_personas(const std::filesystem::path& path,
                    std::span<const PersonaProfile> personas);

// Thread-safe, keyed by (user, annotator); iteration order is key order so
// the stored result does not depend on arrival order.
class AnnotationStore {
 public:
  using Key = std::pair<std::size_t, int>;

  void put(AnnotationRecord record);
  bool contains(std::size_t user, int annotator) const;
  std::size_t size() const;
  std::vector<AnnotationRecord> records() const;
  std::vector<AnnotationRecord> for_user(std::size_t user) const;

 private:
  mutable std::mutex mutex_;
  std::map<Key, AnnotationRecord> records_;
};

// ---------------------------------------------------------------------------
// Prompt templates

struct PromptTemplates {
  std::string persona_editor;
  std::string annotator_system;
  std::string annotator_user;
  std::string summarizer_system;
  std::string summarizer_user;

  static PromptTemplates defaults();
  // Reads <dir>/<name>.txt for every template, falling back to defaults for
  // files that are absent.
  static PromptTemplates load(const std::filesystem::path& dir);
};

// Replaces every {name} slot; an unknown slot left in the template is a
// ConfigError.
std::string render_template(
    std::string_view text,
    std::span<const std::pair<std::string, std::string>> values);

std::string format_history(std::span<const std::string> titles);

// ---------------------------------------------------------------------------
// Completion backends

enum class RequestKind { kPersonas, kAnnotate, kSummarize };
std::string_view request_kind_name(RequestKind kind);

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct RequestContext {
  RequestKind kind = RequestKind::kAnnotate;
  std::size_t user = 0;
  int annotator = -1;
  std::size_t count = 0;  // personas requested
};

struct ChatRequest {
  std::string system;
  std::string user;
  DecodeParams decode;
  RequestContext context;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  // Throws TransportError on failure.
  virtual std::string complete(const ChatRequest& request) = 0;
  virtual std::string tag() const = 0;
};

// Content-free deterministic responses derived from a hash of the prompt.
class MockBackend : public CompletionBackend {
 public:
  MockBackend(AttributeSchema schema, std::uint64_t seed);
  std::string complete(const ChatRequest& request) override;
  std::string tag() const override { return "mock"; }

 private:
  AttributeSchema schema_;
  std::uint64_t seed_;
};

// Annotators sample their label from a planted confusion row of the hidden
// true label. The summarizer tallies the annotator texts in its prompt.
class SimulatedBackend : public CompletionBackend {
 public:
  SimulatedBackend(AttributeSchema schema, GroundTruthLabels labels,
                   std::vector<std::vector<std::vector<double>>> confusions,
                   std::uint64_t seed);
  std::string complete(const ChatRequest& request) override;
  std::string tag() const override { return "simulated"; }

 private:
  AttributeSchema schema_;
  GroundTruthLabels labels_;
  std::vector<std::vector<std::vector<double>>> confusions_;
  std::uint64_t seed_;
};

// Replays responses from a JSONL file of
//   {"kind": "personas"|"annotate"|"summarize", "user": int, "annotator": int,
//    "response": str}
// Entries sharing a key are served in order; the last one repeats.
class ScriptedBackend : public CompletionBackend {
 public:
  explicit ScriptedBackend(const std::filesystem::path& path);
  void add(RequestKind kind, std::size_t user, int annotator,
           std::string response);
  ScriptedBackend() = default;
  std::string complete(const ChatRequest& request) override;
  std::string tag() const override { return "scripted"; }

 private:
  using Key = std::tuple<int, std::size_t, int>;
  std::mutex mutex_;
  std::map<Key, std::vector<std::string>> responses_;
  std::map<Key, std::size_t> cursor_;
};

// Wraps another backend and appends every exchange to a scripted-format file.
class RecordingBackend : public CompletionBackend {
 public:
  RecordingBackend(std::shared_ptr<CompletionBackend> inner,
                   std::filesystem::path path);
  std::string complete(const ChatRequest& request) override;
  std::string tag() const override { return inner_->tag(); }

 private:
  std::shared_ptr<CompletionBackend> inner_;
  std::filesystem::path path_;
  std::mutex mutex_;
};

struct HttpSettings {
  std::string endpoint;  // full URL of the chat-completions route
  std::string model;
  std::string api_key;
  int timeout_seconds = 120;

  // FAIRLAB_LLM_URL, FAIRLAB_LLM_MODEL, FAIRLAB_LLM_API_KEY
  static HttpSettings from_environment();
};

// OpenAI-compatible chat-completions client.
class HttpBackend : public CompletionBackend {
 public:
  explicit HttpBackend(HttpSettings settings);
  std::string complete(const ChatRequest& request) override;
  std::string tag() const override { return "http"; }

 private:
  HttpSettings settings_;
};

// Confusion rows must be probability vectors (sum 1 within 1e-9).
void validate_confusions(
    std::span<const std::vector<std::vector<double>>> confusions,
    std::size_t arity);

// ---------------------------------------------------------------------------
// Text embedding

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

// Seeded signed random projection of lowercase word counts, unit length.
class HashEmbedder : public TextEmbedder {
 public:
  explicit HashEmbedder(std::size_t dimension = 768, std::uint64_t seed = 0);
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> embed(std::string_view text) override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// OpenAI-compatible embeddings client (FAIRLAB_EMBED_URL, FAIRLAB_EMBED_MODEL,
// FAIRLAB_LLM_API_KEY).
class HttpEmbedder : public TextEmbedder {
 public:
  HttpEmbedder(HttpSettings settings, std::size_t dimension);
  static HttpEmbedder from_environment(std::size_t dimension);
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> embed(std::string_view text) override;

 private:
  HttpSettings settings_;
  std::size_t dimension_;
};

std::vector<std::string> tokenize_words(std::string_view text);

// ---------------------------------------------------------------------------
// Operations

// Splits a persona-editor response on numbered items (1., 2), **3.** ...).
std::vector<std::string> parse_personas(std::string_view response);

std::vector<PersonaProfile> generate_personas(CompletionBackend& backend,
                                              const PromptTemplates& templates,
                                              std::size_t n_personas,
                                              const DecodeParams& decode = {});

AnnotationRecord annotate_user(CompletionBackend& backend,
                               const PromptTemplates& templates,
                               const PersonaProfile& persona,
                               std::span<const std::string> history_titles,
                               const AttributeSchema& schema, std::size_t user,
                               const DecodeParams& decode = {});

RationaleSummary summarize_user(CompletionBackend& backend,
                                const PromptTemplates& templates,
                                std::span<const std::string> history_titles,
                                std::span<const AnnotationRecord> annotations,
                                const AttributeSchema& schema,
                                const DecodeParams& decode = {});

std::vector<double> embed_text(TextEmbedder& embedder, std::string_view text);

// Offline stand-in for the annotator stage: record (u, i) samples its label
// from row labels[u] of confusions[i]. Identical to what SimulatedBackend
// answers for the same seed.
std::vector<AnnotationRecord> simulate_annotations(
    const GroundTruthLabels& labels,
    std::span<const std::vector<std::vector<double>>> confusions,
    const AttributeSchema& schema, std::uint64_t seed);

// Text an offline annotator emits for a label.
std::string simulated_annotation_text(const AttributeSchema& schema, int label);
// Draw from one confusion row, keyed by (seed, user, annotator).
int simulated_annotation_label(std::span<const double> confusion_row,
                               std::uint64_t seed, std::size_t user,
                               int annotator);

}  // namespace fairlab
