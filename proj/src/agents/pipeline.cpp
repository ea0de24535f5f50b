#include <regex>
#include <sstream>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"

namespace fairlab {
namespace {

std::string trim_copy(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

}  // namespace

std::vector<std::string> parse_personas(std::string_view response) {
  // "1.", "2)", "**3.**", "### 4:", "Persona 5:" at the start of a line.
  static const std::regex kItem(
      R"(^\s*(?:[#*]+\s*)?(?:persona\s*)?(\d+)\s*[.):]\**\s*(.*)$)",
      std::regex::icase);
  std::vector<std::string> blocks;
  std::istringstream in{std::string(response)};
  std::string line;
  std::size_t expected = 1;
  while (std::getline(in, line)) {
    std::smatch match;
    if (std::regex_match(line, match, kItem) &&
        std::stoul(match[1].str()) == expected) {
      blocks.push_back(trim_copy(match[2].str()));
      ++expected;
      continue;
    }
    if (blocks.empty()) continue;  // preamble
    const auto text = trim_copy(line);
    if (text.empty()) continue;
    if (!blocks.back().empty()) blocks.back() += ' ';
    blocks.back() += text;
  }
  std::erase_if(blocks, [](const std::string& b) { return b.empty(); });
  return blocks;
}

std::vector<PersonaProfile> generate_personas(CompletionBackend& backend,
                                              const PromptTemplates& templates,
                                              std::size_t n_personas,
                                              const DecodeParams& decode) {
  if (n_personas < 1) throw ArgumentError("need at least one persona");
  const std::pair<std::string, std::string> slots[] = {
      {"n_personas", std::to_string(n_personas)}};
  ChatRequest request;
  request.user = render_template(templates.persona_editor, slots);
  request.decode = decode;
  request.context.kind = RequestKind::kPersonas;
  request.context.count = n_personas;
  std::size_t last_count = 0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto blocks = parse_personas(backend.complete(request));
    if (blocks.size() == n_personas) {
      std::vector<PersonaProfile> personas;
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        personas.push_back({static_cast<int>(i), blocks[i], {}});
      }
      return personas;
    }
    last_count = blocks.size();
  }
  throw PersonaParseError("persona editor returned " + std::to_string(last_count) +
                          " personas, expected " + std::to_string(n_personas));
}

AnnotationRecord annotate_user(CompletionBackend& backend,
                               const PromptTemplates& templates,
                               const PersonaProfile& persona,
                               std::span<const std::string> history_titles,
                               const AttributeSchema& schema, std::size_t user,
                               const DecodeParams& decode) {
  if (history_titles.empty()) {
    throw ArgumentError("user " + std::to_string(user) + " has an empty history");
  }
  const std::pair<std::string, std::string> slots[] = {
      {"persona", persona.description},
      {"history", format_history(history_titles)}};
  ChatRequest request;
  request.system = render_template(templates.annotator_system, slots);
  request.user = render_template(templates.annotator_user, slots);
  request.decode = decode;
  request.context = {RequestKind::kAnnotate, user, persona.persona_id, 0};
  AnnotationRecord record;
  record.user = user;
  record.annotator = persona.persona_id;
  record.raw_text = backend.complete(request);
  record.label = verbalize(record.raw_text, schema);
  record.backend_tag = backend.tag();
  return record;
}

RationaleSummary summarize_user(CompletionBackend& backend,
                                const PromptTemplates& templates,
                                std::span<const std::string> history_titles,
                                std::span<const AnnotationRecord> annotations,
                                const AttributeSchema& schema,
                                const DecodeParams& decode) {
  if (annotations.empty()) throw ArgumentError("summary needs at least one annotation");
  std::string blocks;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (i > 0) blocks += '\n';
    blocks += "### Annotator " + std::to_string(i + 1) + "\n" + annotations[i].raw_text;
  }
  const std::pair<std::string, std::string> slots[] = {
      {"history", format_history(history_titles)}, {"annotations", blocks}};
  ChatRequest request;
  request.system = render_template(templates.summarizer_system, slots);
  request.user = render_template(templates.summarizer_user, slots);
  request.decode = decode;
  request.context = {RequestKind::kSummarize, annotations.front().user, -1, 0};
  RationaleSummary summary;
  summary.user = annotations.front().user;
  summary.summary_text = backend.complete(request);
  summary.final_label = verbalize(summary.summary_text, schema);
  return summary;
}

std::vector<AnnotationRecord> simulate_annotations(
    const GroundTruthLabels& labels,
    std::span<const std::vector<std::vector<double>>> confusions,
    const AttributeSchema& schema, std::uint64_t seed) {
  if (labels.visibility != LabelVisibility::kSimulation) {
    throw ArgumentError("simulated annotators need simulation-visible labels");
  }
  validate_confusions(confusions, schema.arity());
  std::vector<AnnotationRecord> out;
  out.reserve(labels.labels.size() * confusions.size());
  for (std::size_t u = 0; u < labels.labels.size(); ++u) {
    if (labels.labels[u] < 0) continue;
    for (std::size_t i = 0; i < confusions.size(); ++i) {
      const int annotator = static_cast<int>(i);
      const int label = simulated_annotation_label(
          confusions[i][static_cast<std::size_t>(labels.labels[u])], seed, u,
          annotator);
      AnnotationRecord r;
      r.user = u;
      r.annotator = annotator;
      r.raw_text = simulated_annotation_text(schema, label);
      r.label = verbalize(r.raw_text, schema);
      r.backend_tag = "simulated";
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace fairlab
