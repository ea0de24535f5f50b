#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/rng.hpp"
#include "json.hpp"

namespace fairlab {
namespace {

constexpr std::array kBackgrounds = {
    "a first-generation immigrant raised in a bilingual household",
    "a lifelong resident of a small farming town",
    "someone who grew up moving between military bases",
    "a city-raised child of two university lecturers",
    "a member of a large, tight-knit religious family",
    "a former exchange student who settled abroad",
};
constexpr std::array kProfessions = {
    "works as a sociologist studying media consumption",
    "is an emergency-room nurse with irregular hours",
    "runs a neighbourhood video rental and repair shop",
    "is a software engineer at a streaming company",
    "teaches high-school literature",
    "is a retired film critic who still writes a blog",
    "works as a cultural anthropologist",
    "is a marketing analyst for a cinema chain",
};
constexpr std::array kAges = {
    "in their early twenties and shaped by social media",
    "in their mid-thirties, a millennial who grew up with VHS",
    "in their fifties and raised on broadcast television",
    "in their late sixties with memories of drive-in theatres",
};
constexpr std::array kTraits = {
    "is analytical and distrusts easy stereotypes",
    "is empathetic and reads emotion into every choice",
    "is skeptical and weighs counter-evidence carefully",
    "is intuitive and quick to form impressions",
    "is detail-oriented and notices genre patterns",
};

std::string mock_persona(std::uint64_t seed, std::size_t i) {
  Rng rng(derive_seed(seed, i, 0x9e450));
  std::ostringstream out;
  out << "A person who is " << kBackgrounds[rng.uniform_index(kBackgrounds.size())]
      << ", " << kAges[rng.uniform_index(kAges.size())] << ". This person "
      << kProfessions[rng.uniform_index(kProfessions.size())] << " and "
      << kTraits[rng.uniform_index(kTraits.size())]
      << ". They follow current media trends closely.";
  return out.str();
}

std::string mock_persona_response(std::uint64_t seed, std::size_t count) {
  std::ostringstream out;
  out << "Here are the personas:\n\n";
  for (std::size_t i = 0; i < count; ++i) {
    out << (i + 1) << ". " << mock_persona(seed, i) << "\n\n";
  }
  return out.str();
}

// Splits the summarizer prompt into the annotator blocks it embeds. A block
// runs from a "### Annotator k" header to the next header or blank line.
std::vector<std::string> annotator_blocks(std::string_view prompt) {
  std::vector<std::string> blocks;
  std::istringstream in{std::string(prompt)};
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (line.rfind("### Annotator", 0) == 0) {
      blocks.emplace_back();
      inside = true;
      continue;
    }
    if (line.rfind("###", 0) == 0 || line.empty()) {
      inside = false;
      continue;
    }
    if (inside) {
      if (!blocks.back().empty()) blocks.back() += '\n';
      blocks.back() += line;
    }
  }
  return blocks;
}

std::string tally_summary(std::string_view prompt, const AttributeSchema& schema) {
  const auto blocks = annotator_blocks(prompt);
  std::vector<std::size_t> votes(schema.arity(), 0);
  std::ostringstream out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const int label = verbalize(blocks[i], schema);
    out << "Annotator " << (i + 1);
    if (label == kAbstain) {
      out << " gave no usable inference. ";
    } else {
      out << " inferred " << schema.keywords[label].front() << ". ";
      ++votes[label];
    }
  }
  std::size_t best = 0;
  bool tie = false;
  for (std::size_t l = 1; l < votes.size(); ++l) {
    if (votes[l] > votes[best]) {
      best = l;
      tie = false;
    } else if (votes[l] == votes[best]) {
      tie = true;
    }
  }
  if (votes[best] == 0 || tie) {
    out << "The annotations are evenly split, so no definitive inference can be "
           "made.";
  } else {
    out << "Weighing these inferences, I infer that the user is likely "
        << schema.keywords[best].front() << ".";
  }
  return out.str();
}

}  // namespace

std::string_view request_kind_name(RequestKind kind) {
  switch (kind) {
    case RequestKind::kPersonas:
      return "personas";
    case RequestKind::kAnnotate:
      return "annotate";
    case RequestKind::kSummarize:
      return "summarize";
  }
  return "annotate";
}

namespace {

RequestKind parse_request_kind(std::string_view name) {
  if (name == "personas") return RequestKind::kPersonas;
  if (name == "annotate") return RequestKind::kAnnotate;
  if (name == "summarize") return RequestKind::kSummarize;
  throw ParseError("unknown request kind '" + std::string(name) + "'");
}

}  // namespace

std::string simulated_annotation_text(const AttributeSchema& schema, int label) {
  return "Based on the viewing history, I infer that the user is likely " +
         schema.keywords.at(static_cast<std::size_t>(label)).front() + ".";
}

int simulated_annotation_label(std::span<const double> confusion_row,
                               std::uint64_t seed, std::size_t user,
                               int annotator) {
  Rng rng(derive_seed(seed, user, static_cast<std::uint64_t>(annotator) + 1));
  return static_cast<int>(rng.categorical(confusion_row));
}

void validate_confusions(
    std::span<const std::vector<std::vector<double>>> confusions,
    std::size_t arity) {
  if (confusions.empty()) throw ValidationError("no confusion matrices given");
  for (std::size_t i = 0; i < confusions.size(); ++i) {
    const auto& f = confusions[i];
    if (f.size() != arity) {
      throw ValidationError("confusion matrix " + std::to_string(i) +
                            " must have " + std::to_string(arity) + " rows");
    }
    for (const auto& row : f) {
      if (row.size() != arity) {
        throw ValidationError("confusion matrix " + std::to_string(i) +
                              " is not square");
      }
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) {
          throw ValidationError("confusion matrix " + std::to_string(i) +
                                " has a negative entry");
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("confusion matrix " + std::to_string(i) +
                              " has a row summing to " + std::to_string(sum));
      }
    }
  }
}

MockBackend::MockBackend(AttributeSchema schema, std::uint64_t seed)
    : schema_(std::move(schema)), seed_(seed) {
  schema_.validate();
}

std::string MockBackend::complete(const ChatRequest& request) {
  switch (request.context.kind) {
    case RequestKind::kPersonas:
      return mock_persona_response(seed_, request.context.count);
    case RequestKind::kAnnotate: {
      const auto h = splitmix64(seed_ ^ fnv1a(request.system) ^
                                splitmix64(fnv1a(request.user)));
      const auto label = static_cast<int>(h % schema_.arity());
      return "The history mixes several genres. " +
             simulated_annotation_text(schema_, label);
    }
    case RequestKind::kSummarize:
      return tally_summary(request.user, schema_);
  }
  return {};
}

SimulatedBackend::SimulatedBackend(
    AttributeSchema schema, GroundTruthLabels labels,
    std::vector<std::vector<std::vector<double>>> confusions, std::uint64_t seed)
    : schema_(std::move(schema)),
      labels_(std::move(labels)),
      confusions_(std::move(confusions)),
      seed_(seed) {
  schema_.validate();
  if (labels_.visibility != LabelVisibility::kSimulation) {
    throw ArgumentError("simulated annotators need simulation-visible labels");
  }
  validate_confusions(confusions_, schema_.arity());
}

std::string SimulatedBackend::complete(const ChatRequest& request) {
  const auto& ctx = request.context;
  switch (ctx.kind) {
    case RequestKind::kPersonas:
      return mock_persona_response(seed_, ctx.count);
    case RequestKind::kAnnotate: {
      if (ctx.annotator < 0 ||
          static_cast<std::size_t>(ctx.annotator) >= confusions_.size()) {
        throw ValidationError("no planted confusion for annotator " +
                              std::to_string(ctx.annotator));
      }
      if (ctx.user >= labels_.labels.size() || labels_.labels[ctx.user] < 0) {
        throw ValidationError("no hidden label for user " + std::to_string(ctx.user));
      }
      const auto& row = confusions_[ctx.annotator][labels_.labels[ctx.user]];
      return simulated_annotation_text(
          schema_, simulated_annotation_label(row, seed_, ctx.user, ctx.annotator));
    }
    case RequestKind::kSummarize:
      return tally_summary(request.user, schema_);
  }
  return {};
}

ScriptedBackend::ScriptedBackend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      add(parse_request_kind(j.at("kind").get<std::string>()),
          j.value("user", std::size_t{0}), j.value("annotator", -1),
          j.at("response").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
}

void ScriptedBackend::add(RequestKind kind, std::size_t user, int annotator,
                          std::string response) {
  std::lock_guard lock(mutex_);
  responses_[{static_cast<int>(kind), user, annotator}].push_back(std::move(response));
}

std::string ScriptedBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  const auto& ctx = request.context;
  const int annotator = ctx.kind == RequestKind::kAnnotate ? ctx.annotator : -1;
  const std::size_t user = ctx.kind == RequestKind::kPersonas ? 0 : ctx.user;
  const Key key{static_cast<int>(ctx.kind), user, annotator};
  const auto it = responses_.find(key);
  if (it == responses_.end() || it->second.empty()) {
    throw TransportError("no scripted response for " +
                         std::string(request_kind_name(ctx.kind)) + " user " +
                         std::to_string(user) + " annotator " +
                         std::to_string(annotator));
  }
  auto& cursor = cursor_[key];
  const auto& out = it->second[std::min(cursor, it->second.size() - 1)];
  ++cursor;
  return out;
}

RecordingBackend::RecordingBackend(std::shared_ptr<CompletionBackend> inner,
                                   std::filesystem::path path)
    : inner_(std::move(inner)), path_(std::move(path)) {}

std::string RecordingBackend::complete(const ChatRequest& request) {
  auto response = inner_->complete(request);
  const auto& ctx = request.context;
  nlohmann::json j;
  j["kind"] = request_kind_name(ctx.kind);
  j["user"] = ctx.kind == RequestKind::kPersonas ? 0 : ctx.user;
  j["annotator"] = ctx.kind == RequestKind::kAnnotate ? ctx.annotator : -1;
  j["response"] = response;
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to " + path_.string());
  out << j.dump() << '\n';
  return response;
}

}  // namespace fairlab
