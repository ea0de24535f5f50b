#include <fstream>
#include <limits>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "json.hpp"

namespace fairlab {
namespace {

using nlohmann::json;

json parse_line(std::string_view line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
}

template <typename T, typename Decode>
std::vector<T> read_jsonl(const std::filesystem::path& path, Decode decode) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(decode(line));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, std::span<const T> items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& item : items) out << to_json_line(item) << '\n';
}

}  // namespace

std::string to_json_line(const AnnotationRecord& record) {
  json j;
  j["user"] = record.user;
  j["annotator"] = record.annotator;
  j["raw_text"] = record.raw_text;
  j["label"] = record.abstained() ? json(nullptr) : json(record.label);
  j["abstained"] = record.abstained();
  j["backend"] = record.backend_tag;
  return j.dump();
}

AnnotationRecord annotation_from_json(std::string_view line) {
  const auto j = parse_line(line);
  AnnotationRecord r;
  r.user = j.at("user").get<std::size_t>();
  r.annotator = j.at("annotator").get<int>();
  r.raw_text = j.at("raw_text").get<std::string>();
  r.label = j.at("label").is_null() ? kAbstain : j.at("label").get<int>();
  if (j.at("abstained").get<bool>() != r.abstained()) {
    throw ParseError("abstained flag disagrees with label");
  }
  r.backend_tag = j.at("backend").get<std::string>();
  return r;
}

std::string to_json_line(const RationaleSummary& summary) {
  json j;
  j["user"] = summary.user;
  j["summary"] = summary.summary_text;
  j["final_label"] =
      summary.final_label == kAbstain ? json(nullptr) : json(summary.final_label);
  return j.dump();
}

RationaleSummary summary_from_json(std::string_view line) {
  const auto j = parse_line(line);
  RationaleSummary s;
  s.user = j.at("user").get<std::size_t>();
  s.summary_text = j.at("summary").get<std::string>();
  s.final_label =
      j.at("final_label").is_null() ? kAbstain : j.at("final_label").get<int>();
  return s;
}

std::string to_json_line(const PersonaProfile& persona) {
  json j;
  j["persona_id"] = persona.persona_id;
  j["description"] = persona.description;
  return j.dump();
}

PersonaProfile persona_from_json(std::string_view line) {
  const auto j = parse_line(line);
  PersonaProfile p;
  p.persona_id = j.at("persona_id").get<int>();
  p.description = j.at("description").get<std::string>();
  if (p.description.empty()) throw ParseError("empty persona description");
  return p;
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  return read_jsonl<AnnotationRecord>(path, annotation_from_json);
}
void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationRecord> records) {
  write_jsonl(path, records);
}
std::vector<RationaleSummary> read_summaries(const std::filesystem::path& path) {
  return read_jsonl<RationaleSummary>(path, summary_from_json);
}
void write_summaries(const std::filesystem::path& path,
                     std::span<const RationaleSummary> summaries) {
  write_jsonl(path, summaries);
}
std::vector<PersonaProfile> read_personas(const std::filesystem::path& path) {
  return read_jsonl<PersonaProfile>(path, persona_from_json);
}
void write_personas(const std::filesystem::path& path,
                    std::span<const PersonaProfile> personas) {
  write_jsonl(path, personas);
}

void AnnotationStore::put(AnnotationRecord record) {
  std::lock_guard lock(mutex_);
  const Key key{record.user, record.annotator};
  records_.insert_or_assign(key, std::move(record));
}

bool AnnotationStore::contains(std::size_t user, int annotator) const {
  std::lock_guard lock(mutex_);
  return records_.contains({user, annotator});
}

std::size_t AnnotationStore::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
  std::lock_guard lock(mutex_);
  std::vector<AnnotationRecord> out;
  out.reserve(records_.size());
  for (const auto& [key, record] : records_) out.push_back(record);
  return out;
}

std::vector<AnnotationRecord> AnnotationStore::for_user(std::size_t user) const {
  std::lock_guard lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (auto it = records_.lower_bound({user, std::numeric_limits<int>::min()});
       it != records_.end() && it->first.first == user; ++it) {
    out.push_back(it->second);
  }
  return out;
}

}  // namespace fairlab
