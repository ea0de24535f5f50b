#include <fstream>
#include <sstream>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/prompt_defaults.hpp"

namespace fairlab {
namespace {

std::string read_or(const std::filesystem::path& path, std::string_view fallback) {
  std::ifstream in(path);
  if (!in) return std::string(fallback);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::string text = buffer.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  return {std::string(prompt_defaults::persona_editor),
          std::string(prompt_defaults::annotator_system),
          std::string(prompt_defaults::annotator_user),
          std::string(prompt_defaults::summarizer_system),
          std::string(prompt_defaults::summarizer_user)};
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  const auto d = defaults();
  return {read_or(dir / "persona_editor.txt", d.persona_editor),
          read_or(dir / "annotator_system.txt", d.annotator_system),
          read_or(dir / "annotator_user.txt", d.annotator_user),
          read_or(dir / "summarizer_system.txt", d.summarizer_system),
          read_or(dir / "summarizer_user.txt", d.summarizer_user)};
}

std::string render_template(
    std::string_view text,
    std::span<const std::pair<std::string, std::string>> values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = text.substr(i + 1, close - i - 1);
        bool found = false;
        for (const auto& [key, value] : values) {
          if (key == name) {
            out += value;
            found = true;
            break;
          }
        }
        if (!found) {
          throw ConfigError("template slot {" + std::string(name) + "} has no value");
        }
        i = close + 1;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

std::string format_history(std::span<const std::string> titles) {
  std::string out;
  for (std::size_t i = 0; i < titles.size(); ++i) {
    if (i > 0) out += '\n';
    out += titles[i];
  }
  return out;
}

}  // namespace fairlab
