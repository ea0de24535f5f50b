#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/kernels.hpp"
#include "oracles.hpp"

using namespace fairlab;
namespace fs = std::filesystem;

namespace {

const AttributeSchema kGender = AttributeSchema::gender();

int expected_label(const std::string& name) {
  if (name == "abstain") return kAbstain;
  for (std::size_t i = 0; i < kGender.arity(); ++i) {
    if (kGender.names[i] == name) return static_cast<int>(i);
  }
  throw std::runtime_error("unknown label " + name);
}

GroundTruthLabels planted(std::vector<int> labels) {
  return {std::move(labels), 2, LabelVisibility::kSimulation};
}

std::vector<std::string> titles() { return {"Heat", "Alien", "Titanic"}; }

}  // namespace

TEST_SUITE("agents") {
  TEST_CASE("reference responses verbalize to their stated labels") {
    CHECK(verbalize(oracle::kAnnotatorExample, kGender) == 0);
    CHECK(verbalize(oracle::kSummarizerExample, kGender) == 1);
    CHECK(verbalize("Based on the movie list, I infer that the user is likely male.", kGender) == 0);
    CHECK(verbalize("I infer that the user is likely a female. Here's my rationale:", kGender) == 1);
    CHECK(verbalize("could be male or female", kGender) == kAbstain);
  }

  TEST_CASE("verbalizer fixture file") {
    const auto cases = oracle::read_verbalizer_cases(FAIRLAB_FIXTURES "/verbalizer_cases.tsv");
    REQUIRE(cases.size() == 20);
    for (const auto& c : cases) {
      CAPTURE(c.text);
      CHECK(verbalize(c.text, kGender) == expected_label(c.expected));
    }
  }

  TEST_CASE("schema validation") {
    AttributeSchema empty;
    CHECK_THROWS_AS(verbalize("male", empty), ConfigError);
    AttributeSchema overlap{{"a", "b"}, {{"x"}, {"x"}}};
    CHECK_THROWS_AS(overlap.validate(), ConfigError);
    AttributeSchema upper{{"a", "b"}, {{"X"}, {"y"}}};
    CHECK_THROWS_AS(upper.validate(), ConfigError);
  }

  TEST_CASE("persona parsing on numbered items") {
    const auto a = parse_personas("Intro.\n1. First persona.\n2) Second one\n**3.** Third");
    REQUIRE(a.size() == 3);
    CHECK(a[0].find("First persona") != std::string::npos);
    CHECK(a[2].find("Third") != std::string::npos);
    CHECK(parse_personas("nothing numbered").empty());
  }

  TEST_CASE("persona generation counts and retries") {
    const auto templates = PromptTemplates::defaults();
    ScriptedBackend one;
    one.add(RequestKind::kPersonas, 0, -1, "1. A quiet archivist.");
    const auto personas = generate_personas(one, templates, 1);
    REQUIRE(personas.size() == 1);
    CHECK(personas[0].description.find("archivist") != std::string::npos);

    ScriptedBackend short_list;
    short_list.add(RequestKind::kPersonas, 0, -1, "1. a\n2. b\n3. c");
    CHECK_THROWS_AS(generate_personas(short_list, templates, 4), PersonaParseError);

    ScriptedBackend second_try;
    second_try.add(RequestKind::kPersonas, 0, -1, "1. a\n2. b");
    second_try.add(RequestKind::kPersonas, 0, -1, "1. a\n2. b\n3. c");
    CHECK(generate_personas(second_try, templates, 3).size() == 3);

    for (std::size_t n : {4UL, 6UL, 8UL, 10UL}) {
      MockBackend mock(kGender, 3);
      CHECK(generate_personas(mock, templates, n).size() == n);
    }
  }

  TEST_CASE("templates render every slot") {
    const std::pair<std::string, std::string> slots[] = {{"x", "1"}};
    CHECK(render_template("a {x} b {x}", slots) == "a 1 b 1");
    CHECK_THROWS_AS(render_template("a {y}", slots), ConfigError);
    const auto d = PromptTemplates::defaults();
    CHECK_FALSE(d.annotator_user.empty());
    CHECK_FALSE(d.summarizer_system.empty());
  }

  TEST_CASE("annotation stores raw text and its verbalized label") {
    const auto templates = PromptTemplates::defaults();
    const PersonaProfile persona{0, "A careful critic.", {}};
    ScriptedBackend scripted;
    scripted.add(RequestKind::kAnnotate, 5, 0, "No gendered signal at all.");
    const auto rec = annotate_user(scripted, templates, persona, titles(), kGender, 5);
    CHECK(rec.user == 5);
    CHECK(rec.label == kAbstain);
    CHECK(rec.backend_tag == "scripted");

    std::vector<std::string> none;
    CHECK_THROWS(annotate_user(scripted, templates, persona, none, kGender, 5));

    MockBackend mock(kGender, 1);
    const auto m = annotate_user(mock, templates, persona, titles(), kGender, 2);
    CHECK(m.label == verbalize(m.raw_text, kGender));
    CHECK(annotate_user(mock, templates, persona, titles(), kGender, 2) == m);
  }

  TEST_CASE("simulated annotator frequency matches its planted row") {
    const std::vector<double> row = {0.2, 0.8};
    double ones = 0.0;
    for (std::size_t u = 0; u < 10000; ++u) ones += simulated_annotation_label(row, 17, u, 0);
    CHECK(std::abs(ones / 10000.0 - 0.8) < 0.02);
  }

  TEST_CASE("simulate_annotations: identity, uniform and planted rows") {
    std::vector<int> truth(20000);
    for (std::size_t u = 0; u < truth.size(); ++u) truth[u] = static_cast<int>(u % 2);
    const auto labels = planted(truth);

    const std::vector<std::vector<std::vector<double>>> identity = {{{1, 0}, {0, 1}}};
    for (const auto& r : simulate_annotations(labels, identity, kGender, 1)) {
      CHECK(r.label == truth[r.user]);
    }

    const std::vector<std::vector<std::vector<double>>> uniform = {{{0.5, 0.5}, {0.5, 0.5}}};
    double ones = 0.0;
    for (const auto& r : simulate_annotations(labels, uniform, kGender, 2)) ones += r.label;
    const double n = static_cast<double>(truth.size());
    CHECK(std::abs(ones / n - 0.5) < 3.0 * std::sqrt(0.25 / n));

    const std::vector<std::vector<std::vector<double>>> f = {{{0.9, 0.1}, {0.2, 0.8}}};
    double counts[2][2] = {};
    const auto recs = simulate_annotations(labels, f, kGender, 3);
    for (const auto& r : recs) {
      counts[truth[r.user]][r.label] += 1.0;
      CHECK(verbalize(r.raw_text, kGender) == r.label);
    }
    CHECK(std::abs(counts[0][0] / 10000.0 - 0.9) < 0.01);
    CHECK(std::abs(counts[1][1] / 10000.0 - 0.8) < 0.01);

    const std::vector<std::vector<std::vector<double>>> bad = {{{0.5, 0.4}, {0, 1}}};
    CHECK_THROWS_AS(simulate_annotations(labels, bad, kGender, 1), ValidationError);
  }

  TEST_CASE("simulated backend replays simulate_annotations") {
    std::vector<int> truth = {0, 1, 1, 0, 1, 0, 0, 1};
    const std::vector<std::vector<std::vector<double>>> f = {{{0.7, 0.3}, {0.4, 0.6}},
                                                              {{0.9, 0.1}, {0.1, 0.9}}};
    const auto offline = simulate_annotations(planted(truth), f, kGender, 21);
    SimulatedBackend backend(kGender, planted(truth), f, 21);
    const auto templates = PromptTemplates::defaults();
    for (const auto& r : offline) {
      const PersonaProfile persona{r.annotator, "p", {}};
      const auto live = annotate_user(backend, templates, persona, titles(), kGender, r.user);
      CHECK(live.raw_text == r.raw_text);
      CHECK(live.label == r.label);
    }
    GroundTruthLabels hidden{truth, 2, LabelVisibility::kTestOnly};
    CHECK_THROWS_AS(SimulatedBackend(kGender, hidden, f, 1), ArgumentError);
  }

  TEST_CASE("summaries tally annotator votes") {
    const auto templates = PromptTemplates::defaults();
    MockBackend mock(kGender, 0);
    std::vector<AnnotationRecord> one = {
        {0, 0, simulated_annotation_text(kGender, 1), 1, "simulated"}};
    const auto s = summarize_user(mock, templates, titles(), one, kGender);
    CHECK(s.final_label == 1);
    CHECK(s.summary_text.find("female") != std::string::npos);

    std::vector<AnnotationRecord> split = {
        {0, 0, simulated_annotation_text(kGender, 0), 0, "simulated"},
        {0, 1, simulated_annotation_text(kGender, 1), 1, "simulated"}};
    CHECK(summarize_user(mock, templates, titles(), split, kGender).final_label == kAbstain);

    ScriptedBackend scripted;
    scripted.add(RequestKind::kSummarize, 0, -1, oracle::kSummarizerExample);
    const auto a = summarize_user(scripted, templates, titles(), one, kGender);
    const auto b = summarize_user(scripted, templates, titles(), one, kGender);
    CHECK(a.summary_text == b.summary_text);
    CHECK(a.final_label == 1);
  }

  TEST_CASE("recording backend output replays through a scripted backend") {
    const auto path = fs::temp_directory_path() / "fairlab_tests" / "record.jsonl";
    fs::create_directories(path.parent_path());
    fs::remove(path);
    auto inner = std::make_shared<MockBackend>(kGender, 4);
    RecordingBackend recorder(inner, path);
    const auto templates = PromptTemplates::defaults();
    const PersonaProfile persona{1, "p", {}};
    const auto live = annotate_user(recorder, templates, persona, titles(), kGender, 3);
    ScriptedBackend replay(path);
    const auto again = annotate_user(replay, templates, persona, titles(), kGender, 3);
    CHECK(again.raw_text == live.raw_text);
    CHECK(again.label == live.label);
  }

  TEST_CASE("jsonl codecs round trip") {
    const AnnotationRecord rec{7, 2, "He is \"likely\" male.\nYes.", 0, "mock"};
    CHECK(annotation_from_json(to_json_line(rec)) == rec);
    const RationaleSummary sum{4, "text", {}, 1};
    const auto back = summary_from_json(to_json_line(sum));
    CHECK(back.user == 4);
    CHECK(back.summary_text == "text");
    CHECK(back.final_label == 1);
    const PersonaProfile p{3, "desc", {}};
    CHECK(persona_from_json(to_json_line(p)).description == "desc");
  }

  TEST_CASE("annotation store order ignores arrival order") {
    AnnotationStore forward;
    AnnotationStore threaded;
    std::vector<AnnotationRecord> recs;
    for (std::size_t u = 0; u < 50; ++u) {
      for (int i = 0; i < 3; ++i) recs.push_back({u, i, "t", i % 2, "mock"});
    }
    for (const auto& r : recs) forward.put(r);
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = recs.size(); k-- > 0;) {
          if (k % 4 == static_cast<std::size_t>(t)) threaded.put(recs[k]);
        }
      });
    }
    for (auto& th : pool) th.join();
    CHECK(threaded.records() == forward.records());
    CHECK(forward.contains(49, 2));
    CHECK(forward.for_user(3).size() == 3);
  }

  TEST_CASE("hash embedder") {
    HashEmbedder e(768, 5);
    const auto a = embed_text(e, "a");
    CHECK(a.size() == 768);
    CHECK(embed_text(e, "a") == a);
    CHECK(kernels::dot(a, a) == doctest::Approx(1.0));
    CHECK_THROWS_AS(embed_text(e, ""), ArgumentError);

    Rng rng(1);
    const std::vector<std::string> words = {"drama", "comedy", "action", "romance", "horror",
                                            "western", "musical", "thriller", "noir",
                                            "animation", "documentary", "war", "crime",
                                            "fantasy", "mystery", "family", "sport", "music"};
    std::vector<std::vector<double>> vecs;
    for (int t = 0; t < 100; ++t) {
      std::string text;
      for (int w = 0; w < 40; ++w) text += words[rng.uniform_index(words.size())] + " ";
      text += "doc" + std::to_string(t);
      vecs.push_back(embed_text(e, text));
    }
    double worst = -1.0;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      for (std::size_t j = i + 1; j < vecs.size(); ++j) worst = std::max(worst, kernels::dot(vecs[i], vecs[j]));
    }
    CHECK(worst < 0.99);
  }
}
