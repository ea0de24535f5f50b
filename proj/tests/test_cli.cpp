#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const char* const kSmallConfig = R"(run_id = "cli"
seed = 5
backend = "simulated"

[data]
synthetic_users = 150
synthetic_items = 100
interactions_per_user = 20
core_k = 5

[agents]
n_personas = 2
embed_dim = 16
workers = 2
simulated_accuracy = [0.9]

[train]
d = 8
lr = 0.01
bpr_batch = 512
sens_batch = 32
mi_batch = 32
pretrain_epochs = 5
stage1_epochs = 3
stage2_epochs = 2

[eval]
k = 10
attacker_hidden = 8
)";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fairlab_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto path = dir / "input.toml";
  std::ofstream(path) << text;
  return path;
}

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + FAIRLAB_CLI + "\" " + args + " --quiet > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string common(const fs::path& config, const fs::path& out) {
  return "--config \"" + config.string() + "\" --out \"" + out.string() + "\"";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("overwrite refusal and --force") {
    const auto dir = fresh_dir("overwrite");
    const auto cfg = write_config(dir, kSmallConfig);
    const auto args = common(cfg, dir / "run");
    CHECK(run("data " + args) == 0);
    CHECK(fs::exists(dir / "run" / "data" / "interactions.tsv"));
    CHECK(run("data " + args) == 3);
    CHECK(run("data " + args + " --force") == 0);
  }

  TEST_CASE("missing prerequisites") {
    const auto dir = fresh_dir("missing");
    const auto cfg = write_config(dir, kSmallConfig);
    const auto args = common(cfg, dir / "run");
    CHECK(run("train stage2 " + args) == 4);
    CHECK(run("summarize " + args) == 4);
  }

  TEST_CASE("bad configuration and arguments") {
    const auto dir = fresh_dir("invalid");
    const auto bad = write_config(dir, std::string(kSmallConfig) + "\n[train]\nlamda = 1\n");
    CHECK(run("data " + common(bad, dir / "run")) == 5);
    const auto cfg = write_config(dir, kSmallConfig);
    CHECK(run("data " + common(cfg, dir / "run") + " --set train.d=0") == 5);
    CHECK(run("train sideways " + common(cfg, dir / "run")) == 5);
    CHECK(run("data --config \"" + (dir / "absent.toml").string() + "\"") == 5);
  }

  TEST_CASE("annotate resumes from a partial file") {
    const auto dir = fresh_dir("resume");
    const auto cfg = write_config(dir, kSmallConfig);
    const auto args = common(cfg, dir / "run");
    REQUIRE(run("data " + args) == 0);
    REQUIRE(run("personas " + args) == 0);
    REQUIRE(run("annotate " + args) == 0);
    const auto path = dir / "run" / "annotations.jsonl";
    const auto full = slurp(path);
    std::vector<std::string> lines;
    std::istringstream in(full);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    REQUIRE(lines.size() == 300);
    {
      std::ofstream out(path, std::ios::trunc);
      for (std::size_t i = 0; i < lines.size(); i += 3) out << lines[i] << '\n';
    }
    CHECK(run("annotate " + args) == 0);
    CHECK(slurp(path) == full);
  }

  TEST_CASE("two pipeline runs with one seed write identical metrics") {
    const auto dir = fresh_dir("replay");
    const auto cfg = write_config(dir, kSmallConfig);
    REQUIRE(run("pipeline " + common(cfg, dir / "a")) == 0);
    REQUIRE(run("pipeline " + common(cfg, dir / "b")) == 0);
    const auto a = slurp(dir / "a" / "metrics.csv");
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "annotations.jsonl") == slurp(dir / "b" / "annotations.jsonl"));
    CHECK(run("evaluate " + common(cfg, dir / "a")) == 3);
    CHECK(run("evaluate " + common(cfg, dir / "a") + " --force") == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == a);
  }
}
