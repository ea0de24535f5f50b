#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace fairlab::oracle {

std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                     double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor) {
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

ListMetrics list_metrics(std::span<const std::uint32_t> ranked,
                         std::span<const std::uint32_t> relevant, std::size_t k) {
  const std::set<std::uint32_t> rel(relevant.begin(), relevant.end());
  double hits = 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (rel.contains(ranked[r])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, rel.size()); ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return {hits / static_cast<double>(rel.size()), dcg / idcg};
}

double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
  double credit = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) credit += 1.0;
      if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  return credit / pairs;
}

double binomial_majority(std::size_t n, double p) {
  double total = 0.0;
  for (std::size_t m = n / 2 + 1; m <= n; ++m) {
    double c = 1.0;
    for (std::size_t j = 0; j < m; ++j) c = c * static_cast<double>(n - j) / static_cast<double>(j + 1);
    total += c * std::pow(p, static_cast<double>(m)) * std::pow(1.0 - p, static_cast<double>(n - m));
  }
  return total;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> k_core(
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs, std::size_t k) {
  for (;;) {
    std::map<std::uint32_t, std::size_t> du;
    std::map<std::uint32_t, std::size_t> di;
    for (const auto& [u, i] : pairs) {
      ++du[u];
      ++di[i];
    }
    const auto before = pairs.size();
    std::erase_if(pairs, [&](const auto& p) { return du[p.first] < k || di[p.second] < k; });
    if (pairs.size() == before) return pairs;
  }
}

std::vector<std::vector<std::size_t>> knn_with_ties(const Matrix& points, std::size_t k) {
  const std::size_t n = points.rows();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dist(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < points.cols(); ++c) {
        s += (points(i, c) - points(j, c)) * (points(i, c) - points(j, c));
      }
      dist[j] = std::sqrt(s);
    }
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(dist[j]);
    }
    std::ranges::sort(others);
    const double cut = others[std::min(k, others.size()) - 1];
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && dist[j] <= cut) out[i].push_back(j);
    }
  }
  return out;
}

}  // namespace fairlab::oracle

#include <fstream>
#include <stdexcept>

namespace fairlab::oracle {

std::vector<VerbalizerCase> read_verbalizer_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<VerbalizerCase> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("bad fixture line: " + line);
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

const char* const kAnnotatorExample =
    "Based on the movie list, I infer that the user is likely male.\n\n"
    "The list includes a mix of classic and popular films, but with a noticeable bias "
    "towards action, adventure, and comedy movies that are often appealing to a male "
    "audience. The presence of Indiana Jones, Crocodile Dundee, Blade, and Men in Black "
    "suggests a fondness for action-packed films. The inclusion of Animal House, Young "
    "Guns II, and Dances with Wolves also suggests a preference for masculine-themed "
    "movies.\n\n"
    "While there are some films that might appeal to a female audience, such as The "
    "Princess Bride, Little Mermaid, and The Full Monty, the overall tone and genre "
    "suggests a male user.";

const char* const kSummarizerExample =
    "Based on the movie viewing history and the accompanying inferences and "
    "justifications from the previous annotators, I infer that the user is likely a "
    "female. Here's my comprehensive rationale:\n\n"
    "1. The presence of classic Disney movies like Snow White, Cinderella, and Beauty "
    "and the Beast is a common thread throughout the annotations. These films are often "
    "associated with a female audience and suggest a fondness for traditional fairy "
    "tales and romance.\n"
    "2. The inclusion of romantic comedies and dramas, such as My Fair Lady, Meet Joe "
    "Black, and Titanic, is another consistent theme. These genres often appeal to women "
    "and suggest an interest in relationships and emotional storytelling.\n"
    "3. The presence of family-friendly movies like Toy Story, James and the Giant "
    "Peach, and Mulan, as well as animated films like Aladdin, Hercules, and Bambi, "
    "suggests a love for lighthearted, feel-good stories and a willingness to engage "
    "with popular culture.\n"
    "4. The absence of action-oriented or sci-fi movies, which are often popular among "
    "male audiences, is a notable pattern. This suggests that the user may be less "
    "interested in these genres and more inclined towards character-driven, emotionally "
    "resonant storytelling.\n"
    "5. The presence of strong female protagonists in films like Erin Brockovich, Mulan, "
    "and Run Lola Run, as well as the user's interest in romantic musicals like Gigi, My "
    "Fair Lady, and The Sound of Music, suggests an appreciation for female empowerment "
    "and strong female characters.\n"
    "6. The overall tone of the movie list is characterized by a focus on romance, "
    "relationships, and family-friendly entertainment, which is often associated with a "
    "female audience.\n\n"
    "While it's possible that a male user could have similar tastes, the consistency of "
    "these themes and patterns across the annotations suggests that the user is likely a "
    "female. The user's movie list is characterized by a strong interest in traditional "
    "fairy tales, romance, and family-friendly entertainment, which are all common "
    "interests among women.\n\n"
    "In conclusion, based on the movie viewing history and the accompanying inferences "
    "and justifications from the previous annotators, I infer that the user is likely a "
    "female. The user's movie list is characterized by a focus on romance, "
    "relationships, and family-friendly entertainment, and the presence of strong female "
    "protagonists and classic Disney movies suggests an appreciation for female "
    "empowerment and traditional fairy tales.";

}  // namespace fairlab::oracle
