#include <cmath>
#include <map>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "fairlab/kernels.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw ArgumentError("embedding dimension must be positive");
}

std::vector<double> HashEmbedder::embed(std::string_view text) {
  if (text.empty()) throw ArgumentError("cannot embed empty text");
  std::map<std::string, double> counts;
  for (auto& token : tokenize_words(text)) counts[std::move(token)] += 1.0;
  std::vector<double> out(dimension_, 0.0);
  for (const auto& [token, count] : counts) {
    // One random sign per (token, coordinate), 64 coordinates per draw.
    Rng rng(derive_seed(seed_, token));
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < dimension_; ++k) {
      if (k % 64 == 0) bits = rng.next();
      out[k] += ((bits >> (k % 64)) & 1U) != 0 ? count : -count;
    }
  }
  const double norm = std::sqrt(kernels::dot(out, out));
  if (norm > 0.0) {
    for (double& x : out) x /= norm;
  }
  return out;
}

std::vector<double> embed_text(TextEmbedder& embedder, std::string_view text) {
  if (text.empty()) throw ArgumentError("cannot embed empty text");
  auto out = embedder.embed(text);
  if (out.size() != embedder.dimension()) {
    throw ValidationError("embedder returned dimension " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace fairlab
