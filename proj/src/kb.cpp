#include "kaqa/kb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "kaqa/log.hpp"

namespace kaqa {

bool KnowledgeGraph::add(const std::string& head, const std::string& relation, const std::string& tail) {
  return add(Triple{add_entity(head), add_relation(relation), add_entity(tail)});
}

bool KnowledgeGraph::add(const Triple& t) {
  if (t.head >= entities_.size() || t.tail >= entities_.size() || t.relation >= relations_.size()) {
    throw std::out_of_range("triple references an id outside the vocabulary");
  }
  if (!index_.insert(t).second) return false;
  triples_.push_back(t);
  return true;
}

KnowledgeGraph KnowledgeGraph::with_triples(std::span<const Triple> triples) const {
  KnowledgeGraph out;
  out.entities_ = entities_;
  out.relations_ = relations_;
  for (const auto& t : triples) out.add(t);
  return out;
}

void KnowledgeGraph::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : triples_) {
    out << entities_.token(t.head) << '\t' << relations_.token(t.relation) << '\t' << entities_.token(t.tail)
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

KnowledgeGraph KnowledgeGraph::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  KnowledgeGraph g;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos || a == 0 || b == a + 1 ||
        b + 1 == line.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected head<TAB>relation<TAB>tail");
    }
    g.add(line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1));
  }
  return g;
}

PprResult personalized_pagerank(const KnowledgeGraph& graph, std::span<const std::size_t> seeds,
                                const PprOptions& options) {
  const std::size_t n = graph.entity_count();
  if (seeds.empty()) throw std::invalid_argument("personalized_pagerank: no seed entities");
  if (!(options.restart > 0.0 && options.restart < 1.0)) {
    throw std::invalid_argument("personalized_pagerank: restart must lie in (0,1)");
  }
  std::vector<double> restart(n, 0.0);
  for (auto s : seeds) {
    if (s >= n) throw std::out_of_range("personalized_pagerank: seed outside the graph");
  }
  for (auto s : seeds) restart[s] += 1.0 / static_cast<double>(seeds.size());

  // Undirected adjacency in CSR form; weights count parallel triples.
  std::vector<double> degree(n, 0.0);
  std::vector<std::size_t> offsets(n + 1, 0);
  for (const auto& t : graph.triples()) {
    ++offsets[t.head + 1];
    ++offsets[t.tail + 1];
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<std::size_t> targets(offsets.back()), fill(offsets.begin(), offsets.end() - 1);
  for (const auto& t : graph.triples()) {
    targets[fill[t.head]++] = t.tail;
    targets[fill[t.tail]++] = t.head;
    degree[t.head] += 1.0;
    degree[t.tail] += 1.0;
  }

  PprResult result;
  std::vector<double> x = restart, next(n);
  const double c = options.restart;
  while (result.iterations < options.max_iterations) {
    ++result.iterations;
    double dangling = 0.0;
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t u = 0; u < n; ++u) {
      if (x[u] == 0.0) continue;
      if (degree[u] == 0.0) {
        dangling += x[u];
        continue;
      }
      const double share = (1.0 - c) * x[u] / degree[u];
      for (std::size_t k = offsets[u]; k < offsets[u + 1]; ++k) next[targets[k]] += share;
    }
    const double back = c + (1.0 - c) * dangling;
    double change = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      next[u] += back * restart[u];
      change += std::abs(next[u] - x[u]);
    }
    x.swap(next);
    if (change < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    logging::warn("personalized_pagerank: no convergence after " + std::to_string(result.iterations) + " iterations");
  }
  result.scores = std::move(x);
  return result;
}

RetrievedSubgraph extract_subgraph(const KnowledgeGraph& graph, std::span<const std::size_t> seeds,
                                   std::size_t top_k, const PprOptions& options) {
  std::vector<std::size_t> unique_seeds(seeds.begin(), seeds.end());
  std::sort(unique_seeds.begin(), unique_seeds.end());
  unique_seeds.erase(std::unique(unique_seeds.begin(), unique_seeds.end()), unique_seeds.end());
  if (top_k < unique_seeds.size()) throw std::invalid_argument("extract_subgraph: top_k smaller than the seed set");

  const auto ppr = personalized_pagerank(graph, unique_seeds, options);
  std::vector<bool> keep(graph.entity_count(), false);
  RetrievedSubgraph out;
  for (auto s : unique_seeds) {
    keep[s] = true;
    out.entities.push_back(s);
  }
  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < graph.entity_count(); ++e)
    if (!keep[e] && ppr.scores[e] > 0.0) order.push_back(e);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ppr.scores[a] != ppr.scores[b]) return ppr.scores[a] > ppr.scores[b];
    return a < b;
  });
  for (auto e : order) {
    if (out.entities.size() >= top_k) break;
    keep[e] = true;
    out.entities.push_back(e);
  }
  for (const auto& t : graph.triples())
    if (keep[t.head] && keep[t.tail]) out.triples.push_back(t);
  return out;
}

KnowledgeGraph downsample_kb(const KnowledgeGraph& graph, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("downsample_kb: fraction must lie in (0,1]");
  const std::size_t n = graph.triples().size();
  const auto kept = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(kept);
  std::sort(idx.begin(), idx.end());
  std::vector<Triple> chosen;
  chosen.reserve(kept);
  for (auto i : idx) chosen.push_back(graph.triples()[i]);
  return graph.with_triples(chosen);
}

}  // namespace kaqa
