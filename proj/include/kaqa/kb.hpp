#pragma once

// Triple store, Personalized PageRank retrieval and KB downsampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "kaqa/vocab.hpp"

namespace kaqa {

struct Triple {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  auto operator<=>(const Triple&) const = default;
};

class KnowledgeGraph {
 public:
  std::size_t add_entity(const std::string& name) { return entities_.add(name); }
  std::size_t add_relation(const std::string& name) { return relations_.add(name); }
  // Returns false (and stores nothing) for a duplicate.
  bool add(const std::string& head, const std::string& relation, const std::string& tail);
  bool add(const Triple& t);

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t entity_count() const { return entities_.size(); }
  bool contains(const Triple& t) const { return index_.contains(t); }

  // Same vocabularies, only the listed triples (in the given order).
  KnowledgeGraph with_triples(std::span<const Triple> triples) const;

  // head<TAB>relation<TAB>tail per line. Loading throws std::runtime_error
  // with the line number on a malformed line.
  void save_tsv(const std::filesystem::path& path) const;
  static KnowledgeGraph load_tsv(const std::filesystem::path& path);

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::set<Triple> index_;
};

struct PprOptions {
  double restart = 0.15;
  double tolerance = 1e-12;  // L1 change between iterates
  std::size_t max_iterations = 10000;
};

struct PprResult {
  std::vector<double> scores;  // per entity id, sums to one
  std::size_t iterations = 0;
  bool converged = false;
};

// Power iteration on the undirected view: every triple links head and tail
// in both directions, parallel triples add weight. Restart mass and the mass
// of dangling nodes return to the seeds uniformly.
PprResult personalized_pagerank(const KnowledgeGraph& graph, std::span<const std::size_t> seeds,
                                const PprOptions& options = {});

struct RetrievedSubgraph {
  std::vector<std::size_t> entities;  // seeds first, then descending PPR score, id tiebreak
  std::vector<Triple> triples;        // every graph triple with both ends kept, graph order
};

RetrievedSubgraph extract_subgraph(const KnowledgeGraph& graph, std::span<const std::size_t> seeds,
                                   std::size_t top_k, const PprOptions& options = {});

// Uniform random subset of floor(fraction * |triples|) triples, kept in their
// original order. Vocabularies are unchanged.
KnowledgeGraph downsample_kb(const KnowledgeGraph& graph, double fraction, std::uint64_t seed);

}  // namespace kaqa
