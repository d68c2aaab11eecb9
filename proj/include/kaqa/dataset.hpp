#pragma once

// Question records and their line-delimited JSON file format.
//
// One record per line:
//   {"id": "...", "question": "tok tok ...", "topic_entities": [...],
//    "answers": [...], "candidates": [...],
//    "subgraph": {"entities": [...], "triples": [[h, r, t], ...]},
//    "documents": [{"text": "tok tok ...", "spans": [[begin, end, entity], ...]}]}
// Tokens are whitespace separated; spans are half-open token ranges.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace kaqa {

struct EntitySpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string entity;
  bool operator==(const EntitySpan&) const = default;
};

struct Document {
  std::vector<std::string> tokens;
  std::vector<EntitySpan> spans;
  bool operator==(const Document&) const = default;
};

struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;
  bool operator==(const NamedTriple&) const = default;
};

struct QAExample {
  std::string id;
  std::vector<std::string> question;
  std::vector<std::string> topic_entities;
  std::vector<std::string> answers;
  std::vector<std::string> candidates;
  std::vector<std::string> subgraph_entities;
  std::vector<NamedTriple> subgraph_triples;
  std::vector<Document> documents;
  bool operator==(const QAExample&) const = default;
};

class DataError : public std::runtime_error {
 public:
  DataError(std::size_t line, std::string field, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// Throws DataError (line 0) if an invariant fails: nonempty id, question and
// answers, answers and document entities among the candidates, topic
// entities and triple endpoints among the subgraph entities, spans in range.
void validate_example(const QAExample& ex, std::size_t line = 0);

std::string to_json_line(const QAExample& ex);
QAExample parse_json_line(const std::string& line, std::size_t line_no = 0);

void save_dataset(const std::vector<QAExample>& examples, const std::filesystem::path& path);
std::vector<QAExample> load_dataset(const std::filesystem::path& path);

std::vector<std::string> split_tokens(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace kaqa
