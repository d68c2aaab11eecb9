#include "kaqa/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kaqa {
namespace {

using nlohmann::json;

const json& require(const json& j, const char* field, std::size_t line) {
  auto it = j.find(field);
  if (it == j.end()) throw DataError(line, field, "missing");
  return *it;
}

std::vector<std::string> string_list(const json& j, const char* field, std::size_t line) {
  const json& v = require(j, field, line);
  if (!v.is_array()) throw DataError(line, field, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& s : v) {
    if (!s.is_string()) throw DataError(line, field, "expected an array of strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

std::string text_of(const json& j, const char* field, std::size_t line) {
  const json& v = require(j, field, line);
  if (!v.is_string()) throw DataError(line, field, "expected a string");
  return v.get<std::string>();
}

}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

void validate_example(const QAExample& ex, std::size_t line) {
  if (ex.id.empty()) throw DataError(line, "id", "empty");
  if (ex.question.empty()) throw DataError(line, "question", "empty");
  for (const auto& t : ex.question)
    if (t.empty() || split_tokens(t).size() != 1) throw DataError(line, "question", "token contains whitespace");
  if (ex.answers.empty()) throw DataError(line, "answers", "no gold answer");
  if (ex.topic_entities.empty()) throw DataError(line, "topic_entities", "empty");
  const std::set<std::string> candidates(ex.candidates.begin(), ex.candidates.end());
  if (candidates.size() != ex.candidates.size()) throw DataError(line, "candidates", "duplicate entity");
  const std::set<std::string> sub(ex.subgraph_entities.begin(), ex.subgraph_entities.end());
  if (sub.size() != ex.subgraph_entities.size()) throw DataError(line, "subgraph", "duplicate entity");
  for (const auto& a : ex.answers)
    if (!candidates.contains(a)) throw DataError(line, "answers", "gold entity '" + a + "' is not a candidate");
  for (const auto& t : ex.topic_entities)
    if (!sub.contains(t)) throw DataError(line, "topic_entities", "'" + t + "' is not in the subgraph");
  for (const auto& e : ex.subgraph_entities)
    if (!candidates.contains(e)) throw DataError(line, "subgraph", "'" + e + "' is not a candidate");
  for (const auto& t : ex.subgraph_triples) {
    if (!sub.contains(t.head) || !sub.contains(t.tail)) {
      throw DataError(line, "subgraph", "triple endpoint outside the subgraph entities");
    }
    if (t.relation.empty()) throw DataError(line, "subgraph", "empty relation");
  }
  for (const auto& d : ex.documents) {
    if (d.tokens.empty()) throw DataError(line, "documents", "empty document");
    for (const auto& t : d.tokens)
      if (t.empty() || split_tokens(t).size() != 1) throw DataError(line, "documents", "token contains whitespace");
    for (const auto& s : d.spans) {
      if (s.begin >= s.end || s.end > d.tokens.size()) throw DataError(line, "documents", "span out of range");
      if (!candidates.contains(s.entity)) {
        throw DataError(line, "documents", "linked entity '" + s.entity + "' is not a candidate");
      }
    }
  }
}

std::string to_json_line(const QAExample& ex) {
  json triples = json::array();
  for (const auto& t : ex.subgraph_triples) triples.push_back({t.head, t.relation, t.tail});
  json docs = json::array();
  for (const auto& d : ex.documents) {
    json spans = json::array();
    for (const auto& s : d.spans) spans.push_back({s.begin, s.end, s.entity});
    docs.push_back({{"text", join_tokens(d.tokens)}, {"spans", spans}});
  }
  json j = {{"id", ex.id},
            {"question", join_tokens(ex.question)},
            {"topic_entities", ex.topic_entities},
            {"answers", ex.answers},
            {"candidates", ex.candidates},
            {"subgraph", {{"entities", ex.subgraph_entities}, {"triples", triples}}},
            {"documents", docs}};
  return j.dump();
}

QAExample parse_json_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(line_no, "<record>", e.what());
  }
  if (!j.is_object()) throw DataError(line_no, "<record>", "expected an object");
  QAExample ex;
  ex.id = text_of(j, "id", line_no);
  ex.question = split_tokens(text_of(j, "question", line_no));
  ex.topic_entities = string_list(j, "topic_entities", line_no);
  ex.answers = string_list(j, "answers", line_no);
  ex.candidates = string_list(j, "candidates", line_no);
  const json& sub = require(j, "subgraph", line_no);
  if (!sub.is_object()) throw DataError(line_no, "subgraph", "expected an object");
  ex.subgraph_entities = string_list(sub, "entities", line_no);
  const json& triples = require(sub, "triples", line_no);
  if (!triples.is_array()) throw DataError(line_no, "subgraph", "triples must be an array");
  for (const auto& t : triples) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
      throw DataError(line_no, "subgraph", "triple must be [head, relation, tail]");
    }
    ex.subgraph_triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
  }
  const json& docs = require(j, "documents", line_no);
  if (!docs.is_array()) throw DataError(line_no, "documents", "expected an array");
  for (const auto& d : docs) {
    if (!d.is_object()) throw DataError(line_no, "documents", "expected objects");
    Document doc;
    doc.tokens = split_tokens(text_of(d, "text", line_no));
    const json& spans = require(d, "spans", line_no);
    if (!spans.is_array()) throw DataError(line_no, "spans", "expected an array");
    for (const auto& s : spans) {
      if (!s.is_array() || s.size() != 3 || !s[0].is_number_unsigned() || !s[1].is_number_unsigned() ||
          !s[2].is_string()) {
        throw DataError(line_no, "spans", "span must be [begin, end, entity]");
      }
      doc.spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::string>()});
    }
    ex.documents.push_back(std::move(doc));
  }
  validate_example(ex, line_no);
  return ex;
}

void save_dataset(const std::vector<QAExample>& examples, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) {
    validate_example(ex);
    out << to_json_line(ex) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<QAExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<QAExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_json_line(line, line_no));
  }
  return out;
}

}  // namespace kaqa
