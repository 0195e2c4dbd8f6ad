#pragma once

// Corpus ingestion: DocRED-schema JSON documents, relation schemas, label
// tensors and the training fact index used by the ignore-train F1 metric.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "docre/common.hpp"
#include "json.hpp"

namespace docre {

struct Mention {
  int entity_index = -1;
  int sentence_index = -1;
  // half-open token span in flattened document order
  int start = -1;
  int end = -1;
  std::string surface;
  std::string entity_type;
};

struct Fact {
  int head = -1;
  std::string relation;  // schema id string, mapped to an index lazily
  int tail = -1;
  std::vector<int> evidence;  // parsed for fidelity, unused downstream
};

struct Document {
  std::string doc_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::vector<Mention>> entities;  // one mention list per entity
  std::vector<Fact> facts;                     // deduplicated on (h, r, t)
  bool is_distant = false;

  int n_entities() const { return static_cast<int>(entities.size()); }
  int n_pairs() const { return n_entities() * (n_entities() - 1); }
  int total_tokens() const;
  std::vector<int> sentence_offsets() const;  // flattened start of each sentence
  // first-mention surface, the entity key used for fact bookkeeping
  const std::string& entity_surface(int entity) const;
};

struct RelationSchema {
  // Class layout: the threshold class TH occupies logit column 0 and every
  // relation with index r occupies column r + 1. NR is never a column; it is
  // the empty positive set.
  static constexpr int kThColumn = 0;

  std::vector<std::string> relation_ids;  // ordered, defines relation indices
  std::vector<int> frequent_set;          // top-K relation indices by train freq

  RelationSchema() = default;
  explicit RelationSchema(std::vector<std::string> ids);

  int num_relations() const { return static_cast<int>(relation_ids.size()); }
  int num_classes() const { return num_relations() + 1; }
  static int logit_column(int relation_index) { return relation_index + 1; }
  int index_of(const std::string& relation_id) const;  // -1 when unknown
  int require_index(const std::string& relation_id) const;  // throws SchemaError

  // top-K relation indices by fact frequency over a training split,
  // ties broken by relation index for determinism
  void compute_frequent_set(const std::vector<Document>& train, int top_k);

 private:
  std::unordered_map<std::string, int> index_;
};

// Multi-hot labels for the n*n ordered pair grid. The diagonal is dead by
// construction: set/get reject s == o.
struct LabelTensor {
  int n = 0;
  int num_relations = 0;
  std::vector<uint8_t> values;  // s-major: ((s * n) + o) * R + r

  LabelTensor() = default;
  LabelTensor(int n_entities, int relations);

  bool get(int s, int o, int r) const;
  void set(int s, int o, int r, bool v);
  std::vector<int> positive_relations(int s, int o) const;
  bool pair_on_diagonal(int s, int o) const { return s == o; }
  size_t positive_count() const;
};

// Surface-form triple membership for Ign_F1. Keys are built from the first
// mention surface of each entity, normalized (ASCII lowercase, whitespace
// collapsed).
struct FactIndex {
  std::unordered_set<std::string> keys;

  static std::string normalize_surface(const std::string& s);
  static std::string make_key(const std::string& head_surface,
                              const std::string& relation_id,
                              const std::string& tail_surface);

  void insert(const std::string& head_surface, const std::string& relation_id,
              const std::string& tail_surface);
  bool contains(const std::string& head_surface,
                const std::string& relation_id,
                const std::string& tail_surface) const;
  size_t size() const { return keys.size(); }
};

struct CorpusStats {
  int doc_count = 0;
  int distinct_relations = 0;
  double avg_entities_per_doc = 0.0;
  double avg_mentions_per_entity = 0.0;
  double avg_relations_per_doc = 0.0;
  std::unordered_map<std::string, int> relation_freq;
};

Document parse_document(const nlohmann::json& raw, bool is_distant = false);
std::vector<Document> load_corpus_file(const std::string& path,
                                       bool is_distant = false);
void save_corpus_file(const std::string& path,
                      const std::vector<Document>& docs);
nlohmann::json document_to_json(const Document& doc);

// Relation schema file: a JSON array of id strings, or one id per line.
RelationSchema load_relation_schema(const std::string& path);

LabelTensor build_label_tensor(const Document& doc,
                               const RelationSchema& schema);
std::vector<Fact> label_tensor_to_facts(const LabelTensor& t,
                                        const RelationSchema& schema);

FactIndex build_fact_index(const std::vector<Document>& train_corpus);

CorpusStats corpus_statistics(const std::vector<Document>& corpus);

// every ordered (s, o) pair with s != o, s-major
std::vector<std::pair<int, int>> candidate_pairs(int n_entities);

}  // namespace docre
