#include "docre/corpus.hpp"

#include "docre/common.hpp"
#include "docre/io.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <sstream>

namespace docre {

namespace {

using nlohmann::json;

const json& need(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw SchemaError(where + ": missing key '" + key + "'");
  }
  return *it;
}

int need_int(const json& v, const char* key, const std::string& where) {
  if (!v.is_number_integer()) {
    throw SchemaError(where + ": '" + key + "' must be an integer");
  }
  return v.get<int>();
}

}  // namespace

int Document::total_tokens() const {
  int n = 0;
  for (const auto& s : sentences) n += static_cast<int>(s.size());
  return n;
}

std::vector<int> Document::sentence_offsets() const {
  std::vector<int> off(sentences.size() + 1, 0);
  for (size_t i = 0; i < sentences.size(); ++i) {
    off[i + 1] = off[i] + static_cast<int>(sentences[i].size());
  }
  return off;
}

const std::string& Document::entity_surface(int entity) const {
  if (entity < 0 || entity >= n_entities()) {
    throw Error("entity index out of range in " + doc_id);
  }
  return entities[static_cast<size_t>(entity)].front().surface;
}

RelationSchema::RelationSchema(std::vector<std::string> ids)
    : relation_ids(std::move(ids)) {
  for (size_t i = 0; i < relation_ids.size(); ++i) {
    if (relation_ids[i].empty()) {
      throw SchemaError("relation schema: empty id at position " +
                        std::to_string(i));
    }
    auto [it, fresh] = index_.emplace(relation_ids[i], static_cast<int>(i));
    if (!fresh) {
      throw SchemaError("relation schema: duplicate id '" + relation_ids[i] +
                        "'");
    }
  }
}

int RelationSchema::index_of(const std::string& relation_id) const {
  auto it = index_.find(relation_id);
  return it == index_.end() ? -1 : it->second;
}

int RelationSchema::require_index(const std::string& relation_id) const {
  int idx = index_of(relation_id);
  if (idx < 0) {
    throw SchemaError("unknown relation id '" + relation_id + "'");
  }
  return idx;
}

void RelationSchema::compute_frequent_set(const std::vector<Document>& train,
                                          int top_k) {
  std::vector<long long> freq(relation_ids.size(), 0);
  for (const Document& d : train) {
    for (const Fact& f : d.facts) {
      int idx = index_of(f.relation);
      if (idx >= 0) ++freq[static_cast<size_t>(idx)];
    }
  }
  std::vector<int> order(relation_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (freq[static_cast<size_t>(a)] != freq[static_cast<size_t>(b)]) {
      return freq[static_cast<size_t>(a)] > freq[static_cast<size_t>(b)];
    }
    return a < b;
  });
  int k = std::min<int>(top_k, static_cast<int>(order.size()));
  frequent_set.assign(order.begin(), order.begin() + k);
  std::sort(frequent_set.begin(), frequent_set.end());
}

LabelTensor::LabelTensor(int n_entities, int relations)
    : n(n_entities),
      num_relations(relations),
      values(static_cast<size_t>(n_entities) * n_entities * relations, 0) {}

bool LabelTensor::get(int s, int o, int r) const {
  if (s == o) throw Error("label tensor: diagonal pair queried");
  return values[(static_cast<size_t>(s) * n + o) * num_relations + r] != 0;
}

void LabelTensor::set(int s, int o, int r, bool v) {
  if (s == o) throw Error("label tensor: diagonal pair set");
  values[(static_cast<size_t>(s) * n + o) * num_relations + r] = v ? 1 : 0;
}

std::vector<int> LabelTensor::positive_relations(int s, int o) const {
  std::vector<int> out;
  const uint8_t* row = &values[(static_cast<size_t>(s) * n + o) * num_relations];
  for (int r = 0; r < num_relations; ++r) {
    if (row[r]) out.push_back(r);
  }
  return out;
}

size_t LabelTensor::positive_count() const {
  size_t c = 0;
  for (uint8_t v : values) c += v;
  return c;
}

std::string FactIndex::normalize_surface(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // leading whitespace dropped
  for (unsigned char ch : s) {
    if (std::isspace(ch)) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(static_cast<char>(std::tolower(ch)));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string FactIndex::make_key(const std::string& head_surface,
                                const std::string& relation_id,
                                const std::string& tail_surface) {
  // unit separator avoids collisions between surface forms
  return normalize_surface(head_surface) + '\x1f' + relation_id + '\x1f' +
         normalize_surface(tail_surface);
}

void FactIndex::insert(const std::string& head_surface,
                       const std::string& relation_id,
                       const std::string& tail_surface) {
  keys.insert(make_key(head_surface, relation_id, tail_surface));
}

bool FactIndex::contains(const std::string& head_surface,
                         const std::string& relation_id,
                         const std::string& tail_surface) const {
  return keys.count(make_key(head_surface, relation_id, tail_surface)) > 0;
}

Document parse_document(const nlohmann::json& raw, bool is_distant) {
  if (!raw.is_object()) throw SchemaError("document: expected JSON object");
  Document doc;
  doc.is_distant = is_distant;

  const json& title = need(raw, "title", "document");
  if (!title.is_string()) throw SchemaError("document: 'title' must be a string");
  doc.doc_id = title.get<std::string>();
  const std::string where = "doc '" + doc.doc_id + "'";

  const json& sents = need(raw, "sents", where);
  if (!sents.is_array()) throw SchemaError(where + ": 'sents' must be an array");
  for (const json& sent : sents) {
    if (!sent.is_array()) {
      throw SchemaError(where + ": each sentence must be an array of tokens");
    }
    std::vector<std::string> toks;
    toks.reserve(sent.size());
    for (const json& t : sent) {
      if (!t.is_string()) {
        throw SchemaError(where + ": tokens must be strings");
      }
      toks.push_back(t.get<std::string>());
    }
    doc.sentences.push_back(std::move(toks));
  }

  std::vector<int> offsets = doc.sentence_offsets();

  const json& vertex_set = need(raw, "vertexSet", where);
  if (!vertex_set.is_array()) {
    throw SchemaError(where + ": 'vertexSet' must be an array");
  }
  int entity_index = 0;
  for (const json& vert : vertex_set) {
    if (!vert.is_array() || vert.empty()) {
      throw SchemaError(where + ": entity " + std::to_string(entity_index) +
                        " must be a non-empty mention array");
    }
    std::vector<Mention> mentions;
    int mention_index = 0;
    for (const json& m : vert) {
      const std::string mwhere = where + ", entity " +
                                 std::to_string(entity_index) + " mention " +
                                 std::to_string(mention_index);
      Mention men;
      men.entity_index = entity_index;
      const json& name = need(m, "name", mwhere);
      if (!name.is_string()) throw SchemaError(mwhere + ": 'name' must be a string");
      men.surface = name.get<std::string>();
      men.sentence_index = need_int(need(m, "sent_id", mwhere), "sent_id", mwhere);
      if (men.sentence_index < 0 ||
          men.sentence_index >= static_cast<int>(doc.sentences.size())) {
        throw SchemaError(mwhere + ": sent_id " +
                          std::to_string(men.sentence_index) + " out of range");
      }
      const json& pos = need(m, "pos", mwhere);
      if (!pos.is_array() || pos.size() != 2) {
        throw SchemaError(mwhere + ": 'pos' must be [start, end)");
      }
      int local_start = need_int(pos[0], "pos[0]", mwhere);
      int local_end = need_int(pos[1], "pos[1]", mwhere);
      int sent_len =
          static_cast<int>(doc.sentences[static_cast<size_t>(men.sentence_index)].size());
      if (local_start < 0 || local_start >= local_end || local_end > sent_len) {
        throw SchemaError(mwhere + ": bad span [" + std::to_string(local_start) +
                          ", " + std::to_string(local_end) + ") in sentence of " +
                          std::to_string(sent_len) + " tokens");
      }
      men.start = offsets[static_cast<size_t>(men.sentence_index)] + local_start;
      men.end = offsets[static_cast<size_t>(men.sentence_index)] + local_end;
      auto type_it = m.find("type");
      if (type_it != m.end() && type_it->is_string()) {
        men.entity_type = type_it->get<std::string>();
      }
      mentions.push_back(std::move(men));
      ++mention_index;
    }
    doc.entities.push_back(std::move(mentions));
    ++entity_index;
  }

  auto labels_it = raw.find("labels");
  if (labels_it != raw.end()) {
    if (!labels_it->is_array()) {
      throw SchemaError(where + ": 'labels' must be an array");
    }
    std::unordered_set<std::string> seen;
    int label_index = 0;
    for (const json& lab : *labels_it) {
      const std::string lwhere = where + ", label " + std::to_string(label_index);
      Fact f;
      f.head = need_int(need(lab, "h", lwhere), "h", lwhere);
      f.tail = need_int(need(lab, "t", lwhere), "t", lwhere);
      const json& rel = need(lab, "r", lwhere);
      if (!rel.is_string()) throw SchemaError(lwhere + ": 'r' must be a string");
      f.relation = rel.get<std::string>();
      if (f.head < 0 || f.head >= doc.n_entities() || f.tail < 0 ||
          f.tail >= doc.n_entities()) {
        throw SchemaError(lwhere + ": entity index out of range");
      }
      if (f.head == f.tail) {
        throw SchemaError(lwhere + ": head equals tail (" +
                          std::to_string(f.head) + ")");
      }
      auto ev_it = lab.find("evidence");
      if (ev_it != lab.end() && ev_it->is_array()) {
        for (const json& e : *ev_it) {
          if (e.is_number_integer()) f.evidence.push_back(e.get<int>());
        }
      }
      std::string key = std::to_string(f.head) + '\x1f' + f.relation + '\x1f' +
                        std::to_string(f.tail);
      if (seen.insert(key).second) {
        doc.facts.push_back(std::move(f));
      }
      ++label_index;
    }
  }
  return doc;
}

std::vector<Document> load_corpus_file(const std::string& path,
                                       bool is_distant) {
  json root;
  try {
    root = json::parse(read_file_string(path));
  } catch (const json::parse_error& e) {
    throw SchemaError("corpus file " + path + ": " + e.what());
  }
  if (!root.is_array()) {
    throw SchemaError("corpus file " + path + ": expected a JSON array");
  }
  std::vector<Document> docs;
  docs.reserve(root.size());
  size_t i = 0;
  for (const json& raw : root) {
    try {
      docs.push_back(parse_document(raw, is_distant));
    } catch (const SchemaError& e) {
      throw SchemaError("corpus file " + path + ", doc " + std::to_string(i) +
                        ": " + e.what());
    }
    ++i;
  }
  return docs;
}

nlohmann::json document_to_json(const Document& doc) {
  json out;
  out["title"] = doc.doc_id;
  out["sents"] = doc.sentences;
  json vs = json::array();
  std::vector<int> offsets = doc.sentence_offsets();
  for (const auto& ent : doc.entities) {
    json mentions = json::array();
    for (const Mention& m : ent) {
      json jm;
      jm["name"] = m.surface;
      jm["sent_id"] = m.sentence_index;
      int base = offsets[static_cast<size_t>(m.sentence_index)];
      jm["pos"] = json::array({m.start - base, m.end - base});
      jm["type"] = m.entity_type;
      mentions.push_back(std::move(jm));
    }
    vs.push_back(std::move(mentions));
  }
  out["vertexSet"] = std::move(vs);
  json labels = json::array();
  for (const Fact& f : doc.facts) {
    json jl;
    jl["h"] = f.head;
    jl["t"] = f.tail;
    jl["r"] = f.relation;
    jl["evidence"] = f.evidence;
    labels.push_back(std::move(jl));
  }
  out["labels"] = std::move(labels);
  return out;
}

void save_corpus_file(const std::string& path,
                      const std::vector<Document>& docs) {
  json root = json::array();
  for (const Document& d : docs) root.push_back(document_to_json(d));
  write_file_atomic(path, root.dump());
}

RelationSchema load_relation_schema(const std::string& path) {
  std::string text = read_file_string(path);
  // try JSON array first, fall back to one id per line
  std::vector<std::string> ids;
  try {
    json root = json::parse(text);
    if (!root.is_array()) {
      throw SchemaError("relation schema " + path + ": expected a JSON array");
    }
    for (const json& v : root) {
      if (!v.is_string()) {
        throw SchemaError("relation schema " + path +
                          ": entries must be strings");
      }
      ids.push_back(v.get<std::string>());
    }
  } catch (const json::parse_error&) {
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
        line.pop_back();
      }
      if (!line.empty()) ids.push_back(line);
    }
  }
  if (ids.empty()) {
    throw SchemaError("relation schema " + path + ": no relation ids");
  }
  return RelationSchema(std::move(ids));
}

LabelTensor build_label_tensor(const Document& doc,
                               const RelationSchema& schema) {
  LabelTensor t(doc.n_entities(), schema.num_relations());
  for (const Fact& f : doc.facts) {
    int r = schema.index_of(f.relation);
    if (r < 0) {
      throw SchemaError("doc '" + doc.doc_id + "': unknown relation id '" +
                        f.relation + "'");
    }
    t.set(f.head, f.tail, r, true);
  }
  return t;
}

std::vector<Fact> label_tensor_to_facts(const LabelTensor& t,
                                        const RelationSchema& schema) {
  std::vector<Fact> out;
  for (int s = 0; s < t.n; ++s) {
    for (int o = 0; o < t.n; ++o) {
      if (s == o) continue;
      for (int r : t.positive_relations(s, o)) {
        Fact f;
        f.head = s;
        f.tail = o;
        f.relation = schema.relation_ids[static_cast<size_t>(r)];
        out.push_back(std::move(f));
      }
    }
  }
  return out;
}

FactIndex build_fact_index(const std::vector<Document>& train_corpus) {
  FactIndex idx;
  for (const Document& d : train_corpus) {
    for (const Fact& f : d.facts) {
      idx.insert(d.entity_surface(f.head), f.relation,
                 d.entity_surface(f.tail));
    }
  }
  return idx;
}

CorpusStats corpus_statistics(const std::vector<Document>& corpus) {
  if (corpus.empty()) throw Error("corpus_statistics: empty corpus");
  CorpusStats st;
  st.doc_count = static_cast<int>(corpus.size());
  long long entities = 0, mentions = 0, facts = 0;
  for (const Document& d : corpus) {
    entities += d.n_entities();
    for (const auto& ent : d.entities) mentions += static_cast<long long>(ent.size());
    facts += static_cast<long long>(d.facts.size());
    for (const Fact& f : d.facts) ++st.relation_freq[f.relation];
  }
  st.distinct_relations = static_cast<int>(st.relation_freq.size());
  st.avg_entities_per_doc = static_cast<double>(entities) / st.doc_count;
  st.avg_mentions_per_entity =
      entities == 0 ? 0.0 : static_cast<double>(mentions) / entities;
  st.avg_relations_per_doc = static_cast<double>(facts) / st.doc_count;
  return st;
}

std::vector<std::pair<int, int>> candidate_pairs(int n_entities) {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<size_t>(n_entities) *
              std::max(0, n_entities - 1));
  for (int s = 0; s < n_entities; ++s) {
    for (int o = 0; o < n_entities; ++o) {
      if (s != o) out.emplace_back(s, o);
    }
  }
  return out;
}

}  // namespace docre
