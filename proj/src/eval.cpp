#include "docre/eval.hpp"

#include "docre/common.hpp"
#include "docre/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace docre {

namespace {

using PairKey = std::tuple<std::string, int, int>;

Prf prf_from_counts(long long hits, long long pred_n, long long gold_n) {
  Prf out;
  out.empty_gold = gold_n == 0;
  out.precision = pred_n > 0 ? double(hits) / double(pred_n) : 0.0;
  out.recall = gold_n > 0 ? double(hits) / double(gold_n) : 0.0;
  double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

long long intersection_size(const PredictionSet& a, const PredictionSet& b) {
  // both sorted and deduped
  long long hits = 0;
  auto ia = a.triples.begin();
  auto ib = b.triples.begin();
  while (ia != a.triples.end() && ib != b.triples.end()) {
    if (*ia == *ib) {
      ++hits;
      ++ia;
      ++ib;
    } else if (*ia < *ib) {
      ++ia;
    } else {
      ++ib;
    }
  }
  return hits;
}

Prf score_sets(const PredictionSet& pred, const PredictionSet& gold) {
  return prf_from_counts(intersection_size(pred, gold),
                         (long long)pred.size(), (long long)gold.size());
}

const Document& find_doc(const std::vector<Document>& docs,
                         const std::string& doc_id) {
  for (const auto& d : docs) {
    if (d.doc_id == doc_id) return d;
  }
  throw SchemaError("prediction references unknown document '" + doc_id + "'");
}

// Surface-based key matching the training fact index.
std::string triple_key(const Triple& t, const RelationSchema& schema,
                       const std::vector<Document>& docs) {
  const Document& d = find_doc(docs, t.doc_id);
  if (t.s < 0 || t.s >= d.n_entities() || t.o < 0 || t.o >= d.n_entities()) {
    throw SchemaError("triple entity index out of range in document '" +
                      t.doc_id + "'");
  }
  return FactIndex::make_key(d.entity_surface(t.s),
                             schema.relation_ids.at(t.relation),
                             d.entity_surface(t.o));
}

PredictionSet filter_unindexed(const PredictionSet& in,
                               const FactIndex& train_facts,
                               const RelationSchema& schema,
                               const std::vector<Document>& docs) {
  std::vector<Triple> kept;
  for (const auto& t : in.triples) {
    if (!train_facts.keys.count(triple_key(t, schema, docs))) {
      kept.push_back(t);
    }
  }
  return PredictionSet::of(std::move(kept));
}

PredictionSet filter_by_relation(const PredictionSet& in,
                                 const std::set<int>& relations,
                                 bool keep_members) {
  std::vector<Triple> kept;
  for (const auto& t : in.triples) {
    bool member = relations.count(t.relation) > 0;
    if (member == keep_members) kept.push_back(t);
  }
  return PredictionSet::of(std::move(kept));
}

std::set<PairKey> pair_keys(const PredictionSet& in) {
  std::set<PairKey> out;
  for (const auto& t : in.triples) out.insert({t.doc_id, t.s, t.o});
  return out;
}

}  // namespace

PredictionSet PredictionSet::of(std::vector<Triple> ts) {
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  PredictionSet out;
  out.triples = std::move(ts);
  return out;
}

bool PredictionSet::contains(const Triple& t) const {
  return std::binary_search(triples.begin(), triples.end(), t);
}

PredictionSet gold_set_from_corpus(const std::vector<Document>& docs,
                                   const RelationSchema& schema) {
  std::vector<Triple> ts;
  for (const auto& d : docs) {
    for (const auto& f : d.facts) {
      ts.push_back({d.doc_id, f.head, f.tail, schema.require_index(f.relation)});
    }
  }
  return PredictionSet::of(std::move(ts));
}

Prf micro_f1(const PredictionSet& pred, const PredictionSet& gold) {
  return score_sets(pred, gold);
}

Prf ign_f1(const PredictionSet& pred, const PredictionSet& gold,
           const FactIndex& train_facts, const RelationSchema& schema,
           const std::vector<Document>& docs) {
  PredictionSet p = filter_unindexed(pred, train_facts, schema, docs);
  PredictionSet g = filter_unindexed(gold, train_facts, schema, docs);
  return score_sets(p, g);
}

PredictionSet two_hop_subset(const PredictionSet& gold) {
  // outgoing[doc][s] and incoming[doc][o] entity sets, relation ignored
  std::map<std::string, std::map<int, std::set<int>>> outgoing;
  for (const auto& t : gold.triples) outgoing[t.doc_id][t.s].insert(t.o);

  std::vector<Triple> subset;
  for (const auto& t : gold.triples) {
    auto doc_it = outgoing.find(t.doc_id);
    const auto& adj = doc_it->second;
    auto from_s = adj.find(t.s);
    if (from_s == adj.end()) continue;
    for (int b : from_s->second) {
      if (b == t.s || b == t.o) continue;
      auto from_b = adj.find(b);
      if (from_b != adj.end() && from_b->second.count(t.o)) {
        subset.push_back(t);
        break;
      }
    }
  }
  return PredictionSet::of(std::move(subset));
}

Prf infer_f1(const PredictionSet& pred, const PredictionSet& gold) {
  PredictionSet subset = two_hop_subset(gold);
  std::set<PairKey> keep = pair_keys(subset);
  std::vector<Triple> kept;
  for (const auto& t : pred.triples) {
    if (keep.count({t.doc_id, t.s, t.o})) kept.push_back(t);
  }
  return score_sets(PredictionSet::of(std::move(kept)), subset);
}

std::pair<Prf, Prf> split_f1(const PredictionSet& pred,
                             const PredictionSet& gold,
                             const RelationSchema& schema) {
  std::set<int> freq(schema.frequent_set.begin(), schema.frequent_set.end());
  Prf frequent = score_sets(filter_by_relation(pred, freq, true),
                            filter_by_relation(gold, freq, true));
  Prf longtail = score_sets(filter_by_relation(pred, freq, false),
                            filter_by_relation(gold, freq, false));
  return {frequent, longtail};
}

ErrorCounts error_categories(const PredictionSet& pred,
                             const PredictionSet& gold) {
  std::set<PairKey> gold_pairs = pair_keys(gold);
  std::set<PairKey> pred_pairs = pair_keys(pred);

  ErrorCounts out;
  for (const auto& t : pred.triples) {
    if (gold.contains(t)) {
      out.correct++;
    } else if (gold_pairs.count({t.doc_id, t.s, t.o})) {
      out.wrong++;
    } else {
      out.more++;
    }
  }
  for (const auto& t : gold.triples) {
    if (pred.contains(t)) continue;
    out.missed++;
    if (!pred_pairs.count({t.doc_id, t.s, t.o})) out.missed_pair_level++;
  }
  return out;
}

Prf binary_f1(const PredictionSet& pred, const PredictionSet& gold) {
  std::set<PairKey> p = pair_keys(pred);
  std::set<PairKey> g = pair_keys(gold);
  long long hits = 0;
  for (const auto& k : p) hits += g.count(k);
  return prf_from_counts(hits, (long long)p.size(), (long long)g.size());
}

EvalReport evaluate_all(const PredictionSet& pred, const PredictionSet& gold,
                        const FactIndex& train_facts,
                        const RelationSchema& schema,
                        const std::vector<Document>& docs) {
  EvalReport r;
  r.overall = micro_f1(pred, gold);
  r.ign = ign_f1(pred, gold, train_facts, schema, docs);
  r.infer = infer_f1(pred, gold);
  std::tie(r.frequent, r.longtail) = split_f1(pred, gold, schema);
  r.binary = binary_f1(pred, gold);
  r.errors = error_categories(pred, gold);
  r.pred_count = (long long)pred.size();
  r.gold_count = (long long)gold.size();
  return r;
}

PredictionSet load_predictions(const std::string& path,
                               const RelationSchema& schema) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_string(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("prediction file " + path + ": " + e.what());
  }
  if (!j.is_array()) {
    throw SchemaError("prediction file " + path + ": expected a JSON array");
  }
  std::vector<Triple> ts;
  for (size_t i = 0; i < j.size(); i++) {
    const auto& e = j[i];
    if (!e.is_object() || !e.contains("title") || !e.contains("h_idx") ||
        !e.contains("t_idx") || !e.contains("r")) {
      throw SchemaError("prediction file " + path + ": entry " +
                        std::to_string(i) +
                        " needs title, h_idx, t_idx and r");
    }
    Triple t;
    t.doc_id = e.at("title").get<std::string>();
    t.s = e.at("h_idx").get<int>();
    t.o = e.at("t_idx").get<int>();
    if (t.s == t.o) {
      throw SchemaError("prediction file " + path + ": entry " +
                        std::to_string(i) + " predicts a self pair");
    }
    t.relation = schema.require_index(e.at("r").get<std::string>());
    ts.push_back(t);
  }
  return PredictionSet::of(std::move(ts));
}

void save_predictions(const std::string& path, const PredictionSet& preds,
                      const RelationSchema& schema) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : preds.triples) {
    arr.push_back({{"title", t.doc_id},
                   {"h_idx", t.s},
                   {"t_idx", t.o},
                   {"r", schema.relation_ids.at(t.relation)}});
  }
  write_file_atomic(path, arr.dump(2) + "\n");
}

namespace {

nlohmann::json prf_json(const Prf& p) {
  return {{"precision", p.precision},
          {"recall", p.recall},
          {"f1", p.f1},
          {"empty_gold", p.empty_gold}};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  return {{"overall", prf_json(r.overall)},
          {"ign", prf_json(r.ign)},
          {"infer", prf_json(r.infer)},
          {"frequent", prf_json(r.frequent)},
          {"longtail", prf_json(r.longtail)},
          {"binary", prf_json(r.binary)},
          {"errors",
           {{"correct", r.errors.correct},
            {"wrong", r.errors.wrong},
            {"more", r.errors.more},
            {"missed", r.errors.missed},
            {"missed_pair_level", r.errors.missed_pair_level}}},
          {"pred_count", r.pred_count},
          {"gold_count", r.gold_count}};
}

std::string report_to_table(const EvalReport& r) {
  std::ostringstream os;
  auto row = [&](const char* name, const Prf& p) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  %-10s P %6.4f  R %6.4f  F1 %6.4f%s\n",
                  name, p.precision, p.recall, p.f1,
                  p.empty_gold ? "  (empty gold)" : "");
    os << buf;
  };
  os << "metrics (" << r.pred_count << " predicted, " << r.gold_count
     << " gold)\n";
  row("overall", r.overall);
  row("ign", r.ign);
  row("infer", r.infer);
  row("frequent", r.frequent);
  row("longtail", r.longtail);
  row("binary", r.binary);
  os << "errors\n";
  os << "  correct " << r.errors.correct << "  wrong " << r.errors.wrong
     << "  missed " << r.errors.missed << " (" << r.errors.missed_pair_level
     << " on silent pairs)  more " << r.errors.more << "\n";
  long long universe =
      r.errors.correct + r.errors.wrong + r.errors.more + r.errors.missed;
  os << "  union of predicted and gold triples: " << universe << "\n";
  return os.str();
}

}  // namespace docre
