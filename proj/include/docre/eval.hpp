#pragma once

// Metric suite: micro P/R/F1, the ignore-train variant, the two-hop
// inference subset, frequent/long-tail split, pair-level binary F1, and the
// correct/wrong/missed/more error breakdown.

#include "docre/corpus.hpp"

#include <string>
#include <vector>

namespace docre {

struct Triple {
  std::string doc_id;
  int s = -1;
  int o = -1;
  int relation = -1;  // schema index

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Deduplicated, order-canonical triple set.
struct PredictionSet {
  std::vector<Triple> triples;

  static PredictionSet of(std::vector<Triple> ts);  // sorts and dedups
  size_t size() const { return triples.size(); }
  bool contains(const Triple& t) const;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty_gold = false;  // gold (after any filtering) was empty
};

// Every predicted triple falls in exactly one of correct/wrong/more; the
// missed accounting is exposed in both views (see error_categories).
struct ErrorCounts {
  long long correct = 0;            // predicted triple is gold
  long long wrong = 0;              // right pair, wrong relation
  long long more = 0;               // pair has no gold relation at all
  long long missed = 0;             // gold triples absent from pred
  long long missed_pair_level = 0;  // gold triples on pairs with no prediction
};

struct EvalReport {
  Prf overall;
  Prf ign;
  Prf infer;
  Prf frequent;
  Prf longtail;
  Prf binary;
  ErrorCounts errors;
  long long pred_count = 0;
  long long gold_count = 0;
};

PredictionSet gold_set_from_corpus(const std::vector<Document>& docs,
                                   const RelationSchema& schema);

Prf micro_f1(const PredictionSet& pred, const PredictionSet& gold);

// Filters both sides to triples whose normalized-surface key is absent from
// the training fact index, then scores. Needs the documents to resolve
// entity surfaces.
Prf ign_f1(const PredictionSet& pred, const PredictionSet& gold,
           const FactIndex& train_facts, const RelationSchema& schema,
           const std::vector<Document>& docs);

// Scores only gold triples that close a two-hop chain: (s, r, o) counts when
// some bridge b outside {s, o} has gold edges (s, *, b) and (b, *, o) in the
// same document. Predictions are filtered to the subset's (doc, s, o) pairs.
Prf infer_f1(const PredictionSet& pred, const PredictionSet& gold);
PredictionSet two_hop_subset(const PredictionSet& gold);

// Micro F1 restricted to relations inside / outside schema.frequent_set.
std::pair<Prf, Prf> split_f1(const PredictionSet& pred,
                             const PredictionSet& gold,
                             const RelationSchema& schema);

// The missed field counts gold triples absent from pred, which is what makes
// correct + wrong + more + missed cover pred-union-gold exactly; the
// pair-level view (gold triples whose pair got no prediction at all) rides
// along as missed_pair_level.
ErrorCounts error_categories(const PredictionSet& pred,
                             const PredictionSet& gold);

// Collapse both sides to (doc, s, o) pairs and score pair retrieval.
Prf binary_f1(const PredictionSet& pred, const PredictionSet& gold);

EvalReport evaluate_all(const PredictionSet& pred, const PredictionSet& gold,
                        const FactIndex& train_facts,
                        const RelationSchema& schema,
                        const std::vector<Document>& docs);

// Leaderboard-style prediction file: JSON array of {title, h_idx, t_idx, r}.
PredictionSet load_predictions(const std::string& path,
                               const RelationSchema& schema);
void save_predictions(const std::string& path, const PredictionSet& preds,
                      const RelationSchema& schema);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace docre
