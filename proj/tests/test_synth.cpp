#include "docre/synth.hpp"

#include "docre/eval.hpp"

#include "doctest.h"

#include <algorithm>
#include <set>

using namespace docre;

namespace {

// true when some sentence is exactly [head_surface, "v<r>", tail_surface]
bool fact_stated(const Document& doc, const Fact& f, int relation_index) {
  std::string verb = "v" + std::to_string(relation_index);
  for (const auto& sent : doc.sentences) {
    if (sent.size() != 3) continue;
    for (const Mention& hm : doc.entities[f.head]) {
      for (const Mention& tm : doc.entities[f.tail]) {
        if (sent[0] == hm.surface && sent[1] == verb && sent[2] == tm.surface)
          return true;
      }
    }
  }
  return false;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("verb corpus is deterministic and self-consistent") {
  SynthSpec spec;
  spec.docs = 8;
  spec.relations = 4;
  spec.seed = 21;
  auto a = make_verb_corpus(spec);
  auto b = make_verb_corpus(spec);
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < a.size(); i++) {
    CHECK(document_to_json(a[i]).dump() == document_to_json(b[i]).dump());
  }

  RelationSchema schema = make_schema(4);
  for (const Document& doc : a) {
    CHECK(!doc.facts.empty());
    for (const Fact& f : doc.facts) {
      int r = schema.require_index(f.relation);
      CHECK(fact_stated(doc, f, r));
    }
  }

  spec.seed = 22;
  auto c = make_verb_corpus(spec);
  bool differs = false;
  for (size_t i = 0; i < a.size(); i++) {
    if (document_to_json(a[i]).dump() != document_to_json(c[i]).dump())
      differs = true;
  }
  CHECK(differs);
}

TEST_CASE("second labels add a distinct relation on the same pair") {
  SynthSpec spec;
  spec.docs = 20;
  spec.relations = 4;
  spec.pair_fact_rate = 0.5;
  spec.second_label_rate = 1.0;
  spec.seed = 3;
  auto docs = make_verb_corpus(spec);

  bool saw_double = false;
  for (const Document& doc : docs) {
    std::map<std::pair<int, int>, std::set<std::string>> per_pair;
    for (const Fact& f : doc.facts) per_pair[{f.head, f.tail}].insert(f.relation);
    for (auto& [pair, rels] : per_pair) {
      if (rels.size() >= 2) saw_double = true;
      CHECK(rels.size() <= 2);
    }
  }
  CHECK(saw_double);
}

TEST_CASE("relation weights skew the drawn relations") {
  SynthSpec spec;
  spec.docs = 60;
  spec.relations = 2;
  spec.relation_weights = {10.0, 1.0};
  spec.seed = 9;
  auto docs = make_verb_corpus(spec);
  int r0 = 0, r1 = 0;
  for (const Document& doc : docs) {
    for (const Fact& f : doc.facts) (f.relation == "r0" ? r0 : r1)++;
  }
  CHECK(r0 > 4 * r1);
  CHECK(r1 > 0);
}

TEST_CASE("composition corpus hides the composed relation from pair-local text") {
  auto docs = make_composition_corpus(30, 17, "cmp");
  RelationSchema schema = composition_schema();
  REQUIRE(docs.size() == 30);

  for (const Document& doc : docs) {
    REQUIRE(doc.n_entities() == 6);
    REQUIRE(doc.facts.size() == 6);

    std::vector<Fact> composed;
    for (const Fact& f : doc.facts) {
      int r = schema.require_index(f.relation);
      if (r >= 2) {
        composed.push_back(f);
        // the composed pair is never stated as a sentence
        CHECK(!fact_stated(doc, f, r));
        CHECK(f.evidence.empty());
      } else {
        CHECK(fact_stated(doc, f, r));
      }
    }
    REQUIRE(composed.size() == 2);
    // one chain of each type, so both composed relations appear
    std::set<std::string> rels = {composed[0].relation, composed[1].relation};
    CHECK(rels == std::set<std::string>{"r2", "r3"});

    // each bridge entity surfaces under three distinct aliases
    int bridges_checked = 0;
    for (int e = 0; e < doc.n_entities(); e++) {
      if (doc.entities[e].size() < 2) continue;
      std::set<std::string> aliases;
      for (const Mention& m : doc.entities[e]) aliases.insert(m.surface);
      CHECK(aliases.size() == 3);
      bridges_checked++;
    }
    CHECK(bridges_checked == 2);
  }

  // the two-hop bridge subset is exactly the composed triples
  PredictionSet gold = gold_set_from_corpus(docs, schema);
  PredictionSet subset = two_hop_subset(gold);
  PredictionSet composed_triples;
  {
    std::vector<Triple> acc;
    for (const Document& doc : docs) {
      for (const Fact& f : doc.facts) {
        int r = schema.require_index(f.relation);
        if (r >= 2) acc.push_back({doc.doc_id, f.head, f.tail, r});
      }
    }
    composed_triples = PredictionSet::of(std::move(acc));
  }
  CHECK(subset.triples == composed_triples.triples);

  // determinism
  auto again = make_composition_corpus(30, 17, "cmp");
  for (size_t i = 0; i < docs.size(); i++) {
    CHECK(document_to_json(docs[i]).dump() == document_to_json(again[i]).dump());
  }
}

TEST_CASE("distant corruption keeps, drops and invents facts as configured") {
  SynthSpec spec;
  spec.docs = 30;
  spec.relations = 3;
  spec.pair_fact_rate = 0.35;
  spec.seed = 5;
  auto gold = make_verb_corpus(spec);

  auto same = corrupt_distant(gold, 3, 0.0, 0.0, 1);
  REQUIRE(same.size() == gold.size());
  size_t gold_total = 0, kept_total = 0;
  for (size_t i = 0; i < gold.size(); i++) {
    CHECK(same[i].is_distant);
    CHECK(same[i].facts.size() == gold[i].facts.size());
    gold_total += gold[i].facts.size();
  }

  auto none = corrupt_distant(gold, 3, 1.0, 0.0, 1);
  for (const Document& doc : none) CHECK(doc.facts.empty());

  auto flooded = corrupt_distant(gold, 3, 0.0, 1.0, 1);
  for (size_t i = 0; i < gold.size(); i++) {
    CHECK(flooded[i].facts.size() >= static_cast<size_t>(gold[i].n_pairs()) -
                                          gold[i].facts.size());
  }

  auto partial = corrupt_distant(gold, 3, 0.3, 0.0, 1);
  for (size_t i = 0; i < gold.size(); i++) kept_total += partial[i].facts.size();
  double kept = static_cast<double>(kept_total) / gold_total;
  CHECK(kept > 0.55);
  CHECK(kept < 0.85);

  auto partial2 = corrupt_distant(gold, 3, 0.3, 0.0, 1);
  for (size_t i = 0; i < partial.size(); i++) {
    CHECK(document_to_json(partial[i]).dump() ==
          document_to_json(partial2[i]).dump());
  }

  CHECK_THROWS_AS(corrupt_distant(gold, 3, -0.1, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(corrupt_distant(gold, 3, 0.0, 1.5, 1), ConfigError);
}

TEST_SUITE_END();
