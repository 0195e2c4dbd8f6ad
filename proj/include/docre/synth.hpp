#pragma once

// Synthetic corpora with known ground truth: verb-tagged relation docs for
// overfit and skew experiments, a bridge-composition corpus where some
// relations are only derivable through a third entity, and a label
// corruptor that fakes distant supervision noise.

#include "docre/corpus.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace docre {

struct SynthSpec {
  int docs = 20;
  int relations = 5;
  int entities_min = 3;
  int entities_max = 5;
  // chance an ordered pair states a fact, and chance that pair also states a
  // second fact with a different relation
  double pair_fact_rate = 0.3;
  double second_label_rate = 0.0;
  // per-relation sampling weights; empty means uniform
  std::vector<double> relation_weights;
  // 0: every document invents its own entity surfaces (easy to memorize,
  // right for overfit experiments). >0: surfaces are sampled per document
  // from a shared pool of this many names, so an entity token recurs across
  // documents under different relations and only the verb generalizes.
  int surface_pool = 0;
  uint64_t seed = 1;
  std::string doc_prefix = "syn";
};

// Documents where every fact is stated as "<head> v<r> <tail>" in its own
// sentence.
std::vector<Document> make_verb_corpus(const SynthSpec& spec);

// Schema "r0".."r{relations-1}".
RelationSchema make_schema(int relations);

// Two three-entity chains per document. Base edges are stated with verb
// tokens (relations r0/r1). Each bridge entity additionally carries a type
// sentence ("<alias> is t0|t1") under a third alias surface, and the chain's
// head->tail pair is labeled r2 or r3 by that type. The pair itself is never
// stated, the two bridge types in a document always differ, and the alias
// surfaces only corefer through the entity clusters, so the composed label
// cannot be read off the endpoints alone. surface_pool as in SynthSpec (a
// pooled draw covers the ten surfaces of a document and needs pool >= 10).
std::vector<Document> make_composition_corpus(int docs, uint64_t seed,
                                              const std::string& doc_prefix,
                                              int surface_pool = 0);
RelationSchema composition_schema();  // r0..r3

// Distant-supervision style corruption: drops each fact with probability
// flip_rate, adds a random spurious fact per unlabeled pair with probability
// spurious_rate, and marks documents as distant. The text is untouched.
std::vector<Document> corrupt_distant(const std::vector<Document>& gold,
                                      int relations, double flip_rate,
                                      double spurious_rate, uint64_t seed);

}  // namespace docre
