#include "docre/synth.hpp"

#include "docre/common.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <numeric>
#include <set>

namespace docre {

namespace {

using nlohmann::json;

json mention(const std::string& surface, int sent_id, int start, int end) {
  return {{"name", surface},
          {"sent_id", sent_id},
          {"pos", {start, end}},
          {"type", "T"}};
}

json label(int h, int r, int t, std::vector<int> evidence) {
  return {{"h", h},
          {"r", "r" + std::to_string(r)},
          {"t", t},
          {"evidence", evidence}};
}

// n distinct names drawn from a shared pool of `pool` candidates
std::vector<std::string> pooled_surfaces(int pool, int n,
                                         std::mt19937_64& rng) {
  std::vector<int> pick(pool);
  std::iota(pick.begin(), pick.end(), 0);
  std::shuffle(pick.begin(), pick.end(), rng);
  std::vector<std::string> out;
  out.reserve(n);
  for (int e = 0; e < n; e++) out.push_back("e" + std::to_string(pick[e]));
  return out;
}

}  // namespace

RelationSchema make_schema(int relations) {
  std::vector<std::string> ids;
  ids.reserve(relations);
  for (int r = 0; r < relations; r++) ids.push_back("r" + std::to_string(r));
  return RelationSchema(ids);
}

std::vector<Document> make_verb_corpus(const SynthSpec& spec) {
  if (spec.docs < 1 || spec.relations < 1 || spec.entities_min < 2 ||
      spec.entities_max < spec.entities_min) {
    throw ConfigError("verb corpus: bad generator spec");
  }
  if (spec.surface_pool > 0 && spec.surface_pool < spec.entities_max) {
    throw ConfigError("verb corpus: surface_pool must cover entities_max");
  }
  std::vector<double> weights = spec.relation_weights;
  if (weights.empty()) weights.assign(spec.relations, 1.0);
  if ((int)weights.size() != spec.relations) {
    throw ConfigError("verb corpus: relation_weights size mismatch");
  }

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<int> rel_dist(weights.begin(), weights.end());
  std::uniform_int_distribution<int> ent_count(spec.entities_min,
                                               spec.entities_max);
  std::bernoulli_distribution has_fact(spec.pair_fact_rate);
  std::bernoulli_distribution second_fact(spec.second_label_rate);

  std::vector<Document> docs;
  for (int di = 0; di < spec.docs; di++) {
    int n = ent_count(rng);
    std::vector<std::string> surfaces;
    if (spec.surface_pool > 0) {
      surfaces = pooled_surfaces(spec.surface_pool, n, rng);
    } else {
      for (int e = 0; e < n; e++) {
        surfaces.push_back("x" + std::to_string(di) + "e" + std::to_string(e));
      }
    }

    json sents = json::array();
    json intro = json::array();
    intro.push_back("intro");
    json vertex_set = json::array();
    for (int e = 0; e < n; e++) {
      intro.push_back(surfaces[e]);
      vertex_set.push_back(json::array({mention(surfaces[e], 0, e + 1, e + 2)}));
    }
    sents.push_back(intro);

    json labels = json::array();
    for (int s = 0; s < n; s++) {
      for (int o = 0; o < n; o++) {
        if (s == o || !has_fact(rng)) continue;
        int r1 = rel_dist(rng);
        std::vector<int> rels = {r1};
        if (second_fact(rng)) {
          int r2 = rel_dist(rng);
          if (r2 != r1) rels.push_back(r2);
        }
        for (int r : rels) {
          int sent_id = (int)sents.size();
          sents.push_back(json::array(
              {surfaces[s], "v" + std::to_string(r), surfaces[o]}));
          vertex_set[s].push_back(mention(surfaces[s], sent_id, 0, 1));
          vertex_set[o].push_back(mention(surfaces[o], sent_id, 2, 3));
          labels.push_back(label(s, r, o, {sent_id}));
        }
      }
    }
    if (labels.empty()) {
      // force one fact so every document trains and evaluates
      int r = rel_dist(rng);
      int sent_id = (int)sents.size();
      sents.push_back(
          json::array({surfaces[0], "v" + std::to_string(r), surfaces[1]}));
      vertex_set[0].push_back(mention(surfaces[0], sent_id, 0, 1));
      vertex_set[1].push_back(mention(surfaces[1], sent_id, 2, 3));
      labels.push_back(label(0, r, 1, {sent_id}));
    }

    json raw = {{"title", spec.doc_prefix + std::to_string(di)},
                {"sents", sents},
                {"vertexSet", vertex_set},
                {"labels", labels}};
    docs.push_back(parse_document(raw));
  }
  return docs;
}

RelationSchema composition_schema() { return make_schema(4); }

std::vector<Document> make_composition_corpus(int docs, uint64_t seed,
                                              const std::string& doc_prefix,
                                              int surface_pool) {
  if (docs < 1) throw ConfigError("composition corpus: need at least one doc");
  if (surface_pool > 0 && surface_pool < 10) {
    throw ConfigError(
        "composition corpus: surface_pool must be at least 10 (two chains use "
        "ten surfaces per document)");
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);

  std::vector<Document> out;
  for (int di = 0; di < docs; di++) {
    // six entities, shuffled role assignment: two chains head->bridge->tail
    std::vector<int> role(6);
    for (int i = 0; i < 6; i++) role[i] = i;
    std::shuffle(role.begin(), role.end(), rng);
    // role[0..2] = chain one (head, bridge, tail), role[3..5] = chain two

    // surfaces per chain: head, three bridge aliases, tail
    std::vector<std::string> names;
    if (surface_pool > 0) {
      names = pooled_surfaces(surface_pool, 10, rng);
    } else {
      for (const char* stem : {"ah", "ab1", "ab2", "ab3", "at",
                               "bh", "bb1", "bb2", "bb3", "bt"}) {
        names.push_back("m" + std::to_string(di) + stem);
      }
    }

    int type1 = coin(rng) ? 1 : 0;
    int type2 = 1 - type1;  // always different, so the doc as a whole is
                            // uninformative about which chain carries which

    struct Sentence {
      json tokens;
      // (entity, start, end) mentions within this sentence
      std::vector<std::array<int, 3>> spans;
      int base_h = -1, base_r = -1, base_t = -1;  // stated fact, if any
    };
    std::vector<Sentence> sentences;

    auto add_chain = [&](int head, int bridge, int tail, int type,
                         int name_base) {
      int p1 = coin(rng) ? 1 : 0;
      int p2 = coin(rng) ? 1 : 0;
      const std::string& h_tok = names[name_base + 0];
      const std::string& b1 = names[name_base + 1];
      const std::string& b2 = names[name_base + 2];
      const std::string& b3 = names[name_base + 3];
      const std::string& t_tok = names[name_base + 4];

      Sentence s1;
      s1.tokens = json::array({h_tok, "v" + std::to_string(p1), b1});
      s1.spans = {{head, 0, 1}, {bridge, 2, 3}};
      s1.base_h = head;
      s1.base_r = p1;
      s1.base_t = bridge;
      sentences.push_back(s1);

      Sentence s2;
      s2.tokens = json::array({b2, "v" + std::to_string(p2), t_tok});
      s2.spans = {{bridge, 0, 1}, {tail, 2, 3}};
      s2.base_h = bridge;
      s2.base_r = p2;
      s2.base_t = tail;
      sentences.push_back(s2);

      Sentence s3;
      s3.tokens = json::array({b3, "is", "t" + std::to_string(type)});
      s3.spans = {{bridge, 0, 1}};
      sentences.push_back(s3);
    };

    add_chain(role[0], role[1], role[2], type1, 0);
    add_chain(role[3], role[4], role[5], type2, 5);
    std::shuffle(sentences.begin(), sentences.end(), rng);

    json sents = json::array();
    json vertex_set = json::array();
    for (int e = 0; e < 6; e++) vertex_set.push_back(json::array());
    json labels = json::array();
    for (int si = 0; si < (int)sentences.size(); si++) {
      const Sentence& s = sentences[si];
      sents.push_back(s.tokens);
      for (const auto& [ent, a, b] : s.spans) {
        vertex_set[ent].push_back(
            mention(s.tokens[a].get<std::string>(), si, a, b));
      }
      if (s.base_h >= 0) {
        labels.push_back(label(s.base_h, s.base_r, s.base_t, {si}));
      }
    }
    // composed facts, never stated in text
    labels.push_back(label(role[0], 2 + type1, role[2], {}));
    labels.push_back(label(role[3], 2 + type2, role[5], {}));

    json raw = {{"title", doc_prefix + std::to_string(di)},
                {"sents", sents},
                {"vertexSet", vertex_set},
                {"labels", labels}};
    out.push_back(parse_document(raw));
  }
  return out;
}

std::vector<Document> corrupt_distant(const std::vector<Document>& gold,
                                      int relations, double flip_rate,
                                      double spurious_rate, uint64_t seed) {
  if (flip_rate < 0 || flip_rate > 1 || spurious_rate < 0 ||
      spurious_rate > 1) {
    throw ConfigError("distant corruption rates must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(flip_rate);
  std::bernoulli_distribution spur(spurious_rate);
  std::uniform_int_distribution<int> rel(0, relations - 1);

  std::vector<Document> out = gold;
  for (Document& doc : out) {
    doc.is_distant = true;
    std::set<std::pair<int, int>> labeled;
    std::vector<Fact> kept;
    for (const Fact& f : doc.facts) {
      labeled.insert({f.head, f.tail});
      if (!flip(rng)) kept.push_back(f);
    }
    int n = doc.n_entities();
    for (int s = 0; s < n; s++) {
      for (int o = 0; o < n; o++) {
        if (s == o || labeled.count({s, o})) continue;
        if (spur(rng)) {
          kept.push_back({s, "r" + std::to_string(rel(rng)), o, {}});
        }
      }
    }
    doc.facts = std::move(kept);
  }
  return out;
}

}  // namespace docre
