#pragma once

// Document encoding: mention markers, chunked encoding through a pluggable
// backend, entity pooling and localized context pooling. Everything runs on
// the autodiff tape so gradients reach the backend parameters.

#include "docre/autograd.hpp"
#include "docre/corpus.hpp"

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace docre {

struct Vocab {
  std::vector<std::string> tokens;  // id -> surface
  std::unordered_map<std::string, int> ids;
  int unk_id = -1;
  int marker_id = -1;  // the "*" mention marker; -1 when absent

  static Vocab build(const std::vector<Document>& docs,
                     bool include_marker = true);
  int add(const std::string& tok);
  int id_of(const std::string& tok) const;  // falls back to unk_id
  int size() const { return static_cast<int>(tokens.size()); }
  bool has_marker() const { return marker_id >= 0; }
};

struct MarkedSequence {
  std::vector<int> token_ids;
  std::vector<bool> is_marker;  // parallel to token_ids
  // [entity][mention] -> position of the opening "*" in token_ids
  std::vector<std::vector<int>> mention_marker_index;

  int length() const { return static_cast<int>(token_ids.size()); }
};

struct EncodeOut {
  ag::Var hidden;                  // l x d
  std::vector<ag::Var> attention;  // one l x l row-stochastic matrix per head
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual int hidden_dim() const = 0;
  virtual int num_heads() const = 0;
  virtual int max_positions() const = 0;
  // Deterministic for fixed parameters and input when train is false.
  virtual EncodeOut encode(ag::Graph& g, const std::vector<int>& token_ids,
                           bool train, std::mt19937_64& rng) = 0;
  virtual std::vector<ag::Tensor*> parameters() = 0;
};

struct ToyEncoderConfig {
  int hidden_dim = 32;
  int num_heads = 2;
  int num_layers = 2;
  int max_positions = 128;
  int ffn_mult = 4;
  double dropout = 0.1;
};

// Small trainable transformer encoder (pre-norm, learned positions) standing
// in for a pretrained model behind the same contract. Final-layer attention
// is what downstream pooling consumes.
class ToyTransformerBackend : public EncoderBackend {
 public:
  ToyTransformerBackend(int vocab_size, const ToyEncoderConfig& cfg,
                        uint64_t seed);

  int hidden_dim() const override { return cfg_.hidden_dim; }
  int num_heads() const override { return cfg_.num_heads; }
  int max_positions() const override { return cfg_.max_positions; }
  EncodeOut encode(ag::Graph& g, const std::vector<int>& token_ids, bool train,
                   std::mt19937_64& rng) override;
  std::vector<ag::Tensor*> parameters() override;

  const ToyEncoderConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

 private:
  struct Layer {
    ag::Tensor ln1_g, ln1_b;
    std::vector<ag::Tensor> wq, wk, wv;  // per head, d x head_dim
    ag::Tensor wo, bo;                   // d x d, 1 x d
    ag::Tensor ln2_g, ln2_b;
    ag::Tensor w1, b1, w2, b2;           // ffn
  };

  ToyEncoderConfig cfg_;
  int vocab_size_;
  ag::Tensor emb_, pos_;
  std::vector<Layer> layers_;
  ag::Tensor lnf_g_, lnf_b_;
};

// Insert "*" around every mention, outermost first at shared boundaries.
// Throws ConfigError when the vocabulary lacks the marker token.
MarkedSequence insert_markers(const Document& doc, const Vocab& vocab);

// Encode a sequence of any length as overlapping chunks. Positions covered by
// several chunks take the arithmetic mean of hidden rows; attention entries
// average over chunks covering both endpoints, then rows renormalize to sum 1.
// A single chunk passes backend output through untouched.
EncodeOut encode_chunked(ag::Graph& g, const std::vector<int>& token_ids,
                         EncoderBackend& backend, int max_len, int stride,
                         bool train, std::mt19937_64& rng);

// logsumexp pooling over mention rows (max-shifted); mention_rows indexes
// rows of hidden. Result is 1 x d.
ag::Var pool_entity(ag::Graph& g, ag::Var hidden,
                    const std::vector<int>& mention_rows);

// Mean of the mention rows of one head's attention. Result is 1 x l.
ag::Var pool_entity_attention(ag::Graph& g, ag::Var head_attention,
                              const std::vector<int>& mention_rows);

struct EntityFeatures {
  ag::Var h_e;                              // n x d
  std::vector<std::vector<ag::Var>> a_e;    // [entity][head] -> 1 x l
};

EntityFeatures compute_entity_features(ag::Graph& g, const MarkedSequence& seq,
                                       const EncodeOut& enc);

// q = sum over heads of (a_s . a_o), optionally normalized to a distribution
// (all-zero overlap maps to uniform); returns c = q H, a 1 x d row.
ag::Var context_vector(ag::Graph& g, const std::vector<ag::Var>& a_s,
                       const std::vector<ag::Var>& a_o, ag::Var hidden,
                       bool normalize_query = true);

// tanh(h W_h + c W_c); both weights are d x d, no bias.
ag::Var fuse_context(ag::Graph& g, ag::Var h_e, ag::Var c, ag::Var w_h,
                     ag::Var w_c);

}  // namespace docre
