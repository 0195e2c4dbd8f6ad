#pragma once

// Full document scorer: marked encoding, entity pooling, localized context,
// grouped bilinear pair cells, axial refinement and the threshold-aware
// classifier, wired as one differentiable graph per document.

#include "docre/autograd.hpp"
#include "docre/corpus.hpp"
#include "docre/encoder.hpp"
#include "docre/eval.hpp"
#include "docre/loss.hpp"
#include "docre/pairrep.hpp"

#include <random>
#include <string>
#include <vector>

namespace docre {

struct ModelConfig {
  // encoder
  int hidden_dim = 32;
  int num_heads = 2;
  int num_layers = 2;
  int ffn_mult = 4;
  int max_positions = 128;
  double dropout = 0.1;
  // long-document chunking; chunk_len 0 encodes whole sequences up to
  // max_positions in one shot
  int chunk_len = 0;
  int chunk_stride = 0;
  // pair representation
  int bilinear_groups = 4;
  bool use_axial = true;
  bool stacked_axial = false;
  bool mask_axial_diagonal = false;
  bool normalize_context_query = true;
  // loss
  LossVariant loss_variant = LossVariant::AFL;
  double gamma = 0.5;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct DocScores {
  int n = 0;         // entities in the document
  ag::Var logits;    // (n*n) x (R+1), s-major grid rows; diagonal rows unused
};

class Model {
 public:
  Model(Vocab vocab, int num_relations, const ModelConfig& cfg, uint64_t seed);

  // Builds the forward graph for one document. Throws on fewer than two
  // entities (no pairs to score).
  DocScores score(ag::Graph& g, const Document& doc, bool train,
                  std::mt19937_64& dropout_rng);

  ag::Var loss(ag::Graph& g, const DocScores& scores,
               const LabelTensor& labels);

  // Inference-mode logits on a private graph, (n*n) x (R+1).
  Eigen::MatrixXd infer_logits(const Document& doc);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  EncoderBackend& backend() { return backend_; }
  int num_relations() const { return num_relations_; }
  int num_classes() const { return num_relations_ + 1; }
  uint64_t seed() const { return seed_; }

  // Stable order: encoder tensors, fusion weights, bilinear, axial, classifier.
  std::vector<ag::Tensor*> parameters();

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  int num_relations_ = 0;
  uint64_t seed_ = 0;
  ToyTransformerBackend backend_;
  ag::Tensor fuse_ws_, fuse_wo_, fuse_wc_;
  BilinearParams bilinear_;
  AxialParams axial_;
  ClassifierHead cls_;
};

// Threshold decisions for every ordered pair of every document with at least
// two entities.
PredictionSet model_predictions(Model& model,
                                const std::vector<Document>& docs);

// Rebuild a vocabulary from its serialized token list.
Vocab vocab_from_tokens(const std::vector<std::string>& tokens);

}  // namespace docre
