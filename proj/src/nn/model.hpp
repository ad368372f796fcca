#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "chess/encode.hpp"
#include "nn/archive.hpp"
#include "nn/tensor.hpp"

namespace ply::nn {

enum class Activation : uint8_t { Identity, Relu, Gelu, Swish, Mish };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

struct SmolgenSpec {
  int d_compress = 32;
  int d_hidden = 256;
  int d_gen = 256;

  bool operator==(const SmolgenSpec&) const = default;
};

// Hyperparameters of the square-per-token transformer. Defaults are the
// full-size network; synthetic fixtures shrink everything but n_squares.
struct ModelSpec {
  int n_layers = 15;
  int d_resid = 768;
  int n_heads = 24;
  int d_head = 32;
  int d_mlp = 1024;
  int n_squares = 64;
  int d_policy_hidden = 768;
  int d_policy = 768;
  int d_value = 32;
  int d_value_hidden = 128;
  std::optional<SmolgenSpec> smolgen = SmolgenSpec{};
  Activation activation = Activation::Relu;
  Activation smolgen_activation = Activation::Relu;
  Activation policy_activation = Activation::Relu;
  bool promotion = true;
  chess::LayoutDescriptor layout = chess::canonical_layout();

  int embed_width() const { return layout.n_channels() + 64; }

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
  void validate() const;
};

// A named activation inside one forward pass. Layers are stored 0-based;
// report formatting adds 1 (the paper's L12H12 is storage layer 11, head 11).
// Residual sites use stream indices: 0 = post-embedding, k = after layer k
// (post-MLP, post-LayerNorm), patchable for k in [0, n_layers).
enum class SiteKind : uint8_t { Residual, HeadOutput, AttnEntry };

struct ActivationSite {
  SiteKind kind = SiteKind::Residual;
  int layer = 0;
  int head = -1;
  int square = -1;  // Residual
  int query = -1;   // AttnEntry
  int key = -1;     // AttnEntry

  static ActivationSite residual(int stream_index, int square) {
    return {SiteKind::Residual, stream_index, -1, square, -1, -1};
  }
  static ActivationSite head_output(int layer, int head) {
    return {SiteKind::HeadOutput, layer, head, -1, -1, -1};
  }
  static ActivationSite attn_entry(int layer, int head, int query, int key) {
    return {SiteKind::AttnEntry, layer, head, -1, query, key};
  }

  // Reads may address the final residual stream (n_layers); writes may not,
  // matching the patchable range above.
  void validate(const ModelSpec& spec, bool as_read = false) const;
  std::string describe() const;  // 1-based human-readable label
  auto operator<=>(const ActivationSite&) const = default;
};

// One activation override. An empty value means "write zeros" (the only
// form attention entries accept; residual writes carry d_resid floats and
// head outputs 64*d_head floats).
struct HookWrite {
  ActivationSite site;
  std::vector<float> value;
};

struct HookSet {
  std::vector<ActivationSite> reads;
  std::vector<HookWrite> writes;
  // When set, attention-entry ablation masks the pre-softmax score to -inf
  // (renormalizing variant) instead of zeroing the post-softmax weight.
  bool presoftmax_mask = false;

  bool empty() const { return reads.empty() && writes.empty(); }
  void validate(const ModelSpec& spec) const;
};

enum class TraceLevel : uint8_t { None, Policy, Full };

// Per-call record of internals. Indexed [stream or layer][head] as noted;
// tensors are empty unless the trace level or a read hook requested them.
struct ForwardTrace {
  // residual[i]: [64, d_resid]; i in [0, n_layers], where n_layers is the
  // final output consumed by the heads.
  std::vector<Tensor> residual;
  std::vector<std::vector<Tensor>> attn;            // [layer][head]: [64, 64]
  std::vector<std::vector<Tensor>> qk_scores;       // pre-softmax QK/sqrt(d)
  std::vector<std::vector<Tensor>> smolgen_scores;  // pre-softmax additive
  std::vector<std::vector<Tensor>> head_out;        // [layer][head]: [64, d_head]
};

struct PolicyOutput {
  Tensor logits;                 // [64, 64] source x target
  std::optional<Tensor> promo;   // [64, 4] target x (n,b,r,q) additive offsets

  float move_logit(const chess::Move& m) const;
};

struct ValueOutput {
  std::array<double, 3> wdl{};  // win, draw, loss; sums to 1

  double score() const { return wdl[0] - wdl[2]; }
};

struct ForwardResult {
  PolicyOutput policy;
  ValueOutput value;
  ForwardTrace trace;
};

// Legal-move distribution: legal-masked softmax over move logits.
struct MoveDist {
  std::vector<chess::Move> moves;
  std::vector<double> probs;

  double prob_of(const chess::Move& m) const;
  chess::Move argmax() const;
};

class Model {
 public:
  static Model load(const std::string& path);
  static Model from_archive(Archive archive);
  void save(const std::string& path) const;

  const ModelSpec& spec() const { return spec_; }
  const Archive& archive() const { return archive_; }
  const std::string& hash() const { return hash_; }
  int64_t param_count() const { return archive_.total_params(); }

  ForwardResult forward(const chess::InputPlanes& planes, const HookSet& hooks,
                        TraceLevel level) const;

  ForwardResult forward(const chess::InputPlanes& planes) const {
    return forward(planes, HookSet{}, TraceLevel::Policy);
  }

  // Encode + forward + legal-masked distribution for an absolute-frame board.
  MoveDist move_distribution(const chess::Board& board) const;

 private:
  struct LayerWeights {
    const Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    const Tensor *ln1g, *ln1b, *ln2g, *ln2b;
    const Tensor *mw1, *mb1, *mw2, *mb2;
    const Tensor *sg_compress, *sg_d1w, *sg_d1b, *sg_ln1g, *sg_ln1b;
    const Tensor *sg_d2w, *sg_d2b, *sg_ln2g, *sg_ln2b;
  };

  void resolve();  // builds weight pointers, validates shapes

  ModelSpec spec_;
  Archive archive_;
  std::string hash_;

  const Tensor *embed_w_, *embed_b_, *embed_lng_, *embed_lnb_;
  std::vector<LayerWeights> layers_;
  const Tensor* sg_global_ = nullptr;
  const Tensor *pol_fc1w_, *pol_fc1b_, *pol_srcw_, *pol_srcb_, *pol_tgtw_, *pol_tgtb_;
  const Tensor* pol_promo_ = nullptr;
  const Tensor *val_projw_, *val_projb_, *val_fc1w_, *val_fc1b_, *val_fc2w_, *val_fc2b_;
};

// Legal-masked softmax over the board's legal moves; board must be in the
// same frame the planes were encoded from.
MoveDist policy_distribution(const PolicyOutput& policy, const chess::Board& board);

double log_odds(double p);          // ln(p/(1-p)) after clamping to [1e-9, 1-1e-9]
bool log_odds_clamped(double p);    // true when the clamp was active

}  // namespace ply::nn
