#include "nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <json.hpp>

#include "common/error.hpp"

namespace ply::nn {

namespace {

using nlohmann::json;

constexpr float kLnEps = 1e-5f;

float apply_act(Activation a, float x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0f ? x : 0.0f;
    case Activation::Gelu: return 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
    case Activation::Swish: return x / (1.0f + std::exp(-x));
    case Activation::Mish: return x * std::tanh(std::log1p(std::exp(x)));
  }
  return x;
}

void apply_act(Activation a, float* v, int64_t n) {
  if (a == Activation::Identity) return;
  for (int64_t i = 0; i < n; ++i) v[i] = apply_act(a, v[i]);
}

void layer_norm(float* v, int64_t n, const Tensor& gamma, const Tensor& beta) {
  float mean = 0.0f;
  for (int64_t i = 0; i < n; ++i) mean += v[i];
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    const float d = v[i] - mean;
    var += d * d;
  }
  var /= static_cast<float>(n);
  const float inv = 1.0f / std::sqrt(var + kLnEps);
  for (int64_t i = 0; i < n; ++i)
    v[i] = gamma.at(i) * (v[i] - mean) * inv + beta.at(i);
}

void softmax_row(float* v, int64_t n) {
  float mx = v[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  float sum = 0.0f;
  for (int64_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  const float inv = 1.0f / sum;
  for (int64_t i = 0; i < n; ++i) v[i] *= inv;
}

void check_finite(const float* v, int64_t n, const std::string& where) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i]))
      fail(ErrorKind::Numeric, "non-finite value in " + where);
}

int promo_index(chess::PieceKind k) {
  switch (k) {
    case chess::PieceKind::Knight: return 0;
    case chess::PieceKind::Bishop: return 1;
    case chess::PieceKind::Rook: return 2;
    case chess::PieceKind::Queen: return 3;
    default: fail(ErrorKind::Illegal, "invalid promotion piece");
  }
}

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "swish") return Activation::Swish;
  if (name == "mish") return Activation::Mish;
  fail(ErrorKind::Config, "unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Swish: return "swish";
    case Activation::Mish: return "mish";
  }
  return "?";
}

std::string ModelSpec::to_json() const {
  json j;
  j["n_layers"] = n_layers;
  j["d_resid"] = d_resid;
  j["n_heads"] = n_heads;
  j["d_head"] = d_head;
  j["d_mlp"] = d_mlp;
  j["n_squares"] = n_squares;
  j["d_policy_hidden"] = d_policy_hidden;
  j["d_policy"] = d_policy;
  j["d_value"] = d_value;
  j["d_value_hidden"] = d_value_hidden;
  j["activation"] = activation_name(activation);
  j["smolgen_activation"] = activation_name(smolgen_activation);
  j["policy_activation"] = activation_name(policy_activation);
  j["promotion"] = promotion;
  if (smolgen) {
    j["smolgen"] = {{"d_compress", smolgen->d_compress},
                    {"d_hidden", smolgen->d_hidden},
                    {"d_gen", smolgen->d_gen}};
  } else {
    j["smolgen"] = nullptr;
  }
  j["layout"] = json::parse(layout.to_json());
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelSpec s;
  s.n_layers = j.at("n_layers").get<int>();
  s.d_resid = j.at("d_resid").get<int>();
  s.n_heads = j.at("n_heads").get<int>();
  s.d_head = j.at("d_head").get<int>();
  s.d_mlp = j.at("d_mlp").get<int>();
  s.n_squares = j.at("n_squares").get<int>();
  s.d_policy_hidden = j.at("d_policy_hidden").get<int>();
  s.d_policy = j.at("d_policy").get<int>();
  s.d_value = j.at("d_value").get<int>();
  s.d_value_hidden = j.at("d_value_hidden").get<int>();
  s.activation = activation_from_name(j.at("activation").get<std::string>());
  s.smolgen_activation = activation_from_name(j.at("smolgen_activation").get<std::string>());
  s.policy_activation = activation_from_name(j.at("policy_activation").get<std::string>());
  s.promotion = j.at("promotion").get<bool>();
  if (j.at("smolgen").is_null()) {
    s.smolgen = std::nullopt;
  } else {
    SmolgenSpec sg;
    sg.d_compress = j.at("smolgen").at("d_compress").get<int>();
    sg.d_hidden = j.at("smolgen").at("d_hidden").get<int>();
    sg.d_gen = j.at("smolgen").at("d_gen").get<int>();
    s.smolgen = sg;
  }
  s.layout = chess::LayoutDescriptor::from_json(j.at("layout").dump());
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v < 1) fail(ErrorKind::Config, std::string("model spec: ") + name + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(d_resid, "d_resid");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(d_mlp, "d_mlp");
  positive(d_policy_hidden, "d_policy_hidden");
  positive(d_policy, "d_policy");
  positive(d_value, "d_value");
  positive(d_value_hidden, "d_value_hidden");
  if (n_squares != 64) fail(ErrorKind::Config, "model spec: n_squares must be 64");
  if (smolgen) {
    positive(smolgen->d_compress, "smolgen.d_compress");
    positive(smolgen->d_hidden, "smolgen.d_hidden");
    positive(smolgen->d_gen, "smolgen.d_gen");
  }
  if (layout.channels.empty()) fail(ErrorKind::Config, "model spec: empty input layout");
}

void ActivationSite::validate(const ModelSpec& spec, bool as_read) const {
  const auto in_range = [](int v, int lo, int hi, const char* what) {
    if (v < lo || v >= hi)
      fail(ErrorKind::Illegal, std::string("activation site: ") + what + " out of range");
  };
  switch (kind) {
    case SiteKind::Residual:
      in_range(layer, 0, spec.n_layers + (as_read ? 1 : 0), "residual stream index");
      in_range(square, 0, 64, "square");
      break;
    case SiteKind::HeadOutput:
      in_range(layer, 0, spec.n_layers, "layer");
      in_range(head, 0, spec.n_heads, "head");
      break;
    case SiteKind::AttnEntry:
      in_range(layer, 0, spec.n_layers, "layer");
      in_range(head, 0, spec.n_heads, "head");
      in_range(query, 0, 64, "query");
      in_range(key, 0, 64, "key");
      break;
  }
}

std::string ActivationSite::describe() const {
  switch (kind) {
    case SiteKind::Residual:
      return "residual[" + std::to_string(layer) + "] sq " + chess::Square(square).name();
    case SiteKind::HeadOutput:
      return "L" + std::to_string(layer + 1) + "H" + std::to_string(head + 1) + " output";
    case SiteKind::AttnEntry:
      return "L" + std::to_string(layer + 1) + "H" + std::to_string(head + 1) + " attn (" +
             chess::Square(query).name() + "<-" + chess::Square(key).name() + ")";
  }
  return "?";
}

void HookSet::validate(const ModelSpec& spec) const {
  std::set<ActivationSite> seen;
  for (const auto& w : writes) {
    w.site.validate(spec);
    if (!seen.insert(w.site).second)
      fail(ErrorKind::Illegal, "duplicate hook write at " + w.site.describe());
    size_t want = 0;
    switch (w.site.kind) {
      case SiteKind::Residual: want = static_cast<size_t>(spec.d_resid); break;
      case SiteKind::HeadOutput: want = static_cast<size_t>(64) * spec.d_head; break;
      case SiteKind::AttnEntry: want = 0; break;  // zero marker only
    }
    if (!w.value.empty() && w.value.size() != want)
      fail(ErrorKind::Shape, "hook write at " + w.site.describe() + " has wrong size");
    if (w.site.kind == SiteKind::AttnEntry && !w.value.empty())
      fail(ErrorKind::Illegal, "attention entries accept only zero writes");
  }
  for (const auto& r : reads) r.validate(spec, /*as_read=*/true);
}

float PolicyOutput::move_logit(const chess::Move& m) const {
  float v = logits.at(m.from.index(), m.to.index());
  if (m.promotion && promo)
    v += promo->at(m.to.index(), promo_index(*m.promotion));
  return v;
}

double MoveDist::prob_of(const chess::Move& m) const {
  for (size_t i = 0; i < moves.size(); ++i)
    if (moves[i] == m) return probs[i];
  return 0.0;
}

chess::Move MoveDist::argmax() const {
  if (moves.empty()) fail(ErrorKind::Illegal, "empty move distribution");
  size_t best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return moves[best];
}

MoveDist policy_distribution(const PolicyOutput& policy, const chess::Board& board) {
  MoveDist dist;
  dist.moves = board.legal_moves();
  if (dist.moves.empty())
    fail(ErrorKind::Illegal, "terminal position has no legal moves to score");
  std::vector<double> logits;
  logits.reserve(dist.moves.size());
  for (const auto& m : dist.moves) logits.push_back(policy.move_logit(m));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  dist.probs.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) dist.probs[i] = logits[i] / sum;
  return dist;
}

double log_odds(double p) {
  const double c = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(c / (1.0 - c));
}

bool log_odds_clamped(double p) { return p < 1e-9 || p > 1.0 - 1e-9; }

Model Model::load(const std::string& path) { return from_archive(Archive::load(path)); }

Model Model::from_archive(Archive archive) {
  Model m;
  m.archive_ = std::move(archive);
  const json meta = json::parse(m.archive_.metadata());
  if (meta.value("kind", std::string()) != "model")
    fail(ErrorKind::Config, "archive metadata kind is not 'model'");
  m.spec_ = ModelSpec::from_json(meta.at("arch").dump());
  m.hash_ = m.archive_.content_hash();
  m.resolve();
  return m;
}

void Model::save(const std::string& path) const { archive_.save(path); }

void Model::resolve() {
  const auto need = [&](const std::string& name, std::initializer_list<int64_t> shape) {
    const Tensor& t = archive_.get(name);
    t.expect_shape(shape, name);
    return &t;
  };
  const int64_t d = spec_.d_resid, H = spec_.n_heads, dh = spec_.d_head;

  embed_w_ = need("embed.w", {spec_.embed_width(), d});
  embed_b_ = need("embed.b", {d});
  embed_lng_ = need("embed.ln.g", {d});
  embed_lnb_ = need("embed.ln.b", {d});

  layers_.resize(spec_.n_layers);
  for (int i = 0; i < spec_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    auto& L = layers_[i];
    L.wq = need(p + "attn.wq", {d, H * dh});
    L.bq = need(p + "attn.bq", {H * dh});
    L.wk = need(p + "attn.wk", {d, H * dh});
    L.bk = need(p + "attn.bk", {H * dh});
    L.wv = need(p + "attn.wv", {d, H * dh});
    L.bv = need(p + "attn.bv", {H * dh});
    L.wo = need(p + "attn.wo", {H * dh, d});
    L.bo = need(p + "attn.bo", {d});
    L.ln1g = need(p + "ln1.g", {d});
    L.ln1b = need(p + "ln1.b", {d});
    L.ln2g = need(p + "ln2.g", {d});
    L.ln2b = need(p + "ln2.b", {d});
    L.mw1 = need(p + "mlp.w1", {d, spec_.d_mlp});
    L.mb1 = need(p + "mlp.b1", {spec_.d_mlp});
    L.mw2 = need(p + "mlp.w2", {spec_.d_mlp, d});
    L.mb2 = need(p + "mlp.b2", {d});
    if (spec_.smolgen) {
      const auto& sg = *spec_.smolgen;
      L.sg_compress = need(p + "sg.compress", {d, sg.d_compress});
      L.sg_d1w = need(p + "sg.d1w", {64 * sg.d_compress, sg.d_hidden});
      L.sg_d1b = need(p + "sg.d1b", {sg.d_hidden});
      L.sg_ln1g = need(p + "sg.ln1.g", {sg.d_hidden});
      L.sg_ln1b = need(p + "sg.ln1.b", {sg.d_hidden});
      L.sg_d2w = need(p + "sg.d2w", {sg.d_hidden, H * sg.d_gen});
      L.sg_d2b = need(p + "sg.d2b", {H * sg.d_gen});
      L.sg_ln2g = need(p + "sg.ln2.g", {H * sg.d_gen});
      L.sg_ln2b = need(p + "sg.ln2.b", {H * sg.d_gen});
    }
  }
  if (spec_.smolgen) sg_global_ = need("sg.global", {spec_.smolgen->d_gen, 64 * 64});

  pol_fc1w_ = need("policy.fc1.w", {d, spec_.d_policy_hidden});
  pol_fc1b_ = need("policy.fc1.b", {spec_.d_policy_hidden});
  pol_srcw_ = need("policy.src.w", {spec_.d_policy_hidden, spec_.d_policy});
  pol_srcb_ = need("policy.src.b", {spec_.d_policy});
  pol_tgtw_ = need("policy.tgt.w", {spec_.d_policy_hidden, spec_.d_policy});
  pol_tgtb_ = need("policy.tgt.b", {spec_.d_policy});
  pol_promo_ = spec_.promotion ? need("policy.promo", {spec_.d_policy, 4}) : nullptr;

  val_projw_ = need("value.proj.w", {d, spec_.d_value});
  val_projb_ = need("value.proj.b", {spec_.d_value});
  val_fc1w_ = need("value.fc1.w", {64 * spec_.d_value, spec_.d_value_hidden});
  val_fc1b_ = need("value.fc1.b", {spec_.d_value_hidden});
  val_fc2w_ = need("value.fc2.w", {spec_.d_value_hidden, 3});
  val_fc2b_ = need("value.fc2.b", {3});
}

ForwardResult Model::forward(const chess::InputPlanes& planes, const HookSet& hooks,
                             TraceLevel level) const {
  hooks.validate(spec_);
  if (planes.n_channels != spec_.layout.n_channels())
    fail(ErrorKind::Shape, "input has " + std::to_string(planes.n_channels) +
                               " channels, model expects " +
                               std::to_string(spec_.layout.n_channels()));

  const int L = spec_.n_layers;
  const int d = spec_.d_resid;
  const int H = spec_.n_heads;
  const int dh = spec_.d_head;
  const int S = 64;

  // Index hook writes for the forward loop.
  // residual: (stream index, square) -> value; head: (layer, head) -> value.
  std::map<std::pair<int, int>, const std::vector<float>*> res_writes;
  std::map<std::pair<int, int>, const std::vector<float>*> head_writes;
  std::vector<std::vector<std::array<int, 3>>> attn_zeros(L);  // per layer: {head,q,k}
  static const std::vector<float> kEmpty;
  for (const auto& w : hooks.writes) {
    switch (w.site.kind) {
      case SiteKind::Residual:
        res_writes[{w.site.layer, w.site.square}] = &w.value;
        break;
      case SiteKind::HeadOutput:
        head_writes[{w.site.layer, w.site.head}] = &w.value;
        break;
      case SiteKind::AttnEntry:
        attn_zeros[w.site.layer].push_back({w.site.head, w.site.query, w.site.key});
        break;
    }
  }
  std::vector<char> read_res(L + 1, 0);
  std::vector<char> read_attn(L, 0), read_head(L, 0);
  for (const auto& r : hooks.reads) {
    if (r.kind == SiteKind::Residual) read_res[r.layer] = 1;
    if (r.kind == SiteKind::AttnEntry) read_attn[r.layer] = 1;
    if (r.kind == SiteKind::HeadOutput) read_head[r.layer] = 1;
  }

  ForwardResult out;
  ForwardTrace& trace = out.trace;
  const bool full = level == TraceLevel::Full;
  trace.residual.resize(L + 1);
  if (full) {
    trace.attn.assign(L, {});
    trace.qk_scores.assign(L, {});
    trace.smolgen_scores.assign(L, {});
    trace.head_out.assign(L, {});
  } else {
    trace.attn.resize(L);
    trace.qk_scores.resize(L);
    trace.smolgen_scores.resize(L);
    trace.head_out.resize(L);
  }

  // Residual stream, [S][d].
  std::vector<float> res(static_cast<size_t>(S) * d);

  // --- Embedding ---
  {
    const int in_w = spec_.embed_width();
    std::vector<float> x(in_w);
    for (int sq = 0; sq < S; ++sq) {
      for (int c = 0; c < planes.n_channels; ++c) x[c] = planes.at(c, sq);
      const uint64_t pos = planes.positional[sq];
      for (int r = 0; r < 64; ++r)
        x[planes.n_channels + r] = (pos >> r) & 1 ? 1.0f : 0.0f;
      float* row = res.data() + static_cast<size_t>(sq) * d;
      matvec_accum(x.data(), *embed_w_, embed_b_->data.data(), row);
      apply_act(spec_.activation, row, d);
      layer_norm(row, d, *embed_lng_, *embed_lnb_);
    }
    check_finite(res.data(), res.size(), "embedding");
  }

  const auto apply_res_writes = [&](int stream) {
    for (int sq = 0; sq < S; ++sq) {
      const auto it = res_writes.find({stream, sq});
      if (it == res_writes.end()) continue;
      float* row = res.data() + static_cast<size_t>(sq) * d;
      if (it->second->empty())
        std::fill(row, row + d, 0.0f);
      else
        std::memcpy(row, it->second->data(), sizeof(float) * d);
    }
  };
  const auto record_res = [&](int stream) {
    if (!full && !read_res[stream]) return;
    Tensor t({S, d});
    std::copy(res.begin(), res.end(), t.data.begin());
    trace.residual[stream] = std::move(t);
  };

  apply_res_writes(0);
  record_res(0);

  // Scratch buffers reused across layers.
  std::vector<float> q(static_cast<size_t>(S) * H * dh), k(q.size()), v(q.size());
  std::vector<float> scores(static_cast<size_t>(H) * S * S);
  std::vector<float> qk_part, sg_part;
  std::vector<float> head_out(static_cast<size_t>(H) * S * dh);
  std::vector<float> concat(static_cast<size_t>(H) * dh), attn_out(d), mlp_h(spec_.d_mlp),
      mlp_out(d);

  for (int li = 0; li < L; ++li) {
    const auto& W = layers_[li];
    const bool rec_attn = full || read_attn[li];
    const bool rec_head = full || read_head[li];

    // Smolgen: an MLP over the whole residual state emitting per-head
    // additive pre-softmax scores.
    sg_part.assign(static_cast<size_t>(H) * S * S, 0.0f);
    if (spec_.smolgen) {
      const auto& sg = *spec_.smolgen;
      std::vector<float> compressed(static_cast<size_t>(S) * sg.d_compress);
      for (int sq = 0; sq < S; ++sq)
        matvec_accum(res.data() + static_cast<size_t>(sq) * d, *W.sg_compress, nullptr,
                     compressed.data() + static_cast<size_t>(sq) * sg.d_compress);
      std::vector<float> h1(sg.d_hidden);
      matvec_accum(compressed.data(), *W.sg_d1w, W.sg_d1b->data.data(), h1.data());
      apply_act(spec_.smolgen_activation, h1.data(), sg.d_hidden);
      layer_norm(h1.data(), sg.d_hidden, *W.sg_ln1g, *W.sg_ln1b);
      std::vector<float> h2(static_cast<size_t>(H) * sg.d_gen);
      matvec_accum(h1.data(), *W.sg_d2w, W.sg_d2b->data.data(), h2.data());
      apply_act(spec_.smolgen_activation, h2.data(), static_cast<int64_t>(h2.size()));
      layer_norm(h2.data(), static_cast<int64_t>(h2.size()), *W.sg_ln2g, *W.sg_ln2b);
      for (int h = 0; h < H; ++h)
        matvec_accum(h2.data() + static_cast<size_t>(h) * sg.d_gen, *sg_global_, nullptr,
                     sg_part.data() + static_cast<size_t>(h) * S * S);
    }

    // Q/K/V projections per square.
    for (int sq = 0; sq < S; ++sq) {
      const float* row = res.data() + static_cast<size_t>(sq) * d;
      matvec_accum(row, *W.wq, W.bq->data.data(), q.data() + static_cast<size_t>(sq) * H * dh);
      matvec_accum(row, *W.wk, W.bk->data.data(), k.data() + static_cast<size_t>(sq) * H * dh);
      matvec_accum(row, *W.wv, W.bv->data.data(), v.data() + static_cast<size_t>(sq) * H * dh);
    }

    // Pre-softmax scores = QK/sqrt(d_head) + smolgen.
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    if (rec_attn) qk_part.assign(static_cast<size_t>(H) * S * S, 0.0f);
    for (int h = 0; h < H; ++h) {
      float* sh = scores.data() + static_cast<size_t>(h) * S * S;
      const float* sgh = sg_part.data() + static_cast<size_t>(h) * S * S;
      for (int qs = 0; qs < S; ++qs) {
        const float* qrow = q.data() + (static_cast<size_t>(qs) * H + h) * dh;
        for (int ks = 0; ks < S; ++ks) {
          const float* krow = k.data() + (static_cast<size_t>(ks) * H + h) * dh;
          const float qk = dot(qrow, krow, dh) * inv_sqrt;
          if (rec_attn) qk_part[(static_cast<size_t>(h) * S + qs) * S + ks] = qk;
          sh[static_cast<size_t>(qs) * S + ks] = qk + sgh[static_cast<size_t>(qs) * S + ks];
        }
      }
    }

    // Pre-softmax masking variant of entry ablation.
    if (hooks.presoftmax_mask)
      for (const auto& [h, qs, ks] : attn_zeros[li])
        scores[(static_cast<size_t>(h) * S + qs) * S + ks] = -1e30f;

    if (rec_attn) {
      trace.qk_scores[li].resize(H);
      trace.smolgen_scores[li].resize(H);
      for (int h = 0; h < H; ++h) {
        Tensor tq({S, S}), ts({S, S});
        std::copy_n(qk_part.data() + static_cast<size_t>(h) * S * S, S * S, tq.data.begin());
        std::copy_n(sg_part.data() + static_cast<size_t>(h) * S * S, S * S, ts.data.begin());
        trace.qk_scores[li][h] = std::move(tq);
        trace.smolgen_scores[li][h] = std::move(ts);
      }
    }

    // Softmax per (head, query) row, then post-softmax entry zeroing
    // without renormalization.
    for (int h = 0; h < H; ++h)
      for (int qs = 0; qs < S; ++qs)
        softmax_row(scores.data() + (static_cast<size_t>(h) * S + qs) * S, S);
    if (!hooks.presoftmax_mask)
      for (const auto& [h, qs, ks] : attn_zeros[li])
        scores[(static_cast<size_t>(h) * S + qs) * S + ks] = 0.0f;

    if (rec_attn) {
      trace.attn[li].resize(H);
      for (int h = 0; h < H; ++h) {
        Tensor t({S, S});
        std::copy_n(scores.data() + static_cast<size_t>(h) * S * S, S * S, t.data.begin());
        trace.attn[li][h] = std::move(t);
      }
    }

    // Weighted value mixing per head.
    for (int h = 0; h < H; ++h) {
      const float* sh = scores.data() + static_cast<size_t>(h) * S * S;
      for (int qs = 0; qs < S; ++qs) {
        float* o = head_out.data() + (static_cast<size_t>(h) * S + qs) * dh;
        std::fill(o, o + dh, 0.0f);
        for (int ks = 0; ks < S; ++ks) {
          const float w = sh[static_cast<size_t>(qs) * S + ks];
          if (w == 0.0f) continue;
          const float* vrow = v.data() + (static_cast<size_t>(ks) * H + h) * dh;
          for (int c = 0; c < dh; ++c) o[c] += w * vrow[c];
        }
      }
    }

    // Head-output write hooks replace a head's full [64, d_head] block.
    for (int h = 0; h < H; ++h) {
      const auto it = head_writes.find({li, h});
      if (it == head_writes.end()) continue;
      float* base = head_out.data() + static_cast<size_t>(h) * S * dh;
      if (it->second->empty())
        std::fill(base, base + static_cast<size_t>(S) * dh, 0.0f);
      else
        std::memcpy(base, it->second->data(), sizeof(float) * S * dh);
    }

    if (rec_head) {
      trace.head_out[li].resize(H);
      for (int h = 0; h < H; ++h) {
        Tensor t({S, dh});
        std::copy_n(head_out.data() + static_cast<size_t>(h) * S * dh, static_cast<size_t>(S) * dh,
                    t.data.begin());
        trace.head_out[li][h] = std::move(t);
      }
    }

    // Output projection, residual add, post-norm; then the square-wise MLP.
    for (int sq = 0; sq < S; ++sq) {
      for (int h = 0; h < H; ++h)
        std::memcpy(concat.data() + static_cast<size_t>(h) * dh,
                    head_out.data() + (static_cast<size_t>(h) * S + sq) * dh, sizeof(float) * dh);
      matvec_accum(concat.data(), *W.wo, W.bo->data.data(), attn_out.data());
      float* row = res.data() + static_cast<size_t>(sq) * d;
      for (int c = 0; c < d; ++c) row[c] += attn_out[c];
      layer_norm(row, d, *W.ln1g, *W.ln1b);

      matvec_accum(row, *W.mw1, W.mb1->data.data(), mlp_h.data());
      apply_act(spec_.activation, mlp_h.data(), spec_.d_mlp);
      matvec_accum(mlp_h.data(), *W.mw2, W.mb2->data.data(), mlp_out.data());
      for (int c = 0; c < d; ++c) row[c] += mlp_out[c];
      layer_norm(row, d, *W.ln2g, *W.ln2b);
    }
    check_finite(res.data(), res.size(), "layer " + std::to_string(li + 1));

    const int stream = li + 1;
    if (stream < L) apply_res_writes(stream);
    record_res(stream);
  }

  // --- Policy head: shared first layer, then source and target projections.
  {
    const int dph = spec_.d_policy_hidden, dp = spec_.d_policy;
    std::vector<float> hbuf(dph);
    std::vector<float> src(static_cast<size_t>(S) * dp), tgt(src.size());
    for (int sq = 0; sq < S; ++sq) {
      matvec_accum(res.data() + static_cast<size_t>(sq) * d, *pol_fc1w_, pol_fc1b_->data.data(),
                   hbuf.data());
      apply_act(spec_.policy_activation, hbuf.data(), dph);
      matvec_accum(hbuf.data(), *pol_srcw_, pol_srcb_->data.data(),
                   src.data() + static_cast<size_t>(sq) * dp);
      matvec_accum(hbuf.data(), *pol_tgtw_, pol_tgtb_->data.data(),
                   tgt.data() + static_cast<size_t>(sq) * dp);
    }
    out.policy.logits = Tensor({S, S});
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dp));
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < S; ++t)
        out.policy.logits.at(s, t) =
            dot(src.data() + static_cast<size_t>(s) * dp, tgt.data() + static_cast<size_t>(t) * dp,
                dp) *
            inv_sqrt;
    if (pol_promo_) {
      Tensor promo({S, 4});
      for (int t = 0; t < S; ++t)
        for (int pi = 0; pi < 4; ++pi) {
          float acc = 0.0f;
          for (int c = 0; c < dp; ++c)
            acc += tgt[static_cast<size_t>(t) * dp + c] * pol_promo_->at(c, pi);
          promo.at(t, pi) = acc;
        }
      out.policy.promo = std::move(promo);
    }
    check_finite(out.policy.logits.data.data(), out.policy.logits.data.size(), "policy head");
  }

  // --- Value head: per-square projection, flatten, 2-layer MLP, WDL softmax.
  {
    std::vector<float> flat(static_cast<size_t>(S) * spec_.d_value);
    for (int sq = 0; sq < S; ++sq) {
      matvec_accum(res.data() + static_cast<size_t>(sq) * d, *val_projw_, val_projb_->data.data(),
                   flat.data() + static_cast<size_t>(sq) * spec_.d_value);
      apply_act(spec_.activation, flat.data() + static_cast<size_t>(sq) * spec_.d_value,
                spec_.d_value);
    }
    std::vector<float> h1(spec_.d_value_hidden);
    matvec_accum(flat.data(), *val_fc1w_, val_fc1b_->data.data(), h1.data());
    apply_act(spec_.activation, h1.data(), spec_.d_value_hidden);
    float logits[3];
    matvec_accum(h1.data(), *val_fc2w_, val_fc2b_->data.data(), logits);
    check_finite(logits, 3, "value head");
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
      out.value.wdl[i] = std::exp(static_cast<double>(logits[i]) - mx);
      sum += out.value.wdl[i];
    }
    for (auto& w : out.value.wdl) w /= sum;
  }

  return out;
}

MoveDist Model::move_distribution(const chess::Board& board) const {
  const chess::Board player = board.orient_to_player();
  const auto planes = chess::encode_input(player, spec_.layout);
  const auto result = forward(planes, HookSet{}, TraceLevel::None);
  MoveDist dist = policy_distribution(result.policy, player);
  // Report moves in the caller's (absolute) frame.
  for (auto& m : dist.moves) m = player.to_absolute(m);
  return dist;
}

}  // namespace ply::nn
