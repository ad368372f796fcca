#include "nn/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <json.hpp>

#include "chess/encode.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"

namespace ply::nn {

namespace {

// Residual channel assignments of the plant.
constexpr int kSig = 0;   // carrier pawn presence
constexpr int kDec = 1;   // decision value at the readout square
constexpr int kTb1 = 2;   // target tiebreak
constexpr int kTb2 = 3;   // source tiebreak
constexpr int kBalP = 4;  // ballast +
constexpr int kBalN = 5;  // ballast -

constexpr float kBallast = 8.0f;
constexpr float kSigGain = 4.0f;
constexpr float kValueGain = 4.0f;
constexpr float kOutGain = 4.0f;
constexpr float kDecisionWeight = 2.0f;
constexpr float kBigScore = 30.0f;   // (readout <- carrier) attention score
constexpr float kMedScore = 25.0f;   // (any <- sink) attention score
constexpr float kKnightScore = 12.0f;
constexpr float kLnGain = 2.83f;     // ~sqrt(2*ballast^2/d), keeps LN scale ~1

Tensor zeros(std::initializer_list<int64_t> shape) { return Tensor(shape); }

}  // namespace

ModelSpec toy_spec() {
  ModelSpec s;
  s.n_layers = 2;
  s.d_resid = 16;
  s.n_heads = 4;
  s.d_head = 4;
  s.d_mlp = 8;
  s.d_policy_hidden = 16;
  s.d_policy = 2;
  s.d_value = 4;
  s.d_value_hidden = 8;
  s.smolgen = SmolgenSpec{2, 4, 2};
  s.activation = Activation::Identity;
  s.smolgen_activation = Activation::Identity;
  s.policy_activation = Activation::Identity;
  s.promotion = false;
  s.layout = chess::canonical_layout();
  return s;
}

static Model build_attempt(const ModelSpec& spec, PlantDescriptor& plant, uint64_t seed) {
  spec.validate();
  const int L = spec.n_layers, d = spec.d_resid, H = spec.n_heads, dh = spec.d_head;
  if (d < 6 || dh < 1 || !spec.smolgen || spec.smolgen->d_gen < 2 ||
      spec.d_policy != 2 || spec.d_policy_hidden != d ||
      spec.activation != Activation::Identity ||
      spec.smolgen_activation != Activation::Identity ||
      spec.policy_activation != Activation::Identity || spec.promotion)
    fail(ErrorKind::Config, "spec too small or too shaped to realize the plant");
  if (plant.layer >= L || plant.head >= H || plant.knight_layer >= L || plant.knight_head >= H)
    fail(ErrorKind::Config, "plant coordinates outside the model spec");
  if (plant.layer == plant.knight_layer && plant.head == plant.knight_head)
    fail(ErrorKind::Config, "plant and knight head coincide");

  // The channel layout places the player-pawn plane first; the plant reads it.
  if (spec.layout.channels.empty() ||
      spec.layout.channels[0].kind != chess::ChannelKind::PlayerPiece ||
      spec.layout.channels[0].param != static_cast<uint8_t>(chess::PieceKind::Pawn))
    fail(ErrorKind::Config, "plant requires the player-pawn plane as channel 0");
  int ones_channel = -1;
  for (size_t i = 0; i < spec.layout.channels.size(); ++i)
    if (spec.layout.channels[i].kind == chess::ChannelKind::Ones)
      ones_channel = static_cast<int>(i);
  if (ones_channel < 0) fail(ErrorKind::Config, "plant requires a constant-ones channel");

  const int n_ch = spec.layout.n_channels();
  const int in_w = spec.embed_width();
  const int dg = spec.smolgen->d_gen;

  Archive a;

  // Embedding: signal from the pawn plane, ballast from the ones channel,
  // seeded per-square tiebreaks from the positional bits.
  {
    Tensor w({in_w, d});
    w.at(0, kSig) = kSigGain;
    w.at(ones_channel, kBalP) = kBallast;
    w.at(ones_channel, kBalN) = -kBallast;
    Rng rng(seed);
    for (int r = 0; r < 64; ++r) {
      w.at(n_ch + r, kTb1) = static_cast<float>(rng.gaussian() * 0.1);
      w.at(n_ch + r, kTb2) = static_cast<float>(rng.gaussian() * 0.1);
    }
    a.put("embed.w", std::move(w));
    a.put("embed.b", zeros({d}));
    Tensor g({d});
    std::fill(g.data.begin(), g.data.end(), kLnGain);
    a.put("embed.ln.g", std::move(g));
    a.put("embed.ln.b", zeros({d}));
  }

  for (int i = 0; i < L; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    a.put(p + "attn.wq", zeros({d, H * dh}));
    a.put(p + "attn.bq", zeros({H * dh}));
    a.put(p + "attn.wk", zeros({d, H * dh}));
    a.put(p + "attn.bk", zeros({H * dh}));
    Tensor wv({d, H * dh});
    if (i == plant.layer) wv.at(kSig, plant.head * dh) = kValueGain;
    a.put(p + "attn.wv", std::move(wv));
    a.put(p + "attn.bv", zeros({H * dh}));
    Tensor wo({H * dh, d});
    if (i == plant.layer) wo.at(plant.head * dh, kDec) = kOutGain;
    a.put(p + "attn.wo", std::move(wo));
    a.put(p + "attn.bo", zeros({d}));
    for (const char* ln : {"ln1", "ln2"}) {
      Tensor g({d});
      std::fill(g.data.begin(), g.data.end(), kLnGain);
      a.put(p + ln + std::string(".g"), std::move(g));
      a.put(p + ln + std::string(".b"), zeros({d}));
    }
    a.put(p + "mlp.w1", zeros({d, spec.d_mlp}));
    a.put(p + "mlp.b1", zeros({spec.d_mlp}));
    a.put(p + "mlp.w2", zeros({spec.d_mlp, d}));
    a.put(p + "mlp.b2", zeros({d}));

    // Smolgen collapses to a constant: zero weights make both LayerNorm
    // inputs constant vectors, so each emits exactly its beta. ln2's beta
    // one-hot selects a row of the global score table per head.
    const auto& sg = *spec.smolgen;
    a.put(p + "sg.compress", zeros({d, sg.d_compress}));
    a.put(p + "sg.d1w", zeros({64 * sg.d_compress, sg.d_hidden}));
    a.put(p + "sg.d1b", zeros({sg.d_hidden}));
    a.put(p + "sg.ln1.g", zeros({sg.d_hidden}));
    a.put(p + "sg.ln1.b", zeros({sg.d_hidden}));
    a.put(p + "sg.d2w", zeros({sg.d_hidden, H * dg}));
    a.put(p + "sg.d2b", zeros({H * dg}));
    a.put(p + "sg.ln2.g", zeros({H * dg}));
    Tensor beta({H * dg});
    if (i == plant.layer) beta.at(plant.head * dg + 0) = 1.0f;
    if (i == plant.knight_layer) beta.at(plant.knight_head * dg + 1) = 1.0f;
    a.put(p + "sg.ln2.b", std::move(beta));
  }

  // Global score table: row 0 is the copy pattern, row 1 the knight mask.
  {
    Tensor g({dg, 64 * 64});
    for (int q = 0; q < 64; ++q) g.at(0, q * 64 + plant.sink.index()) = kMedScore;
    g.at(0, plant.readout.index() * 64 + plant.carrier.index()) = kBigScore;
    for (int q = 0; q < 64; ++q) {
      uint64_t mask = chess::knight_attacks(chess::Square(q));
      while (mask) {
        g.at(1, q * 64 + std::countr_zero(mask)) = kKnightScore;
        mask &= mask - 1;
      }
    }
    a.put("sg.global", std::move(g));
  }

  // Policy: identity first layer; source reads tb2, target reads the
  // decision channel with tb1 as tiebreak.
  {
    Tensor fc1({d, d});
    for (int i = 0; i < d; ++i) fc1.at(i, i) = 1.0f;
    a.put("policy.fc1.w", std::move(fc1));
    a.put("policy.fc1.b", zeros({d}));
    Tensor srcw({d, 2});
    srcw.at(kTb2, 1) = 1.0f;
    a.put("policy.src.w", std::move(srcw));
    Tensor srcb({2});
    srcb.at(0) = 1.0f;
    a.put("policy.src.b", std::move(srcb));
    Tensor tgtw({d, 2});
    tgtw.at(kDec, 0) = kDecisionWeight;
    tgtw.at(kTb1, 0) = 1.0f;
    a.put("policy.tgt.w", std::move(tgtw));
    Tensor tgtb({2});
    tgtb.at(1) = 1.0f;
    a.put("policy.tgt.b", std::move(tgtb));
  }

  a.put("value.proj.w", zeros({d, spec.d_value}));
  a.put("value.proj.b", zeros({spec.d_value}));
  a.put("value.fc1.w", zeros({64 * spec.d_value, spec.d_value_hidden}));
  a.put("value.fc1.b", zeros({spec.d_value_hidden}));
  a.put("value.fc2.w", zeros({spec.d_value_hidden, 3}));
  a.put("value.fc2.b", zeros({3}));

  nlohmann::json meta;
  meta["kind"] = "model";
  meta["arch"] = nlohmann::json::parse(spec.to_json());
  meta["plant"] = {{"carrier", plant.carrier.name()},
                   {"readout", plant.readout.name()},
                   {"sink", plant.sink.name()},
                   {"layer", plant.layer},
                   {"head", plant.head},
                   {"knight_layer", plant.knight_layer},
                   {"knight_head", plant.knight_head},
                   {"clean_fen", plant.clean_fen}};
  a.metadata() = meta.dump();

  Model model = Model::from_archive(std::move(a));

  // Verify the plant end to end: with the carrier pawn the top move targets
  // the readout square; without it the top move changes.
  chess::Board clean = chess::Board::from_fen(plant.clean_fen);
  const auto at_carrier = clean.piece_at(plant.carrier);
  if (!at_carrier || at_carrier->first != clean.side_to_move() ||
      at_carrier->second != chess::PieceKind::Pawn)
    fail(ErrorKind::Config, "plant clean board must have a player pawn on the carrier square");
  if (clean.piece_at(plant.sink))
    fail(ErrorKind::Config, "plant sink square must be empty");
  chess::Board corrupted = clean;
  corrupted.clear_square(plant.carrier);
  corrupted.validate();

  const auto clean_dist = model.move_distribution(clean);
  const auto corr_dist = model.move_distribution(corrupted);
  plant.best_move = clean_dist.argmax();
  plant.fallback_move = corr_dist.argmax();
  plant.corrupted_fen = corrupted.fen();
  if (plant.best_move.to != plant.readout)
    fail(ErrorKind::Internal, "plant verification: top move does not target the readout square");
  if (plant.best_move == plant.fallback_move)
    fail(ErrorKind::Internal, "plant verification: removing the signal does not change the top move");
  if (clean_dist.prob_of(plant.best_move) < 0.9 || corr_dist.prob_of(plant.best_move) > 0.1)
    fail(ErrorKind::Internal, "plant verification: signal effect on the top move is too weak");

  // The plant also promises a clean single-entry ablation story: zeroing the
  // (readout <- carrier) attention weight flips the top move, zeroing every
  // other entry of that head leaves it intact. Layer-norm recentring leaks a
  // small uniform value through the sink rows, and for some tiebreak draws
  // that leak alone can decide the fallback ordering; verify both arms here
  // so such draws get redrawn.
  {
    const chess::Board player = clean.orient_to_player();
    const auto planes = chess::encode_input(player, spec.layout);
    const auto dist_with = [&](HookSet hooks) {
      const auto result = model.forward(planes, hooks, TraceLevel::None);
      MoveDist d = policy_distribution(result.policy, player);
      for (auto& m : d.moves) m = player.to_absolute(m);
      return d;
    };
    HookSet single, complement;
    single.writes.push_back(
        {ActivationSite::attn_entry(plant.layer, plant.head, plant.readout.index(),
                                    plant.carrier.index()),
         {}});
    for (int q = 0; q < 64; ++q)
      for (int k = 0; k < 64; ++k) {
        if (q == plant.readout.index() && k == plant.carrier.index()) continue;
        complement.writes.push_back(
            {ActivationSite::attn_entry(plant.layer, plant.head, q, k), {}});
      }
    const auto single_dist = dist_with(std::move(single));
    const auto comp_dist = dist_with(std::move(complement));
    const double clean_lo = log_odds(clean_dist.prob_of(plant.best_move));
    const double single_delta = clean_lo - log_odds(single_dist.prob_of(plant.best_move));
    const double comp_delta = clean_lo - log_odds(comp_dist.prob_of(plant.best_move));
    if (single_dist.argmax() == plant.best_move || single_delta <= 0.5)
      fail(ErrorKind::Internal,
           "plant verification: single-entry ablation does not flip the top move");
    if (comp_dist.argmax() != plant.best_move || std::abs(comp_delta) >= 0.25 * single_delta)
      fail(ErrorKind::Internal,
           "plant verification: complement ablation disturbs the top move");
  }
  return model;
}

Model build_synthetic_model(const ModelSpec& spec, PlantDescriptor& plant, uint64_t seed) {
  // The tiebreak channels are random draws, and for a few seeds the fallback
  // argmax collides with the planted best move. Verification failures are
  // ErrorKind::Internal; redraw deterministically until the plant verifies.
  std::string last_error;
  for (uint64_t attempt = 0; attempt < 16; ++attempt) {
    try {
      return build_attempt(spec, plant, seed + attempt * 0x9e3779b97f4a7c15ull);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Internal) throw;
      last_error = e.what();
    }
  }
  fail(ErrorKind::Internal, last_error + " (after 16 tiebreak redraws)");
}

Model random_init_like(const Model& model, uint64_t seed) {
  Archive a;
  Rng rng(seed);
  for (const auto& name : model.archive().names()) {
    Tensor t(model.archive().get(name).shape);
    for (auto& v : t.data) v = static_cast<float>(rng.gaussian() * 0.02);
    a.put(name, std::move(t));
  }
  a.metadata() = model.archive().metadata();
  return Model::from_archive(std::move(a));
}

std::vector<PlantedResidualSample> make_planted_residuals(int count, int d, uint64_t seed) {
  if (d < 12) fail(ErrorKind::Config, "planted residuals need d >= 12");
  const int c = d / 4;  // code width; blocks at 0, c, 2c
  Rng rng(seed);
  std::vector<PlantedResidualSample> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    PlantedResidualSample s;
    s.residuals = Tensor({64, d});
    for (auto& v : s.residuals.data) v = static_cast<float>(rng.gaussian() * 0.3);
    s.t1 = rng.uniform_int(64);
    do s.t3 = rng.uniform_int(64);
    while (s.t3 == s.t1);
    do s.s3 = rng.uniform_int(64);
    while (s.s3 == s.t1 || s.s3 == s.t3);
    // Random directions with fixed norm: a gaussian draw occasionally lands
    // near zero, which would make the sample genuinely ambiguous under noise.
    auto draw_code = [&](std::vector<float>& code) {
      double ss = 0.0;
      for (auto& v : code) {
        v = static_cast<float>(rng.gaussian());
        ss += static_cast<double>(v) * v;
      }
      const double scale = std::sqrt(c / std::max(ss, 1e-12));
      for (auto& v : code) v = static_cast<float>(v * scale);
    };
    std::vector<float> code_a(c), code_b(c);
    draw_code(code_a);
    draw_code(code_b);
    // t1 announces code A; t3 echoes A and announces B; s3 echoes B.
    for (int i = 0; i < c; ++i) {
      s.residuals.at(s.t1, i) += 2.0f * code_a[i];
      s.residuals.at(s.t3, c + i) += 2.0f * code_a[i];
      s.residuals.at(s.t3, i) += 2.0f * code_b[i];
      s.residuals.at(s.s3, 2 * c + i) += 2.0f * code_b[i];
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ply::nn
