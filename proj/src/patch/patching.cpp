#include "patch/patching.hpp"

#include <algorithm>

#include "chess/encode.hpp"
#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"

namespace ply::patch {

namespace {

using chess::Board;
using chess::Move;
using chess::Square;
using nn::HookSet;
using nn::HookWrite;
using nn::Model;
using nn::SiteKind;
using nn::TraceLevel;

struct Frames {
  Board clean_pf;       // player frame
  Board corrupted_pf;
  Move best_pf;
  chess::InputPlanes clean_planes;
  chess::InputPlanes corrupted_planes;
};

Frames to_player_frame(const Model& model, const PatchContext& ctx) {
  if (ctx.clean.side_to_move() != ctx.corrupted.side_to_move())
    fail(ErrorKind::Illegal, "clean and corrupted boards have different sides to move");
  Frames f;
  f.clean_pf = ctx.clean.orient_to_player();
  f.corrupted_pf = ctx.corrupted.orient_to_player();
  f.best_pf = f.clean_pf.to_frame(ctx.best);
  const auto legal = f.clean_pf.legal_moves();
  if (std::find(legal.begin(), legal.end(), f.best_pf) == legal.end())
    fail(ErrorKind::Illegal, "ground-truth move " + ctx.best.uci() + " is illegal in the clean state");
  f.clean_planes = chess::encode_input(f.clean_pf, model.spec().layout);
  f.corrupted_planes = chess::encode_input(f.corrupted_pf, model.spec().layout);
  return f;
}

double best_prob(const Model& model, const chess::InputPlanes& planes, const Board& board_pf,
                 const Move& best_pf, const HookSet& hooks) {
  const auto result = model.forward(planes, hooks, TraceLevel::None);
  return nn::policy_distribution(result.policy, board_pf).prob_of(best_pf);
}

EffectRecord make_record(const std::string& id, ActivationSite site, double clean_p,
                         double patched_p) {
  EffectRecord r;
  r.puzzle_id = id;
  r.site = site;
  r.clean_prob = clean_p;
  r.patched_prob = patched_p;
  r.delta = nn::log_odds(clean_p) - nn::log_odds(patched_p);
  r.clamped = nn::log_odds_clamped(clean_p) || nn::log_odds_clamped(patched_p);
  return r;
}

}  // namespace

ResidualSweep residual_sweep(const Model& model, const PatchContext& ctx) {
  const auto f = to_player_frame(model, ctx);
  const int L = model.spec().n_layers;
  const int d = model.spec().d_resid;

  const auto corr = model.forward(f.corrupted_planes, HookSet{}, TraceLevel::Full);
  const double clean_p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, HookSet{});

  ResidualSweep sweep;
  sweep.clean_prob = clean_p;
  sweep.grid.resize(L);
  sweep.other_max.assign(L, 0.0);

  const auto classify = [&](int sq_pf) {
    const Square abs = f.clean_pf.to_absolute(Square(sq_pf));
    for (const auto c : ctx.corrupted_squares)
      if (abs == c) return SquareClass::Corrupted;
    if (ctx.t1 && abs == *ctx.t1) return SquareClass::T1;
    if (ctx.t3 && abs == *ctx.t3) return SquareClass::T3;
    return SquareClass::Other;
  };
  for (int sq = 0; sq < 64; ++sq) sweep.square_class[sq] = classify(sq);

  for (int stream = 0; stream < L; ++stream) {
    sweep.grid[stream].reserve(64);
    bool any_other = false;
    double other_max = 0.0;
    for (int sq = 0; sq < 64; ++sq) {
      HookSet hooks;
      const float* row = corr.trace.residual[stream].row(sq);
      hooks.writes.push_back(
          {ActivationSite::residual(stream, sq), std::vector<float>(row, row + d)});
      const double p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, hooks);
      auto rec = make_record(ctx.puzzle_id, hooks.writes[0].site, clean_p, p);
      if (sweep.square_class[sq] == SquareClass::Other) {
        if (!any_other || rec.delta > other_max) other_max = rec.delta;
        any_other = true;
      }
      sweep.grid[stream].push_back(std::move(rec));
    }
    sweep.other_max[stream] = other_max;
  }
  return sweep;
}

HeadSweep head_sweep(const Model& model, const PatchContext& ctx) {
  const auto f = to_player_frame(model, ctx);
  const int L = model.spec().n_layers;
  const int H = model.spec().n_heads;

  const auto corr = model.forward(f.corrupted_planes, HookSet{}, TraceLevel::Full);
  const double clean_p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, HookSet{});

  HeadSweep sweep;
  sweep.clean_prob = clean_p;
  sweep.grid.resize(L);
  for (int layer = 0; layer < L; ++layer) {
    sweep.grid[layer].reserve(H);
    for (int head = 0; head < H; ++head) {
      HookSet hooks;
      const auto& t = corr.trace.head_out[layer][head];
      hooks.writes.push_back({ActivationSite::head_output(layer, head),
                              std::vector<float>(t.data.begin(), t.data.end())});
      const double p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, hooks);
      sweep.grid[layer].push_back(make_record(ctx.puzzle_id, hooks.writes[0].site, clean_p, p));
    }
  }
  return sweep;
}

EffectRecord ablate_attention_entries(const Model& model, const Board& board,
                                      const std::vector<ActivationSite>& entries,
                                      const Move& best, bool presoftmax) {
  const Board pf = board.orient_to_player();
  const Move best_pf = pf.to_frame(best);
  const auto planes = chess::encode_input(pf, model.spec().layout);
  const double clean_p = best_prob(model, planes, pf, best_pf, HookSet{});
  HookSet hooks;
  hooks.presoftmax_mask = presoftmax;
  for (const auto& e : entries) {
    if (e.kind != SiteKind::AttnEntry)
      fail(ErrorKind::Illegal, "ablate_attention_entries accepts only attention-entry sites");
    hooks.writes.push_back({e, {}});
  }
  const double p = best_prob(model, planes, pf, best_pf, hooks);
  ActivationSite label = entries.empty() ? ActivationSite{} : entries.front();
  return make_record("", label, clean_p, p);
}

EntryAblation entry_ablation(const Model& model, const PatchContext& ctx, int layer, int head,
                             bool transpose_qk, bool presoftmax) {
  if (!ctx.t1 || !ctx.t3)
    fail(ErrorKind::Illegal, "entry ablation requires t1 and t3");
  EntryAblation out;
  if (*ctx.t1 == *ctx.t3) {
    out.skipped = true;
    return out;
  }
  const auto f = to_player_frame(model, ctx);
  int q = f.clean_pf.to_frame(*ctx.t1).index();
  int k = f.clean_pf.to_frame(*ctx.t3).index();
  if (transpose_qk) std::swap(q, k);

  // Strict-max statistic over the head's combined pre-softmax scores.
  HookSet read_hooks;
  read_hooks.reads.push_back(ActivationSite::attn_entry(layer, head, q, k));
  const auto clean = model.forward(f.clean_planes, read_hooks, TraceLevel::None);
  const double clean_p =
      nn::policy_distribution(clean.policy, f.clean_pf).prob_of(f.best_pf);
  const Move clean_top = nn::policy_distribution(clean.policy, f.clean_pf).argmax();
  {
    const auto& qk = clean.trace.qk_scores[layer][head];
    const auto& sg = clean.trace.smolgen_scores[layer][head];
    const double target = static_cast<double>(qk.at(q, k)) + sg.at(q, k);
    bool strict = true;
    for (int qq = 0; qq < 64 && strict; ++qq)
      for (int kk = 0; kk < 64; ++kk) {
        if (qq == q && kk == k) continue;
        if (static_cast<double>(qk.at(qq, kk)) + sg.at(qq, kk) >= target) {
          strict = false;
          break;
        }
      }
    out.entry_is_global_max = strict;
  }

  const auto run = [&](const std::vector<ActivationSite>& entries, double& delta,
                       bool& changes_top) {
    HookSet hooks;
    hooks.presoftmax_mask = presoftmax;
    for (const auto& e : entries) hooks.writes.push_back({e, {}});
    const auto res = model.forward(f.clean_planes, hooks, TraceLevel::None);
    const auto dist = nn::policy_distribution(res.policy, f.clean_pf);
    delta = nn::log_odds(clean_p) - nn::log_odds(dist.prob_of(f.best_pf));
    changes_top = !(dist.argmax() == clean_top);
  };

  run({ActivationSite::attn_entry(layer, head, q, k)}, out.single_delta,
      out.single_changes_top_move);
  std::vector<ActivationSite> complement;
  complement.reserve(64 * 64 - 1);
  for (int qq = 0; qq < 64; ++qq)
    for (int kk = 0; kk < 64; ++kk)
      if (!(qq == q && kk == k)) complement.push_back(ActivationSite::attn_entry(layer, head, qq, kk));
  run(complement, out.complement_delta, out.complement_changes_top_move);
  return out;
}

PieceHeadAblation piece_head_ablation(const Model& model, const PatchContext& ctx,
                                      Square s3_abs, Square t3_abs, chess::PieceKind move_kind,
                                      const std::vector<HeadTag>& tags, uint64_t seed,
                                      bool presoftmax) {
  PieceHeadAblation out;
  out.move_kind = move_kind;
  const auto f = to_player_frame(model, ctx);
  const int s3 = f.clean_pf.to_frame(s3_abs).index();
  const int t3 = f.clean_pf.to_frame(t3_abs).index();

  std::vector<const HeadTag*> matched, other;
  for (const auto& t : tags)
    (t.kind == move_kind ? matched : other).push_back(&t);
  if (matched.empty())
    fail(ErrorKind::Illegal, "no tagged heads for piece kind '" +
                                 std::string(1, chess::piece_char(move_kind)) + "'");
  out.matched_heads = static_cast<int>(matched.size());
  out.other_heads = static_cast<int>(other.size());

  const double clean_p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, HookSet{});

  // Zero all entries with the given key in the given heads, exempting the
  // (query = s3, key) move-execution entry.
  const auto run = [&](const std::vector<const HeadTag*>& heads, int key) {
    HookSet hooks;
    hooks.presoftmax_mask = presoftmax;
    for (const auto* h : heads)
      for (int q = 0; q < 64; ++q) {
        if (q == s3) continue;
        hooks.writes.push_back({ActivationSite::attn_entry(h->layer, h->head, q, key), {}});
      }
    const double p = best_prob(model, f.clean_planes, f.clean_pf, f.best_pf, hooks);
    return nn::log_odds(clean_p) - nn::log_odds(p);
  };

  out.matched_delta = run(matched, t3);
  if (!other.empty()) out.other_type_delta = run(other, t3);

  // Random baseline key: uniform over non-special squares, seeded by puzzle id.
  std::vector<char> special(64, 0);
  for (const auto sq : ctx.special_squares) special[f.clean_pf.to_frame(sq).index()] = 1;
  for (const auto sq : ctx.corrupted_squares) special[f.clean_pf.to_frame(sq).index()] = 1;
  std::vector<int> pool;
  for (int sq = 0; sq < 64; ++sq)
    if (!special[sq]) pool.push_back(sq);
  if (pool.empty()) fail(ErrorKind::Internal, "no non-special squares for the random baseline");
  Rng rng(seed ^ fnv1a64(ctx.puzzle_id));
  out.random_square_delta = run(matched, pool[rng.uniform_int(static_cast<int>(pool.size()))]);
  out.eligible = true;
  return out;
}

}  // namespace ply::patch
