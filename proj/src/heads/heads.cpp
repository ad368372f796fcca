#include "heads/heads.hpp"

#include <algorithm>
#include <bit>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"

namespace ply::heads {

namespace {

using chess::Board;
using chess::PieceKind;
using chess::Square;

constexpr size_t kMinBoards = 32;

int seeded_query(uint64_t seed, const Board& pf) {
  Rng rng(seed ^ fnv1a64(pf.fen()));
  return rng.uniform_int(64);
}

}  // namespace

std::vector<std::vector<std::array<double, 6>>> piece_head_scores(
    const nn::Model& model, const std::vector<Board>& boards, uint64_t seed) {
  if (boards.size() < kMinBoards)
    fail(ErrorKind::Config, "piece-head scoring needs at least " + std::to_string(kMinBoards) +
                                " boards, got " + std::to_string(boards.size()));
  const auto& spec = model.spec();
  std::vector<std::vector<std::array<double, 6>>> sums(
      static_cast<size_t>(spec.n_layers),
      std::vector<std::array<double, 6>>(static_cast<size_t>(spec.n_heads)));

  for (const Board& b : boards) {
    const Board pf = b.orient_to_player();
    const int q = seeded_query(seed, pf);
    std::array<uint64_t, 6> masks;
    for (int k = 0; k < 6; ++k)
      masks[static_cast<size_t>(k)] = reachability_mask(Square(q), static_cast<PieceKind>(k));

    const auto planes = chess::encode_input(pf, spec.layout);
    const auto fwd = model.forward(planes, {}, nn::TraceLevel::Full);
    for (int li = 0; li < spec.n_layers; ++li)
      for (int h = 0; h < spec.n_heads; ++h) {
        const float* row = fwd.trace.attn[static_cast<size_t>(li)][static_cast<size_t>(h)].row(q);
        for (int k = 0; k < 6; ++k) {
          double mass = 0.0;
          for (uint64_t m = masks[static_cast<size_t>(k)]; m; m &= m - 1)
            mass += row[std::countr_zero(m)];
          sums[static_cast<size_t>(li)][static_cast<size_t>(h)][static_cast<size_t>(k)] += mass;
        }
      }
  }
  const double inv = 1.0 / static_cast<double>(boards.size());
  for (auto& layer : sums)
    for (auto& head : layer)
      for (double& v : head) v *= inv;
  return sums;
}

double piece_head_score(const nn::Model& model, const std::vector<Board>& boards, int layer,
                        int head, PieceKind kind, uint64_t seed) {
  const auto& spec = model.spec();
  if (layer < 0 || layer >= spec.n_layers || head < 0 || head >= spec.n_heads)
    fail(ErrorKind::Config, "piece-head score: layer/head out of range");
  const auto scores = piece_head_scores(model, boards, seed);
  return scores[static_cast<size_t>(layer)][static_cast<size_t>(head)]
               [static_cast<size_t>(kind)];
}

std::vector<patch::HeadTag> tags_from_scores(
    const std::vector<std::vector<std::array<double, 6>>>& scores, double threshold) {
  const std::array<PieceKind, 3> kinds = {PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook};
  std::vector<patch::HeadTag> tags;
  for (size_t li = 0; li < scores.size(); ++li)
    for (size_t h = 0; h < scores[li].size(); ++h) {
      PieceKind best = PieceKind::Knight;
      double best_score = -1.0;
      for (const PieceKind k : kinds) {
        const double s = scores[li][h][static_cast<size_t>(k)];
        if (s > best_score) {
          best = k;
          best_score = s;
        }
      }
      if (best_score > threshold)
        tags.push_back({static_cast<int>(li), static_cast<int>(h), best, best_score});
    }
  return tags;
}

std::vector<patch::HeadTag> detect_piece_heads(const nn::Model& model,
                                               const std::vector<Board>& boards,
                                               double threshold, uint64_t seed) {
  return tags_from_scores(piece_head_scores(model, boards, seed), threshold);
}

double max_entry_statistic(const nn::Model& model,
                           const std::vector<patch::PatchContext>& contexts, int layer, int head,
                           bool transpose_qk) {
  const auto& spec = model.spec();
  if (layer < 0 || layer >= spec.n_layers || head < 0 || head >= spec.n_heads)
    fail(ErrorKind::Config, "max-entry statistic: layer/head out of range");
  if (contexts.empty()) fail(ErrorKind::Config, "max-entry statistic needs a non-empty dataset");

  nn::HookSet hooks;
  hooks.reads.push_back(nn::ActivationSite::attn_entry(layer, head, 0, 0));

  int hits = 0;
  for (const auto& ctx : contexts) {
    if (!ctx.t1 || !ctx.t3)
      fail(ErrorKind::Config, "puzzle '" + ctx.puzzle_id + "' lacks t1/t3 for the max-entry statistic");
    const Board pf = ctx.clean.orient_to_player();
    int q = pf.to_frame(*ctx.t1).index();
    int k = pf.to_frame(*ctx.t3).index();
    if (transpose_qk) std::swap(q, k);

    const auto planes = chess::encode_input(pf, spec.layout);
    const auto fwd = model.forward(planes, hooks, nn::TraceLevel::None);
    const auto& qk = fwd.trace.qk_scores[static_cast<size_t>(layer)][static_cast<size_t>(head)];
    const auto& sg =
        fwd.trace.smolgen_scores[static_cast<size_t>(layer)][static_cast<size_t>(head)];

    const double target = static_cast<double>(qk.at(q, k)) + static_cast<double>(sg.at(q, k));
    bool strict_max = true;
    for (int i = 0; i < 64 && strict_max; ++i)
      for (int j = 0; j < 64; ++j) {
        if (i == q && j == k) continue;
        if (static_cast<double>(qk.at(i, j)) + static_cast<double>(sg.at(i, j)) >= target) {
          strict_max = false;
          break;
        }
      }
    if (strict_max) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(contexts.size());
}

}  // namespace ply::heads
