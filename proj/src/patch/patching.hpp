#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "nn/model.hpp"

namespace ply::patch {

using nn::ActivationSite;

// Effect of one intervention on the ground-truth move's probability:
// delta = log_odds(clean) - log_odds(patched), natural log.
struct EffectRecord {
  std::string puzzle_id;
  ActivationSite site;
  double delta = 0.0;
  double clean_prob = 0.0;
  double patched_prob = 0.0;
  bool clamped = false;  // a probability hit the log-odds clamp
};

enum class SquareClass : uint8_t { Corrupted, T1, T3, Other };

// Everything an intervention needs about one puzzle, in the absolute frame
// of the clean state (the experiments map into the player frame internally).
struct PatchContext {
  std::string puzzle_id;
  chess::Board clean;
  chess::Board corrupted;
  chess::Move best;  // ground-truth first move
  std::optional<chess::Square> t1, t3;
  // Squares touched by the corruption mutation (two for a piece move).
  std::vector<chess::Square> corrupted_squares;
  // Squares excluded from random baselines: {s1,t1,s2,t2,s3,t3} + corrupted.
  std::vector<chess::Square> special_squares;
};

struct ResidualSweep {
  std::vector<std::vector<EffectRecord>> grid;  // [stream 0..L-1][square]
  std::array<SquareClass, 64> square_class{};   // player frame
  std::vector<double> other_max;                // per stream: max delta over Other
  double clean_prob = 0.0;
};

ResidualSweep residual_sweep(const nn::Model& model, const PatchContext& ctx);

struct HeadSweep {
  std::vector<std::vector<EffectRecord>> grid;  // [layer][head]
  double clean_prob = 0.0;
};

HeadSweep head_sweep(const nn::Model& model, const PatchContext& ctx);

// Single forward with the listed post-softmax entries zeroed (player-frame
// squares), measured against the clean forward on `board`.
EffectRecord ablate_attention_entries(const nn::Model& model, const chess::Board& board,
                                      const std::vector<ActivationSite>& entries,
                                      const chess::Move& best, bool presoftmax = false);

struct EntryAblation {
  bool skipped = false;  // t1 == t3 is degenerate
  double single_delta = 0.0;
  double complement_delta = 0.0;
  bool entry_is_global_max = false;  // strict max of qk+smolgen over 64x64
  bool single_changes_top_move = false;
  bool complement_changes_top_move = false;
};

// The single-entry experiment at (query = t1, key = t3) of one head;
// transpose_qk swaps the query/key roles, presoftmax selects the
// renormalizing mask variant.
EntryAblation entry_ablation(const nn::Model& model, const PatchContext& ctx, int layer,
                             int head, bool transpose_qk = false, bool presoftmax = false);

struct HeadTag {
  int layer = 0;  // 0-based
  int head = 0;
  chess::PieceKind kind = chess::PieceKind::Knight;
  double score = 0.0;
};

struct PieceHeadAblation {
  bool eligible = false;
  chess::PieceKind move_kind = chess::PieceKind::Knight;  // kind moving on move 3
  double matched_delta = 0.0;
  double other_type_delta = 0.0;
  double random_square_delta = 0.0;
  int matched_heads = 0;
  int other_heads = 0;
};

// Zero all attention entries with key = t3 (except query = s3) in heads
// tagged with move 3's piece kind; baselines use the other kinds' heads and
// a seeded random non-special key square. s3/t3 come in the absolute frame.
PieceHeadAblation piece_head_ablation(const nn::Model& model, const PatchContext& ctx,
                                      chess::Square s3_abs, chess::Square t3_abs,
                                      chess::PieceKind move_kind,
                                      const std::vector<HeadTag>& tags, uint64_t seed,
                                      bool presoftmax = false);

}  // namespace ply::patch
