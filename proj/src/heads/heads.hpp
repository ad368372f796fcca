#pragma once

#include <array>
#include <vector>

#include "chess/board.hpp"
#include "nn/model.hpp"
#include "patch/patching.hpp"

namespace ply::heads {

// Mean post-softmax attention mass on keys one `kind`-move away from a
// seeded query square, averaged over boards. The query square is derived
// from (seed, board placement), so the score is invariant to sample order.
double piece_head_score(const nn::Model& model, const std::vector<chess::Board>& boards,
                        int layer, int head, chess::PieceKind kind, uint64_t seed);

// Every head's score for every piece kind in one pass over the sample:
// indexed [layer][head][piece kind].
std::vector<std::vector<std::array<double, 6>>> piece_head_scores(
    const nn::Model& model, const std::vector<chess::Board>& boards, uint64_t seed);

// Heads whose best score among {knight, bishop, rook} exceeds the threshold,
// tagged with that best kind only. Raising the threshold never adds tags.
std::vector<patch::HeadTag> tags_from_scores(
    const std::vector<std::vector<std::array<double, 6>>>& scores, double threshold);

std::vector<patch::HeadTag> detect_piece_heads(const nn::Model& model,
                                               const std::vector<chess::Board>& boards,
                                               double threshold, uint64_t seed);

// Fraction of puzzles where the pre-softmax score (QK + smolgen) at
// (query=t1, key=t3) is the strict maximum of the head's 64x64 matrix.
// transpose_qk swaps the query/key roles.
double max_entry_statistic(const nn::Model& model,
                           const std::vector<patch::PatchContext>& contexts, int layer, int head,
                           bool transpose_qk = false);

}  // namespace ply::heads
