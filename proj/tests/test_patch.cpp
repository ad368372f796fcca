#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "chess/board.hpp"
#include "nn/model.hpp"
#include "nn/synthetic.hpp"
#include "patch/patching.hpp"

using namespace ply;
using chess::Square;
using nn::ActivationSite;

namespace {

struct Fixture {
  nn::PlantDescriptor plant;
  nn::Model model;
  patch::PatchContext ctx;

  explicit Fixture(uint64_t seed)
      : model(nn::build_synthetic_model(nn::toy_spec(), plant, seed)) {
    ctx.puzzle_id = "planted";
    ctx.clean = chess::Board::from_fen(plant.clean_fen);
    ctx.corrupted = chess::Board::from_fen(plant.corrupted_fen);
    ctx.best = plant.best_move;
    ctx.t1 = plant.readout;
    ctx.t3 = plant.carrier;
    ctx.corrupted_squares = {plant.carrier};
    ctx.special_squares = {plant.carrier, plant.readout, plant.sink, plant.best_move.from};
  }
};

}  // namespace

TEST_CASE("identity patching yields exactly zero everywhere") {
  const Fixture fx(21);
  patch::PatchContext ident = fx.ctx;
  ident.corrupted = ident.clean;

  const auto res = patch::residual_sweep(fx.model, ident);
  REQUIRE(res.grid.size() == 2);  // toy spec: streams 0 and 1 are patchable
  for (const auto& stream : res.grid) {
    REQUIRE(stream.size() == 64);
    for (const auto& rec : stream) {
      CHECK(rec.delta == 0.0);
      CHECK(rec.clean_prob == rec.patched_prob);
    }
  }

  const auto heads = patch::head_sweep(fx.model, ident);
  REQUIRE(heads.grid.size() == 2);
  for (const auto& layer : heads.grid) {
    REQUIRE(layer.size() == 4);
    for (const auto& rec : layer) CHECK(rec.delta == 0.0);
  }
}

TEST_CASE("residual sweep recovers the planted carrier and readout") {
  const Fixture fx(22);
  const auto sweep = patch::residual_sweep(fx.model, fx.ctx);

  std::vector<std::pair<int, int>> flagged;
  for (size_t s = 0; s < sweep.grid.size(); ++s)
    for (size_t sq = 0; sq < sweep.grid[s].size(); ++sq)
      if (std::abs(sweep.grid[s][sq].delta) > 0.5)
        flagged.push_back({static_cast<int>(s), static_cast<int>(sq)});

  REQUIRE(flagged.size() == 2);
  CHECK(flagged[0] == std::pair<int, int>{0, fx.plant.carrier.index()});
  CHECK(flagged[1] == std::pair<int, int>{1, fx.plant.readout.index()});
  CHECK(sweep.clean_prob > 0.9);

  // Square classes follow the context: corruption wins over t3, then t1.
  CHECK(sweep.square_class[static_cast<size_t>(fx.plant.carrier.index())] ==
        patch::SquareClass::Corrupted);
  CHECK(sweep.square_class[static_cast<size_t>(fx.plant.readout.index())] ==
        patch::SquareClass::T1);
  CHECK(sweep.square_class[0] == patch::SquareClass::Other);

  // other_max re-derives from the grid.
  REQUIRE(sweep.other_max.size() == sweep.grid.size());
  for (size_t s = 0; s < sweep.grid.size(); ++s) {
    double want = 0.0;
    for (size_t sq = 0; sq < 64; ++sq)
      if (sweep.square_class[sq] == patch::SquareClass::Other)
        want = std::max(want, sweep.grid[s][sq].delta);
    CHECK(sweep.other_max[s] == want);
  }
}

TEST_CASE("head sweep flags exactly the planted head") {
  const Fixture fx(23);
  const auto sweep = patch::head_sweep(fx.model, fx.ctx);
  int flagged = 0;
  for (size_t l = 0; l < sweep.grid.size(); ++l)
    for (size_t h = 0; h < sweep.grid[l].size(); ++h) {
      const auto& rec = sweep.grid[l][h];
      CHECK(rec.site.layer == static_cast<int>(l));
      CHECK(rec.site.head == static_cast<int>(h));
      if (std::abs(rec.delta) > 0.5) {
        ++flagged;
        CHECK(static_cast<int>(l) == fx.plant.layer);
        CHECK(static_cast<int>(h) == fx.plant.head);
      }
    }
  CHECK(flagged == 1);
}

TEST_CASE("single-entry ablation flips the move, the complement does not") {
  const Fixture fx(24);
  const auto abl = patch::entry_ablation(fx.model, fx.ctx, fx.plant.layer, fx.plant.head);
  CHECK_FALSE(abl.skipped);
  CHECK(abl.entry_is_global_max);
  CHECK(abl.single_changes_top_move);
  CHECK_FALSE(abl.complement_changes_top_move);
  CHECK(abl.single_delta > 0.5);
  CHECK(std::abs(abl.complement_delta) < 0.25 * abl.single_delta);
}

TEST_CASE("entry ablation is skipped when t1 equals t3") {
  const Fixture fx(25);
  patch::PatchContext degenerate = fx.ctx;
  degenerate.t3 = degenerate.t1;
  const auto abl = patch::entry_ablation(fx.model, degenerate, fx.plant.layer, fx.plant.head);
  CHECK(abl.skipped);
}

TEST_CASE("transposing query and key destroys the planted effect") {
  const Fixture fx(26);
  const auto abl =
      patch::entry_ablation(fx.model, fx.ctx, fx.plant.layer, fx.plant.head, true);
  CHECK_FALSE(abl.skipped);
  CHECK_FALSE(abl.entry_is_global_max);
  CHECK_FALSE(abl.single_changes_top_move);
  CHECK(std::abs(abl.single_delta) < 0.5);
}

TEST_CASE("pre-softmax masking also flips the planted move") {
  const Fixture fx(27);
  const auto abl =
      patch::entry_ablation(fx.model, fx.ctx, fx.plant.layer, fx.plant.head, false, true);
  CHECK_FALSE(abl.skipped);
  CHECK(abl.single_changes_top_move);
  CHECK(abl.single_delta > 0.5);
}

TEST_CASE("ablate_attention_entries with no entries is the clean forward") {
  const Fixture fx(28);
  const auto rec = patch::ablate_attention_entries(fx.model, fx.ctx.clean, {}, fx.ctx.best);
  CHECK(rec.delta == 0.0);
  CHECK(rec.clean_prob == rec.patched_prob);
}

TEST_CASE("piece-head ablation zeroes key columns with the source exemption") {
  const Fixture fx(29);
  // Tag the copy head as if it were a knight-movement head; key = carrier then
  // hits the planted (readout <- carrier) entry.
  const std::vector<patch::HeadTag> tags = {
      {fx.plant.layer, fx.plant.head, chess::PieceKind::Knight, 1.0}};

  // Source far from the action: the planted entry is zeroed, the move flips.
  const auto hit =
      patch::piece_head_ablation(fx.model, fx.ctx, Square(0), fx.plant.carrier,
                                 chess::PieceKind::Knight, tags, 77);
  CHECK(hit.eligible);
  CHECK(hit.matched_heads == 1);
  CHECK(hit.other_heads == 0);
  CHECK(hit.matched_delta > 0.5);

  // Source equal to the readout: the (readout <- carrier) entry is exempt, so
  // the planted path survives.
  const auto exempt =
      patch::piece_head_ablation(fx.model, fx.ctx, fx.plant.readout, fx.plant.carrier,
                                 chess::PieceKind::Knight, tags, 77);
  CHECK(exempt.eligible);
  CHECK(exempt.matched_delta < 0.5);

  // Same seed, same random baseline square.
  const auto again =
      patch::piece_head_ablation(fx.model, fx.ctx, Square(0), fx.plant.carrier,
                                 chess::PieceKind::Knight, tags, 77);
  CHECK(again.random_square_delta == hit.random_square_delta);
}

TEST_CASE("the genuinely knight-tagged head carries no value in the plant") {
  const Fixture fx(30);
  const std::vector<patch::HeadTag> tags = {
      {fx.plant.knight_layer, fx.plant.knight_head, chess::PieceKind::Knight, 1.0}};
  const auto abl = patch::piece_head_ablation(fx.model, fx.ctx, Square(0), Square(9),
                                              chess::PieceKind::Knight, tags, 5);
  CHECK(abl.eligible);
  // The knight head's W_V is zero by construction; nothing can change.
  CHECK(abl.matched_delta == 0.0);
  CHECK(abl.random_square_delta == 0.0);
}
