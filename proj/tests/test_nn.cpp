#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "chess/encode.hpp"
#include "common/error.hpp"
#include "nn/archive.hpp"
#include "nn/model.hpp"
#include "nn/synthetic.hpp"
#include "patch/patching.hpp"
#include "temp_dir.hpp"

using namespace ply;
using nn::ActivationSite;
using nn::Archive;
using nn::Model;
using nn::Tensor;
using testutil::TempDir;

namespace {

nn::ForwardResult traced_forward(const Model& model, const chess::Board& board) {
  const auto player = board.orient_to_player();
  const auto planes = chess::encode_input(player, model.spec().layout);
  return model.forward(planes, nn::HookSet{}, nn::TraceLevel::Full);
}

// Row softmax in the same float32 arithmetic the engine uses.
void check_softmax_identity(const Tensor& attn, const Tensor& qk, const Tensor& sg) {
  for (int q = 0; q < 64; ++q) {
    float mx = -std::numeric_limits<float>::infinity();
    for (int k = 0; k < 64; ++k) mx = std::max(mx, qk.at(q, k) + sg.at(q, k));
    double sum = 0.0;
    std::array<float, 64> e{};
    for (int k = 0; k < 64; ++k) {
      e[static_cast<size_t>(k)] = std::exp(qk.at(q, k) + sg.at(q, k) - mx);
      sum += e[static_cast<size_t>(k)];
    }
    double row = 0.0;
    for (int k = 0; k < 64; ++k) {
      const double expect = e[static_cast<size_t>(k)] / sum;
      CHECK(std::abs(attn.at(q, k) - expect) < 1e-5);
      row += attn.at(q, k);
    }
    CHECK(std::abs(row - 1.0) < 1e-5);
  }
}

}  // namespace

TEST_CASE("archive round trips tensors, metadata and hash") {
  Archive a;
  Tensor t({2, 3});
  for (int i = 0; i < 6; ++i) t.data[static_cast<size_t>(i)] = static_cast<float>(i) * 0.5f;
  a.put("layer.w", t);
  a.put("layer.b", Tensor({3}));
  a.metadata() = R"({"purpose":"test"})";

  CHECK(a.total_params() == 9);
  CHECK(a.names() == std::vector<std::string>{"layer.b", "layer.w"});
  CHECK_THROWS_AS(a.get("missing"), Error);

  TempDir dir("archive");
  const auto file = dir.path("weights.bin");
  a.save(file);
  const Archive b = Archive::load(file);
  CHECK(b.metadata() == a.metadata());
  CHECK(b.content_hash() == a.content_hash());
  CHECK(b.get("layer.w").shape == std::vector<int64_t>{2, 3});
  CHECK(b.get("layer.w").data == t.data);
}

TEST_CASE("archive rejects missing and corrupt files") {
  TempDir dir("archive-bad");
  CHECK_THROWS_AS(Archive::load(dir.path("absent.bin")), Error);

  {
    std::ofstream f(dir.path("garbage.bin"), std::ios::binary);
    f << "this is not an archive";
  }
  CHECK_THROWS_AS(Archive::load(dir.path("garbage.bin")), Error);

  // Truncating a valid archive must fail the load, not return junk.
  Archive a;
  a.put("t", Tensor({16, 16}));
  a.save(dir.path("ok.bin"));
  std::ifstream in(dir.path("ok.bin"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::ofstream f(dir.path("short.bin"), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(Archive::load(dir.path("short.bin")), Error);
}

TEST_CASE("model spec json round trip and validation") {
  const nn::ModelSpec spec = nn::toy_spec();
  const auto round = nn::ModelSpec::from_json(spec.to_json());
  CHECK(round.to_json() == spec.to_json());

  nn::ModelSpec bad = spec;
  bad.n_heads = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.d_head = -4;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("synthetic model is deterministic and verified") {
  nn::PlantDescriptor plant;
  const Model m1 = nn::build_synthetic_model(nn::toy_spec(), plant, 42);
  nn::PlantDescriptor plant2;
  const Model m2 = nn::build_synthetic_model(nn::toy_spec(), plant2, 42);
  CHECK(m1.hash() == m2.hash());
  CHECK(plant.best_move == plant2.best_move);

  // The builder's own verification promises these.
  CHECK(plant.best_move.to == plant.readout);
  CHECK(plant.best_move != plant.fallback_move);
  const auto clean = chess::Board::from_fen(plant.clean_fen);
  const auto corrupted = chess::Board::from_fen(plant.corrupted_fen);
  CHECK(m1.move_distribution(clean).prob_of(plant.best_move) > 0.9);
  CHECK(m1.move_distribution(corrupted).prob_of(plant.best_move) < 0.1);
  CHECK_FALSE(corrupted.piece_at(plant.carrier).has_value());

  nn::PlantDescriptor plant3;
  const Model m3 = nn::build_synthetic_model(nn::toy_spec(), plant3, 43);
  CHECK(m1.hash() != m3.hash());  // tiebreak draws differ
}

TEST_CASE("model save/load preserves behavior") {
  nn::PlantDescriptor plant;
  const Model m = nn::build_synthetic_model(nn::toy_spec(), plant, 7);
  TempDir dir("model");
  m.save(dir.path("m.bin"));
  const Model loaded = Model::load(dir.path("m.bin"));
  CHECK(loaded.hash() == m.hash());
  CHECK(loaded.param_count() == m.param_count());

  const auto board = chess::Board::from_fen(plant.clean_fen);
  const auto d1 = m.move_distribution(board);
  const auto d2 = loaded.move_distribution(board);
  REQUIRE(d1.moves.size() == d2.moves.size());
  for (size_t i = 0; i < d1.probs.size(); ++i) CHECK(d1.probs[i] == d2.probs[i]);

  CHECK_THROWS_AS(Model::load(dir.path("missing.bin")), Error);
}

TEST_CASE("forward trace satisfies the softmax and WDL identities") {
  nn::PlantDescriptor plant;
  const Model planted = nn::build_synthetic_model(nn::toy_spec(), plant, 5);
  const Model random = nn::random_init_like(planted, 6);
  const auto board = chess::Board::from_fen("r1bqkbnr/pppp1ppp/2n5/4p3/2B1P3/5N2/PPPP1PPP/RNBQK2R b KQkq - 3 3");

  for (const Model* m : {&planted, &random}) {
    const auto result = traced_forward(*m, board);
    const auto& spec = m->spec();
    REQUIRE(result.trace.residual.size() == static_cast<size_t>(spec.n_layers) + 1);
    REQUIRE(result.trace.attn.size() == static_cast<size_t>(spec.n_layers));
    for (int l = 0; l < spec.n_layers; ++l) {
      REQUIRE(result.trace.attn[static_cast<size_t>(l)].size() ==
              static_cast<size_t>(spec.n_heads));
      for (int h = 0; h < spec.n_heads; ++h) {
        check_softmax_identity(result.trace.attn[static_cast<size_t>(l)][static_cast<size_t>(h)],
                               result.trace.qk_scores[static_cast<size_t>(l)][static_cast<size_t>(h)],
                               result.trace.smolgen_scores[static_cast<size_t>(l)][static_cast<size_t>(h)]);
      }
    }
    const double wdl_sum = result.value.wdl[0] + result.value.wdl[1] + result.value.wdl[2];
    CHECK(std::abs(wdl_sum - 1.0) < 1e-6);
    CHECK(result.value.score() <= 1.0);
    CHECK(result.value.score() >= -1.0);
  }
}

TEST_CASE("hook validation rejects out-of-range sites") {
  const auto spec = nn::toy_spec();
  nn::HookSet hooks;
  hooks.writes.push_back({ActivationSite::residual(spec.n_layers, 0), {}});  // beyond patchable
  CHECK_THROWS_AS(hooks.validate(spec), Error);

  hooks.writes.clear();
  hooks.writes.push_back({ActivationSite::attn_entry(0, spec.n_heads, 0, 0), {}});
  CHECK_THROWS_AS(hooks.validate(spec), Error);

  hooks.writes.clear();
  hooks.writes.push_back({ActivationSite::attn_entry(0, 0, 64, 0), {}});
  CHECK_THROWS_AS(hooks.validate(spec), Error);

  // A residual write must carry 0 (zeros) or d_resid floats.
  hooks.writes.clear();
  hooks.writes.push_back({ActivationSite::residual(0, 3), std::vector<float>(5, 1.0f)});
  CHECK_THROWS_AS(hooks.validate(spec), Error);

  // The final stream is readable (the trace holds n_layers + 1 entries) even
  // though it is not patchable.
  hooks.writes.clear();
  hooks.reads.push_back(ActivationSite::residual(spec.n_layers, 0));
  CHECK_NOTHROW(hooks.validate(spec));
  hooks.reads.clear();
  hooks.reads.push_back(ActivationSite::residual(spec.n_layers + 1, 0));
  CHECK_THROWS_AS(hooks.validate(spec), Error);
}

TEST_CASE("a final-stream read returns the policy-head input") {
  nn::PlantDescriptor plant;
  const Model m = nn::build_synthetic_model(nn::toy_spec(), plant, 31);
  const auto planes =
      chess::encode_input(chess::Board::from_fen(plant.clean_fen), m.spec().layout);

  nn::HookSet hooks;
  hooks.reads.push_back(ActivationSite::residual(m.spec().n_layers, 0));
  const auto traced = m.forward(planes, hooks, nn::TraceLevel::Policy);
  const auto full = m.forward(planes, {}, nn::TraceLevel::Full);
  const auto& got = traced.trace.residual.at(static_cast<size_t>(m.spec().n_layers));
  const auto& want = full.trace.residual.at(static_cast<size_t>(m.spec().n_layers));
  REQUIRE(got.shape == want.shape);
  CHECK(got.data == want.data);
}

TEST_CASE("residual write hooks change the forward pass") {
  nn::PlantDescriptor plant;
  const Model m = nn::build_synthetic_model(nn::toy_spec(), plant, 9);
  const auto board = chess::Board::from_fen(plant.clean_fen);
  const auto planes = chess::encode_input(board.orient_to_player(), m.spec().layout);

  const auto clean = m.forward(planes, nn::HookSet{}, nn::TraceLevel::Policy);

  nn::HookSet zero_carrier;
  zero_carrier.writes.push_back(
      {ActivationSite::residual(0, plant.carrier.index()), {}});
  const auto zeroed = m.forward(planes, zero_carrier, nn::TraceLevel::Policy);

  // Killing the carrier's post-embedding state suppresses the planted move.
  const auto best = plant.best_move;
  CHECK(clean.policy.move_logit(best) > zeroed.policy.move_logit(best));
}

TEST_CASE("an underflowed attention entry reads back as an exact zero") {
  nn::PlantDescriptor plant;
  const Model planted = nn::build_synthetic_model(nn::toy_spec(), plant, 3);

  // Push one entry of the copy head's pattern to -150; after max-subtraction
  // the float32 softmax underflows it to exactly 0.
  Archive a = planted.archive();  // copy
  Tensor table = a.get("sg.global");
  const int q = 5, k = 9;
  table.at(0, q * 64 + k) = -150.0f;
  a.put("sg.global", std::move(table));
  const Model crafted = Model::from_archive(std::move(a));

  const auto result = traced_forward(crafted, chess::Board::from_fen(plant.clean_fen));
  CHECK(result.trace.attn[0][1].at(q, k) == 0.0f);

  // Zeroing an entry that is already exactly zero is a bit-identical forward.
  const auto board = chess::Board::from_fen(plant.clean_fen);
  const auto effect = patch::ablate_attention_entries(
      crafted, board, {ActivationSite::attn_entry(plant.layer, plant.head, q, k)},
      plant.best_move);
  CHECK(effect.delta == 0.0);
  CHECK(effect.clean_prob == effect.patched_prob);
}

TEST_CASE("log odds clamps at the probability floor") {
  CHECK(nn::log_odds(0.5) == 0.0);
  CHECK_FALSE(nn::log_odds_clamped(0.5));
  CHECK(nn::log_odds(0.0) == doctest::Approx(std::log(1e-9 / (1.0 - 1e-9))));
  CHECK(nn::log_odds_clamped(0.0));
  CHECK(nn::log_odds(1.0) == doctest::Approx(-nn::log_odds(0.0)));
  CHECK(nn::log_odds_clamped(1.0));
  CHECK(nn::log_odds(0.25) == doctest::Approx(std::log(0.25 / 0.75)));
}

TEST_CASE("random_init_like copies shapes, not values") {
  nn::PlantDescriptor plant;
  const Model m = nn::build_synthetic_model(nn::toy_spec(), plant, 1);
  const Model r1 = nn::random_init_like(m, 100);
  const Model r2 = nn::random_init_like(m, 100);
  const Model r3 = nn::random_init_like(m, 101);
  CHECK(r1.hash() == r2.hash());
  CHECK(r1.hash() != r3.hash());
  CHECK(r1.hash() != m.hash());
  CHECK(r1.param_count() == m.param_count());
  CHECK(r1.archive().names() == m.archive().names());
}
