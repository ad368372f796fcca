#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "corrupt/corruption.hpp"
#include "data/puzzles.hpp"
#include "heads/heads.hpp"
#include "nn/synthetic.hpp"
#include "patch/patching.hpp"
#include "probe/probes.hpp"
#include "run/runner.hpp"
#include "stats/stats.hpp"

namespace ply::run {

namespace {

using chess::Board;
using chess::Move;
using chess::Square;

void expect(bool cond, const std::string& msg) {
  if (!cond) fail(ErrorKind::Internal, msg);
}

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

struct PlantedFixture {
  nn::PlantDescriptor plant;
  nn::Model model;
  patch::PatchContext ctx;
};

PlantedFixture make_fixture(uint64_t seed) {
  nn::PlantDescriptor plant;
  nn::Model model = nn::build_synthetic_model(nn::toy_spec(), plant, seed);
  patch::PatchContext ctx;
  ctx.puzzle_id = "planted";
  ctx.clean = Board::from_fen(plant.clean_fen);
  ctx.corrupted = Board::from_fen(plant.corrupted_fen);
  ctx.best = plant.best_move;
  // The carrier plays the role of the future-information square and the
  // readout the role of the first-move target.
  ctx.t1 = plant.readout;
  ctx.t3 = plant.carrier;
  ctx.corrupted_squares = {plant.carrier};
  ctx.special_squares = {plant.carrier, plant.readout, plant.sink, plant.best_move.from};
  return {plant, std::move(model), std::move(ctx)};
}

std::vector<Board> random_boards(size_t count, uint64_t seed) {
  Rng rng(seed);
  std::vector<Board> out;
  while (out.size() < count) {
    Board b = Board::start_position();
    const int plies = rng.uniform_int(24);
    for (int i = 0; i < plies; ++i) {
      const auto moves = b.legal_moves();
      if (moves.empty()) break;
      b = b.apply_move(moves[static_cast<size_t>(rng.uniform_int(static_cast<int>(moves.size())))]);
    }
    out.push_back(b);
  }
  return out;
}

nn::MoveDist hand_dist(const std::vector<std::pair<std::string, double>>& entries) {
  nn::MoveDist d;
  for (const auto& [uci, p] : entries) {
    d.moves.push_back(Move::from_uci(uci));
    d.probs.push_back(p);
  }
  return d;
}

}  // namespace

std::vector<CheckResult> selfcheck(uint64_t seed) {
  std::vector<CheckResult> results;
  const auto check = [&](const std::string& name, const std::function<std::string()>& fn) {
    try {
      results.push_back({name, true, fn()});
    } catch (const std::exception& e) {
      results.push_back({name, false, e.what()});
    }
  };

  check("perft-start", [] {
    const Board b = Board::start_position();
    const uint64_t expect_counts[4] = {20, 400, 8902, 197281};
    for (int d = 1; d <= 4; ++d) {
      const uint64_t got = b.perft(d);
      expect(got == expect_counts[d - 1],
             "perft(" + std::to_string(d) + ") = " + std::to_string(got));
    }
    return "perft 1..4 = 20/400/8902/197281";
  });

  check("stats-propagate", [] {
    expect(stats::propagate({3.0, 4.0}) == 5.0, "propagate((3,4)) != 5");
    expect(stats::propagate({7.0, 0.0}) == 7.0, "propagate((7,0)) != 7");
    return "propagate((3,4)) == 5 exactly";
  });

  check("stats-binomial-quantile", [] {
    const int lo = stats::binomial_quantile(100, 0.5, 0.025);
    const int hi = stats::binomial_quantile(100, 0.5, 0.975);
    expect(lo == 40 && hi == 60,
           "B(100,0.5) quantiles " + std::to_string(lo) + "/" + std::to_string(hi));
    const auto [mean, sem] = stats::mean_sem({0.0, 2.0});
    expect(mean == 1.0 && sem == 1.0, "mean_sem([0,2]) = " + num(mean) + "/" + num(sem));
    return "B(100,0.5) 2.5%/97.5% quantiles = 40/60";
  });

  check("site-counts", [] {
    const nn::ModelSpec full;
    const int64_t res_sites = static_cast<int64_t>(full.n_layers) * 64;
    const int64_t attn_entries =
        static_cast<int64_t>(full.n_layers) * full.n_heads * 64 * 64;
    expect(res_sites == 960, "residual sites " + std::to_string(res_sites));
    expect(attn_entries == 1474560, "attention entries " + std::to_string(attn_entries));
    return "960 residual sites, 1474560 attention entries at full size";
  });

  check("jsd-hand-value", [] {
    const auto p = hand_dist({{"e2e4", 0.5}, {"d2d4", 0.5}});
    const auto q = hand_dist({{"e2e4", 1.0}});
    const double j1 = corrupt::jensen_shannon(p, q);
    const double j2 = corrupt::jensen_shannon(q, p);
    expect(std::abs(j1 - 0.215762) < 1e-4, "JSD = " + num(j1));
    expect(j1 == j2, "JSD is not symmetric");
    expect(corrupt::jensen_shannon(p, p) == 0.0, "JSD(p,p) != 0");
    return "JSD((.5,.5),(1,0)) = " + num(j1) + " nats, symmetric";
  });

  check("probe-gradient-check", [&] {
    Rng rng(seed + 11);
    const int d = 8, k = 2;
    probe::ProbeParams p;
    p.rank = k;
    p.d = d;
    p.U.resize(static_cast<size_t>(k) * d);
    p.V.resize(static_cast<size_t>(k) * d);
    for (auto& w : p.U) w = rng.gaussian() * 0.4;
    for (auto& w : p.V) w = rng.gaussian() * 0.4;
    nn::Tensor res({64, d});
    for (auto& v : res.data) v = static_cast<float>(rng.gaussian());
    const int anchor = 5, label = 20;

    const auto base = probe_loss_grad(p, res, anchor, label);
    const double h = 1e-5;
    double worst = 0.0;
    for (size_t i = 0; i < p.U.size(); ++i) {
      for (const bool is_u : {true, false}) {
        auto& theta = is_u ? p.U : p.V;
        const auto& grad = is_u ? base.dU : base.dV;
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = probe_loss_grad(p, res, anchor, label).loss;
        theta[i] = keep - h;
        const double dn = probe_loss_grad(p, res, anchor, label).loss;
        theta[i] = keep;
        const double fd = (up - dn) / (2 * h);
        const double rel =
            std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
        worst = std::max(worst, rel);
      }
    }
    expect(worst < 1e-4, "worst relative gradient error " + num(worst));
    expect(std::abs(base.dc) < 1e-12, "bias gradient " + num(base.dc) + " should vanish");
    return "worst relative gradient error " + num(worst);
  });

  check("probe-planted-recovery", [&] {
    const int d = 16, n = 240;
    const auto samples = nn::make_planted_residuals(n, d, seed + 13);
    probe::ActivationStore store;
    store.model_hash = "planted-residuals";
    store.d = d;
    store.streams = {0};
    std::vector<std::string> train_ids, eval_ids;
    for (int i = 0; i < n; ++i) {
      char id[8];
      std::snprintf(id, sizeof(id), "p%03d", i);
      store.entries.push_back(
          {id, {samples[static_cast<size_t>(i)].residuals}, samples[static_cast<size_t>(i)].t1,
           samples[static_cast<size_t>(i)].t3, samples[static_cast<size_t>(i)].s3});
      (i < (n * 7) / 10 ? train_ids : eval_ids).push_back(id);
    }
    probe::TrainHyper hyper;
    hyper.rank = 8;
    hyper.batch_size = 32;
    hyper.epochs = 30;
    const auto target =
        probe::train_probe(store, train_ids, 0, probe::Stage::Target, hyper, seed + 14);
    const auto source =
        probe::train_probe(store, train_ids, 0, probe::Stage::Source, hyper, seed + 15);
    const auto ev =
        probe::evaluate_probes(target.params, source.params, store, train_ids, eval_ids);
    expect(ev.target_acc == 1.0, "target accuracy " + num(ev.target_acc));
    expect(ev.source_acc == 1.0, "source accuracy " + num(ev.source_acc));
    expect(ev.pipeline_acc == 1.0, "pipeline accuracy " + num(ev.pipeline_acc));
    expect(!target.epoch_loss.empty() && target.epoch_loss.back() < target.epoch_loss.front(),
           "target loss did not decrease");
    return "planted (t3, s3) recovered at 100% on " + std::to_string(ev.n) + " held-out samples";
  });

  std::optional<PlantedFixture> fixture;
  check("planted-model-build", [&] {
    fixture.emplace(make_fixture(seed));
    return "best " + fixture->plant.best_move.uci() + ", fallback " +
           fixture->plant.fallback_move.uci();
  });
  if (!fixture) return results;  // every check below exercises the plant
  PlantedFixture& fx = *fixture;

  check("archive-roundtrip", [&] {
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() / "plyscope_selfcheck_model.bin";
    fx.model.save(tmp.string());
    const nn::Model back = nn::Model::load(tmp.string());
    fs::remove(tmp);
    expect(back.hash() == fx.model.hash(), "content hash changed across save/load");
    expect(back.param_count() == fx.model.param_count(), "parameter count changed");
    return "hash " + back.hash();
  });

  check("identity-patch-zero", [&] {
    patch::PatchContext ident = fx.ctx;
    ident.corrupted = ident.clean;
    const auto sweep = patch::residual_sweep(fx.model, ident);
    for (const auto& stream : sweep.grid)
      for (const auto& rec : stream)
        expect(rec.delta == 0.0, "residual identity patch at " + rec.site.describe() +
                                     " gave delta " + num(rec.delta));
    const auto heads = patch::head_sweep(fx.model, ident);
    for (const auto& layer : heads.grid)
      for (const auto& rec : layer)
        expect(rec.delta == 0.0, "head identity patch at " + rec.site.describe() +
                                     " gave delta " + num(rec.delta));
    return "all identity patches gave delta == 0 exactly";
  });

  check("planted-residual-recovery", [&] {
    const auto sweep = patch::residual_sweep(fx.model, fx.ctx);
    std::vector<std::string> flagged;
    for (size_t s = 0; s < sweep.grid.size(); ++s)
      for (size_t sq = 0; sq < sweep.grid[s].size(); ++sq)
        if (std::abs(sweep.grid[s][sq].delta) > 0.5)
          flagged.push_back("s" + std::to_string(s) + ":" + Square(static_cast<int>(sq)).name());
    const std::vector<std::string> want = {"s0:" + fx.plant.carrier.name(),
                                           "s1:" + fx.plant.readout.name()};
    std::ostringstream os;
    for (const auto& f : flagged) os << f << " ";
    expect(flagged == want, "flagged sites: " + os.str());
    return "flagged exactly {carrier@0, readout@1}";
  });

  check("planted-head-recovery", [&] {
    const auto sweep = patch::head_sweep(fx.model, fx.ctx);
    int n_flagged = 0;
    double planted_delta = 0.0;
    for (size_t li = 0; li < sweep.grid.size(); ++li)
      for (size_t h = 0; h < sweep.grid[li].size(); ++h) {
        const double d = sweep.grid[li][h].delta;
        if (std::abs(d) > 0.5) ++n_flagged;
        if (static_cast<int>(li) == fx.plant.layer && static_cast<int>(h) == fx.plant.head)
          planted_delta = d;
      }
    expect(planted_delta > 0.5, "planted head delta " + num(planted_delta));
    expect(n_flagged == 1, std::to_string(n_flagged) + " heads flagged");
    return "planted head delta " + num(planted_delta) + ", no other head flagged";
  });

  check("planted-entry-ablation", [&] {
    const auto abl = patch::entry_ablation(fx.model, fx.ctx, fx.plant.layer, fx.plant.head);
    expect(!abl.skipped, "ablation was skipped");
    expect(abl.entry_is_global_max, "planted entry is not the strict max");
    expect(abl.single_changes_top_move, "single ablation kept the top move");
    expect(!abl.complement_changes_top_move, "complement ablation changed the top move");
    expect(abl.single_delta > 0.5, "single delta " + num(abl.single_delta));
    // The complement is not exactly zero: layer norm recentres the stream, so
    // the value channel is small-but-nonzero at every square and the near-unity
    // attention rows leak a uniform offset.  The invariant is that the effect
    // is small next to the single-entry ablation.
    expect(std::abs(abl.complement_delta) < 0.25 * abl.single_delta,
           "complement delta " + num(abl.complement_delta) + " vs single " +
               num(abl.single_delta));
    return "single delta " + num(abl.single_delta) + ", complement delta " +
           num(abl.complement_delta);
  });

  check("planted-knight-head", [&] {
    const auto boards = random_boards(32, seed + 7);
    const auto tags = heads::detect_piece_heads(fx.model, boards, 0.5, seed + 8);
    expect(tags.size() == 1, std::to_string(tags.size()) + " heads tagged");
    expect(tags[0].layer == fx.plant.knight_layer && tags[0].head == fx.plant.knight_head,
           "wrong head tagged");
    expect(tags[0].kind == chess::PieceKind::Knight, "wrong piece kind");
    expect(tags[0].score > 0.95, "knight score " + num(tags[0].score));
    return "knight head tagged with score " + num(tags[0].score);
  });

  check("trace-identities", [&] {
    const nn::Model rand = nn::random_init_like(fx.model, seed + 21);
    for (const nn::Model* m : {static_cast<const nn::Model*>(&fx.model), &rand}) {
      const Board pf = fx.ctx.clean.orient_to_player();
      const auto planes = chess::encode_input(pf, m->spec().layout);
      const auto fwd = m->forward(planes, {}, nn::TraceLevel::Full);
      const auto& spec = m->spec();
      for (int li = 0; li < spec.n_layers; ++li)
        for (int h = 0; h < spec.n_heads; ++h) {
          const auto& attn = fwd.trace.attn[li][h];
          const auto& qk = fwd.trace.qk_scores[li][h];
          const auto& sg = fwd.trace.smolgen_scores[li][h];
          for (int q = 0; q < 64; ++q) {
            double row_sum = 0.0, mx = -1e300;
            for (int k = 0; k < 64; ++k) {
              row_sum += attn.at(q, k);
              mx = std::max(mx, static_cast<double>(qk.at(q, k)) + sg.at(q, k));
            }
            expect(std::abs(row_sum - 1.0) < 1e-5, "attention row does not sum to 1");
            double z = 0.0;
            for (int k = 0; k < 64; ++k)
              z += std::exp(static_cast<double>(qk.at(q, k)) + sg.at(q, k) - mx);
            for (int k = 0; k < 64; ++k) {
              const double want =
                  std::exp(static_cast<double>(qk.at(q, k)) + sg.at(q, k) - mx) / z;
              expect(std::abs(want - attn.at(q, k)) < 1e-5,
                     "attention != softmax(qk + smolgen)");
            }
          }
        }
      double wdl = fwd.value.wdl[0] + fwd.value.wdl[1] + fwd.value.wdl[2];
      expect(std::abs(wdl - 1.0) < 1e-6, "WDL sums to " + num(wdl));
    }
    return "attn == row_softmax(qk + smolgen) within 1e-5; WDL sums to 1 within 1e-6";
  });

  check("corruption-search-planted", [&] {
    const auto cands = corrupt::generate_candidates(fx.ctx.clean);
    const auto it = std::find_if(cands.begin(), cands.end(), [&](const auto& c) {
      return c.mutation.describe() == "remove_pawn " + fx.plant.carrier.name();
    });
    expect(it != cands.end(), "carrier-removal candidate missing");
    for (const auto& c : cands) c.board.validate();

    const nn::Model weak = nn::random_init_like(fx.model, seed + 23);
    corrupt::FilterThresholds th;
    th.use_b = th.use_c = false;  // the random weak model's reaction is untyped
    const auto kept = corrupt::filter_candidates(fx.model, weak, fx.ctx.clean, fx.ctx.best,
                                                 {*it}, th);
    expect(kept.size() == 1, "carrier removal failed the strong-model filter");
    expect(kept[0].strong_best_prob < 0.10,
           "strong best prob " + num(kept[0].strong_best_prob));
    const auto sel = corrupt::select_corruption(weak, fx.ctx.clean, kept);
    expect(sel.has_value() && sel->mutation == it->mutation, "selection lost the candidate");
    expect(std::isfinite(sel->jsd) && sel->jsd >= 0.0, "JSD " + num(sel->jsd));
    const auto round = corrupt::Mutation::from_description(sel->mutation.describe());
    expect(round == sel->mutation, "mutation description does not round-trip");
    return std::to_string(cands.size()) + " candidates; carrier removal survives with " +
           "strong prob " + num(kept[0].strong_best_prob);
  });

  check("determinism", [&] {
    const Board pf = fx.ctx.clean.orient_to_player();
    const auto planes = chess::encode_input(pf, fx.model.spec().layout);
    const auto a = fx.model.forward(planes, {}, nn::TraceLevel::Policy);
    const auto b = fx.model.forward(planes, {}, nn::TraceLevel::Policy);
    expect(a.policy.logits.data == b.policy.logits.data, "repeated forward differs");

    const auto samples = nn::make_planted_residuals(64, 12, seed + 27);
    probe::ActivationStore store;
    store.model_hash = "planted-residuals";
    store.d = 12;
    store.streams = {0};
    std::vector<std::string> ids;
    for (size_t i = 0; i < samples.size(); ++i) {
      char id[8];
      std::snprintf(id, sizeof(id), "q%03zu", i);
      store.entries.push_back({id, {samples[i].residuals}, samples[i].t1, samples[i].t3,
                               samples[i].s3});
      ids.push_back(id);
    }
    probe::TrainHyper hyper;
    hyper.rank = 4;
    hyper.batch_size = 16;
    hyper.epochs = 2;
    const auto t1 = probe::train_probe(store, ids, 0, probe::Stage::Target, hyper, seed + 28);
    const auto t2 = probe::train_probe(store, ids, 0, probe::Stage::Target, hyper, seed + 28);
    expect(t1.params.U == t2.params.U && t1.params.V == t2.params.V,
           "same-seed training is not bit-identical");
    return "repeated forwards and same-seed training are bit-identical";
  });

  check("dataset-roundtrip", [&] {
    namespace fs = std::filesystem;
    auto rec1 = data::make_record("t1", fx.plant.clean_fen,
                                  {Move::from_uci("h1h4"), Move::from_uci("a8a7"),
                                   Move::from_uci("h4h8")},
                                  1500);
    auto rec2 = rec1;
    rec2.id = "t2";
    const auto cands = corrupt::generate_candidates(fx.ctx.clean);
    rec2.corruption = cands.front();
    rec2.corruption->jsd = 0.125;

    const fs::path tmp = fs::temp_directory_path() / "plyscope_selfcheck_puzzles.jsonl";
    data::save_dataset(tmp.string(), {rec2, rec1});  // save sorts by id
    const auto back = data::load_dataset(tmp.string());
    fs::remove(tmp);
    expect(back.size() == 2, "round trip lost records");
    expect(back[0] == rec1 && back[1] == rec2, "round trip changed a record");

    const auto split = data::train_eval_split(back, 0.5, 3);
    const auto split2 = data::train_eval_split(back, 0.5, 3);
    expect(split.train == split2.train && split.eval == split2.eval,
           "seeded split is not reproducible");
    expect(split.train.size() == 1 && split.eval.size() == 1, "split sizes wrong");
    return "JSONL round trip exact; seeded split reproducible";
  });

  return results;
}

}  // namespace ply::run
