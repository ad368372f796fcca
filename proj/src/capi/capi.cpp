#include <plyscope.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chess/board.hpp"
#include "chess/encode.hpp"
#include "chess/types.hpp"
#include "common/error.hpp"
#include "nn/model.hpp"
#include "nn/synthetic.hpp"
#include "run/config.hpp"
#include "run/runner.hpp"

using nlohmann::json;

struct ply_board {
  ply::chess::Board board;
};

struct ply_model {
  ply::nn::Model model;
};

namespace {

thread_local std::string g_last_error;

ply_status status_of(ply::ErrorKind kind) {
  using ply::ErrorKind;
  switch (kind) {
    case ErrorKind::Parse:
      return PLY_ERR_PARSE;
    case ErrorKind::Illegal:
      return PLY_ERR_ILLEGAL;
    case ErrorKind::Io:
      return PLY_ERR_IO;
    case ErrorKind::Shape:
      return PLY_ERR_SHAPE;
    case ErrorKind::Numeric:
      return PLY_ERR_NUMERIC;
    case ErrorKind::Config:
      return PLY_ERR_CONFIG;
    case ErrorKind::Internal:
      return PLY_ERR_INTERNAL;
  }
  return PLY_ERR_INTERNAL;
}

// Runs the body, converting exceptions to status codes + g_last_error.
template <typename Fn>
ply_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ply::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PLY_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PLY_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PLY_ERR_INTERNAL;
  }
}

// Caller-owned copy for char** out-parameters; released by ply_free.
char* dup_string(const std::string& s) {
  char* buf = static_cast<char*>(std::malloc(s.size() + 1));
  if (!buf) throw std::bad_alloc();
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return buf;
}

ply_status require(bool ok, const char* what) {
  if (ok) return PLY_OK;
  g_last_error = std::string("null argument: ") + what;
  return PLY_ERR_CONFIG;
}

}  // namespace

extern "C" {

const char* ply_version(void) { return "0.1.0"; }

const char* ply_last_error(void) { return g_last_error.c_str(); }

void ply_free(void* ptr) { std::free(ptr); }

/* ---- boards ------------------------------------------------------------ */

ply_status ply_board_from_fen(const char* fen, ply_board** out) {
  if (auto s = require(fen && out, "fen/out")) return s;
  return guarded([&] {
    *out = new ply_board{ply::chess::Board::from_fen(fen)};
    return PLY_OK;
  });
}

ply_status ply_board_start(ply_board** out) {
  if (auto s = require(out, "out")) return s;
  return guarded([&] {
    *out = new ply_board{ply::chess::Board::start_position()};
    return PLY_OK;
  });
}

void ply_board_destroy(ply_board* board) { delete board; }

ply_status ply_board_fen(const ply_board* board, char** out_fen) {
  if (auto s = require(board && out_fen, "board/out_fen")) return s;
  return guarded([&] {
    *out_fen = dup_string(board->board.fen());
    return PLY_OK;
  });
}

ply_status ply_board_legal_moves(const ply_board* board, char** out_moves) {
  if (auto s = require(board && out_moves, "board/out_moves")) return s;
  return guarded([&] {
    std::string joined;
    for (const auto& m : board->board.legal_moves()) {
      if (!joined.empty()) joined += ' ';
      joined += m.uci();
    }
    *out_moves = dup_string(joined);
    return PLY_OK;
  });
}

ply_status ply_board_apply(ply_board* board, const char* uci) {
  if (auto s = require(board && uci, "board/uci")) return s;
  return guarded([&] {
    board->board = board->board.apply_move(ply::chess::Move::from_uci(uci));
    return PLY_OK;
  });
}

ply_status ply_board_perft(const ply_board* board, int depth, uint64_t* out_nodes) {
  if (auto s = require(board && out_nodes, "board/out_nodes")) return s;
  return guarded([&] {
    if (depth < 0) ply::fail(ply::ErrorKind::Config, "perft depth must be >= 0");
    *out_nodes = board->board.perft(depth);
    return PLY_OK;
  });
}

/* ---- models ------------------------------------------------------------ */

ply_status ply_model_load(const char* path, ply_model** out) {
  if (auto s = require(path && out, "path/out")) return s;
  return guarded([&] {
    *out = new ply_model{ply::nn::Model::load(path)};
    return PLY_OK;
  });
}

void ply_model_destroy(ply_model* model) { delete model; }

ply_status ply_model_info(const ply_model* model, char** out_json) {
  if (auto s = require(model && out_json, "model/out_json")) return s;
  return guarded([&] {
    const auto& spec = model->model.spec();
    json info;
    info["hash"] = model->model.hash();
    info["params"] = model->model.param_count();
    info["n_layers"] = spec.n_layers;
    info["n_heads"] = spec.n_heads;
    info["d_resid"] = spec.d_resid;
    info["d_head"] = spec.d_head;
    info["d_mlp"] = spec.d_mlp;
    info["smolgen"] = spec.smolgen.has_value();
    *out_json = dup_string(info.dump());
    return PLY_OK;
  });
}

ply_status ply_model_move_probs(const ply_model* model, const char* fen, char** out_json) {
  if (auto s = require(model && fen && out_json, "model/fen/out_json")) return s;
  return guarded([&] {
    const auto board = ply::chess::Board::from_fen(fen);
    const auto dist = model->model.move_distribution(board);

    const auto player = board.orient_to_player();
    const auto planes = ply::chess::encode_input(player, model->model.spec().layout);
    const auto result =
        model->model.forward(planes, ply::nn::HookSet{}, ply::nn::TraceLevel::None);

    std::vector<size_t> order(dist.moves.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
      return dist.moves[a].key() < dist.moves[b].key();
    });

    json out;
    out["fen"] = board.fen();
    out["best"] = dist.moves.empty() ? "" : dist.argmax().uci();
    out["wdl"] = {result.value.wdl[0], result.value.wdl[1], result.value.wdl[2]};
    out["moves"] = json::array();
    for (size_t i : order)
      out["moves"].push_back({{"uci", dist.moves[i].uci()}, {"prob", dist.probs[i]}});
    *out_json = dup_string(out.dump());
    return PLY_OK;
  });
}

ply_status ply_synthetic_model_write(const char* path, uint64_t seed, char** out_plant_json) {
  if (auto s = require(path, "path")) return s;
  return guarded([&] {
    ply::nn::PlantDescriptor plant;
    const auto model = ply::nn::build_synthetic_model(ply::nn::toy_spec(), plant, seed);
    model.save(path);
    if (out_plant_json) {
      json pj;
      pj["hash"] = model.hash();
      pj["clean_fen"] = plant.clean_fen;
      pj["corrupted_fen"] = plant.corrupted_fen;
      pj["best_move"] = plant.best_move.uci();
      pj["fallback_move"] = plant.fallback_move.uci();
      pj["carrier"] = plant.carrier.name();
      pj["readout"] = plant.readout.name();
      pj["sink"] = plant.sink.name();
      pj["copy_head"] = {{"layer", plant.layer + 1}, {"head", plant.head + 1}};
      pj["knight_head"] = {{"layer", plant.knight_layer + 1},
                           {"head", plant.knight_head + 1}};
      *out_plant_json = dup_string(pj.dump());
    }
    return PLY_OK;
  });
}

/* ---- analysis commands -------------------------------------------------- */

const char* ply_commands(void) {
  static const std::string joined = [] {
    std::string s;
    for (const auto& name : ply::run::command_names()) {
      if (!s.empty()) s += '\n';
      s += name;
    }
    return s;
  }();
  return joined.c_str();
}

ply_status ply_run_command(const char* command, const char* config_json, int* out_exit_code,
                           char** out_json) {
  if (auto s = require(command && config_json && out_json, "command/config_json/out_json"))
    return s;
  return guarded([&] {
    const auto cfg = ply::run::RunConfig::from_json(config_json);
    const auto result = ply::run::run_command(command, cfg);
    if (out_exit_code) *out_exit_code = result.exit_code;
    *out_json = dup_string(result.summary_json);
    return PLY_OK;
  });
}

}  // extern "C"
