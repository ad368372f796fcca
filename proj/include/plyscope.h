/* plyscope C API: chess boards, policy-transformer models, and the analysis
 * command runner behind one stable extern-C surface.
 *
 * Conventions:
 *  - Every fallible call returns ply_status; PLY_OK is 0.
 *  - On failure, ply_last_error() returns a message for the most recent
 *    failure on the calling thread.
 *  - Strings returned through char** out-parameters are heap-allocated and
 *    owned by the caller; release them with ply_free(). They are only
 *    written on PLY_OK.
 *  - Handles are destroyed with their ply_*_destroy function; destroy and
 *    ply_free accept NULL.
 */
#ifndef PLYSCOPE_H
#define PLYSCOPE_H

#include <stdint.h>

#if defined(_WIN32)
#define PLY_API __declspec(dllexport)
#else
#define PLY_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ply_status {
  PLY_OK = 0,
  PLY_ERR_PARSE = 1,    /* malformed input text (FEN, UCI, CSV, JSON) */
  PLY_ERR_ILLEGAL = 2,  /* violated domain precondition */
  PLY_ERR_IO = 3,       /* filesystem or stream failure */
  PLY_ERR_SHAPE = 4,    /* tensor or layout shape mismatch */
  PLY_ERR_NUMERIC = 5,  /* NaN/Inf or other numeric fault */
  PLY_ERR_CONFIG = 6,   /* bad or missing run configuration */
  PLY_ERR_INTERNAL = 7
} ply_status;

typedef struct ply_board ply_board;
typedef struct ply_model ply_model;

/* Library version, e.g. "0.1.0". Static storage; do not free. */
PLY_API const char* ply_version(void);

/* Message for the most recent failure on this thread (empty string if none).
 * Static thread-local storage; do not free. Overwritten by the next failure. */
PLY_API const char* ply_last_error(void);

/* Frees any buffer returned through a char** out-parameter of this API. */
PLY_API void ply_free(void* ptr);

/* ---- boards ------------------------------------------------------------ */

PLY_API ply_status ply_board_from_fen(const char* fen, ply_board** out);
PLY_API ply_status ply_board_start(ply_board** out);
PLY_API void ply_board_destroy(ply_board* board);

PLY_API ply_status ply_board_fen(const ply_board* board, char** out_fen);

/* Space-separated UCI moves, e.g. "e2e4 g1f3 ...". Empty string when the
 * side to move has no legal move. */
PLY_API ply_status ply_board_legal_moves(const ply_board* board, char** out_moves);

/* Applies one UCI move in place; PLY_ERR_ILLEGAL if it is not legal here. */
PLY_API ply_status ply_board_apply(ply_board* board, const char* uci);

PLY_API ply_status ply_board_perft(const ply_board* board, int depth, uint64_t* out_nodes);

/* ---- models ------------------------------------------------------------ */

PLY_API ply_status ply_model_load(const char* path, ply_model** out);
PLY_API void ply_model_destroy(ply_model* model);

/* JSON object: {"hash", "params", "n_layers", "n_heads", "d_resid", ...}. */
PLY_API ply_status ply_model_info(const ply_model* model, char** out_json);

/* Legal-move distribution for a FEN under this model. JSON object:
 * {"fen", "best", "wdl":[w,d,l], "moves":[{"uci","prob"}, ...]} with moves
 * sorted by descending probability. */
PLY_API ply_status ply_model_move_probs(const ply_model* model, const char* fen,
                                        char** out_json);

/* Writes the hand-constructed verification model to `path`. When
 * out_plant_json is non-NULL it receives the plant geometry (clean and
 * corrupted FEN, carrier/readout squares, planted layer/head 1-based,
 * best and fallback moves). */
PLY_API ply_status ply_synthetic_model_write(const char* path, uint64_t seed,
                                             char** out_plant_json);

/* ---- analysis commands -------------------------------------------------- */

/* Newline-separated names of the available commands. Static storage. */
PLY_API const char* ply_commands(void);

/* Runs one named command with a JSON config (the schema the CLI builds from
 * its flags; unknown keys are rejected). On success *out_json receives the
 * run summary. A command that completes but fails its own acceptance logic
 * (e.g. selfcheck with failing checks) reports PLY_OK with the failure
 * recorded in the summary and in *out_exit_code when given. */
PLY_API ply_status ply_run_command(const char* command, const char* config_json,
                                   int* out_exit_code, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* PLYSCOPE_H */
