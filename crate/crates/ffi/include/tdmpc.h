#ifndef TDMPC_H
#define TDMPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an API call.
 */
typedef enum TdmpcStatus {
  TdmpcOk = 0,
  /**
   * Malformed input: bad JSON, wrong dimensions, unknown fields.
   */
  TdmpcInvalid = 1,
  /**
   * The library refused the problem (uncertifiable budget, infeasible
   * certificate, unstabilizable plant, ...).
   */
  TdmpcRefused = 2,
  /**
   * A numerical routine failed (ill-conditioning, divergence, stall).
   */
  TdmpcNumerical = 3,
  /**
   * A null handle or output pointer was passed.
   */
  TdmpcNullArg = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  TdmpcPanic = 5,
} TdmpcStatus;

typedef struct TdmpcScenario TdmpcScenario;

typedef struct TdmpcTrajectory TdmpcTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call from the same thread.
 */
const char *tdmpc_last_error(void);

/**
 * Builds a scenario from a JSON document (same schema as the CLI configs).
 * On success `*out` owns the handle; release it with `tdmpc_scenario_free`.
 */
enum TdmpcStatus tdmpc_scenario_from_json(const char *json, struct TdmpcScenario **out);

void tdmpc_scenario_free(struct TdmpcScenario *scn);

size_t tdmpc_scenario_state_dim(const struct TdmpcScenario *scn);

size_t tdmpc_scenario_input_dim(const struct TdmpcScenario *scn);

size_t tdmpc_scenario_phase_count(const struct TdmpcScenario *scn);

/**
 * True when some declared budget sits at or below its certified threshold
 * (the scenario opted in via allow_uncertified).
 */
bool tdmpc_scenario_tainted(const struct TdmpcScenario *scn);

/**
 * Certificate report as a JSON string; release with `tdmpc_string_free`.
 */
enum TdmpcStatus tdmpc_certify_json(const struct TdmpcScenario *scn, char **out);

void tdmpc_string_free(char *s);

/**
 * Runs the scenario's closed loop. On success `*out` owns the trajectory.
 */
enum TdmpcStatus tdmpc_simulate(const struct TdmpcScenario *scn, struct TdmpcTrajectory **out);

void tdmpc_trajectory_free(struct TdmpcTrajectory *traj);

/**
 * Number of closed-loop steps T; states run 0..=T.
 */
size_t tdmpc_trajectory_steps(const struct TdmpcTrajectory *traj);

/**
 * Copies state x_k (k in 0..=T) into `buf`, which must hold `len` doubles
 * matching the state dimension.
 */
enum TdmpcStatus tdmpc_trajectory_state(const struct TdmpcTrajectory *traj,
                                        size_t k,
                                        double *buf,
                                        size_t len);

/**
 * Copies input u_k (k in 0..T) into `buf` of `len` doubles.
 */
enum TdmpcStatus tdmpc_trajectory_input(const struct TdmpcTrajectory *traj,
                                        size_t k,
                                        double *buf,
                                        size_t len);

/**
 * J_T of the run; NaN on a null handle.
 */
double tdmpc_trajectory_total_cost(const struct TdmpcTrajectory *traj);

uint64_t tdmpc_trajectory_total_flops(const struct TdmpcTrajectory *traj);

/**
 * Run summary as JSON (same content as the CLI's summary.json, without a
 * benchmark comparison); release with `tdmpc_string_free`.
 */
enum TdmpcStatus tdmpc_summary_json(const struct TdmpcScenario *scn,
                                    const struct TdmpcTrajectory *traj,
                                    char **out);

/**
 * Per-step trajectory table as CSV; release with `tdmpc_string_free`.
 */
enum TdmpcStatus tdmpc_trajectory_csv(const struct TdmpcScenario *scn,
                                      const struct TdmpcTrajectory *traj,
                                      char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDMPC_H */
