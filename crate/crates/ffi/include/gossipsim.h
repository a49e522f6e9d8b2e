#ifndef GOSSIPSIM_H
#define GOSSIPSIM_H

#include <stdbool.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_ARGUMENT = 2,
  GS_STATUS_GRAPH = 3,
  GS_STATUS_PROTOCOL = 4,
  GS_STATUS_CONFIG = 5,
  GS_STATUS_IO = 6,
  GS_STATUS_PANIC = 7,
} GsStatus;

/*
 A graph owned by the library.
 */
typedef struct GsGraph GsGraph;

/*
 The result of one protocol run.
 */
typedef struct GsOutcome GsOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *gs_last_error_message(void);

/*
 Erdős–Rényi graph `G(n, p)`. A `p` of zero or less selects
 `p = log2(n)^2 / n`.
 */
enum GsStatus gs_graph_erdos_renyi(uint32_t n, double p, uint64_t seed, struct GsGraph **out);

/*
 Configuration-model graph with `d` stubs per node, paired lazily.
 */
enum GsStatus gs_graph_configuration(uint32_t n, uint32_t d, uint64_t seed, struct GsGraph **out);

/*
 Reads an edge list: a header line `n m`, then one `u v` pair per line.
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GsStatus gs_graph_load_edge_list(const char *path, struct GsGraph **out);

/*
 Node count of `g`, or 0 for a null handle.
 */
uint32_t gs_graph_node_count(const struct GsGraph *g);

void gs_graph_free(struct GsGraph *g);

/*
 Runs `algorithm` (`push_pull`, `fast`, `memory`, `memory_twice` or
 `leader_election`) on `g` with the default constants for its size.
 Configuration-model graphs pair stubs as they are used, so `g` changes.
 `g` must be a live handle, `algorithm` a NUL-terminated string and `out`
 a valid pointer.
 */
enum GsStatus gs_run(struct GsGraph *g,
                     const char *algorithm,
                     uint64_t seed,
                     struct GsOutcome **out);

/*
 Whether every healthy node ended up knowing every healthy origin.
 */
bool gs_outcome_completed(const struct GsOutcome *o);

/*
 Steps used, 0 for a null handle.
 */
uint64_t gs_outcome_steps(const struct GsOutcome *o);

uint64_t gs_outcome_packets_sent(const struct GsOutcome *o);

uint64_t gs_outcome_channels_opened(const struct GsOutcome *o);

/*
 Packets sent divided by n.
 */
double gs_outcome_avg_packets_per_node(const struct GsOutcome *o);

/*
 The elected or given leader, -1 if there is none.
 */
int64_t gs_outcome_leader(const struct GsOutcome *o);

/*
 Writes the number of healthy nodes whose message was not gathered.
 Fails with `InvalidArgument` for algorithms that do not gather.
 `o` must be a live outcome handle and `value` a valid pointer.
 */
enum GsStatus gs_outcome_additional_lost(const struct GsOutcome *o, uint64_t *value);

/*
 The run's metrics as a JSON object.
 `o` must be a live outcome handle and `out` a valid pointer.
 */
enum GsStatus gs_outcome_to_json(const struct GsOutcome *o, char **out);

void gs_outcome_free(struct GsOutcome *o);

/*
 Releases a string returned by this library.
 `s` must be null or a string from this library, not used afterwards.
 */
void gs_string_free(char *s);

/*
 Parses and validates a config file; on success `out` receives the
 resolved config text.
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GsStatus gs_validate_config(const char *path, char **out);

/*
 Runs an experiment config and writes its CSV and JSON files to
 `out_dir`. `jobs` of 0 uses one thread per core.
 `config_path` and `out_dir` must be NUL-terminated strings.
 */
enum GsStatus gs_run_experiment(const char *config_path,
                                const char *out_dir,
                                uint32_t jobs,
                                bool emit_plotdata);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOSSIPSIM_H */
