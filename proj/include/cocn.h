/* C interface to the compressed convolution network library.
 *
 * Every operation returns a status code; on failure cocn_last_error() holds
 * a message for the calling thread. Operations that produce results expose
 * them as a JSON string through cocn_last_report() in addition to any files
 * they write. Handles are opaque and must be released with the matching
 * close function.
 */
#ifndef COCN_H
#define COCN_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  COCN_OK = 0,          /* success */
  COCN_ERR_INPUT = 1,   /* invalid configuration, arguments, or data files */
  COCN_ERR_RUNTIME = 2  /* execution failure (shape conflicts, I/O, OOM) */
};

typedef struct cocn_dataset cocn_dataset;
typedef struct cocn_model cocn_model;

/* Message from the calling thread's most recent failed call; empty string
 * when the last call succeeded. Valid until the next library call on the
 * same thread. */
const char* cocn_last_error(void);

/* JSON result of the calling thread's most recent report-producing call
 * (train, evaluate, isomorphism test, reconstruct, gradcheck, bench);
 * empty string when none. Same lifetime rule as cocn_last_error. */
const char* cocn_last_report(void);

/* ---------------------------------------------------------------- datasets
 * `path` may be a TU-style directory, a directory of edge-list files, a
 * graph6 file, or a single edge-list file. */
int cocn_dataset_open(const char* path, cocn_dataset** out);
int cocn_dataset_info(const cocn_dataset* ds, int* graph_count,
                      int* num_classes, int* feature_dim);
void cocn_dataset_close(cocn_dataset* ds);

/* ------------------------------------------------------------------ models
 * config_json holds snake_case model fields (variant, task, in_features,
 * num_classes, heads, l1, l2, kernel_sizes, hidden, tau, ...). */
int cocn_model_new(const char* config_json, uint64_t seed, cocn_model** out);
int cocn_model_open(const char* checkpoint_path, cocn_model** out);
int cocn_model_save(const cocn_model* model, const char* checkpoint_path);
int cocn_model_param_count(const cocn_model* model, long* out);
void cocn_model_close(cocn_model* model);

/* -------------------------------------------------------------- operations */

/* k-fold cross-validation. config_json is one flat object holding both the
 * model fields and the training fields (lr, weight_decay, max_epochs,
 * early_stop_patience, batch_size, seed, folds). Unspecified in_features,
 * num_classes, and task are taken from the dataset. Writes metrics.json,
 * folds.csv, and model.ckpt (best fold) under out_dir; the metrics JSON is
 * also available via cocn_last_report. */
int cocn_train(const char* config_json, const cocn_dataset* ds,
               const char* out_dir);

/* Loss/accuracy (and AUC when binary) of a model over every graph in the
 * dataset; results via cocn_last_report. */
int cocn_evaluate(const cocn_model* model, const cocn_dataset* ds);

/* All-pairs isomorphism screen over the dataset's graphs with randomly
 * initialized seeded weights: a pair counts as undistinguished only when its
 * pooled embeddings stay closer than epsilon under every seed. config_json
 * may be empty/NULL for defaults; implicit position mode is required.
 * seeds_csv like "0,1,2,3,4" (NULL for that default). The count is stored in
 * *undistinguished and reported via cocn_last_report. */
int cocn_isomorphism_test(const char* config_json, const cocn_dataset* ds,
                          double epsilon, const char* seeds_csv,
                          int* undistinguished);

/* Coordinate-reconstruction autoencoder through the permutation module.
 * graph_spec is "ring:<n>", "grid:<rows>x<cols>", or a dataset path whose
 * first graph carries coordinate features. taus_csv lists relaxation factors
 * ("10,0.1"); hard!=0 uses the exact ranked permutation instead. Writes
 * mse.csv plus one recovered_tau<tau>.csv per factor under out_dir. */
int cocn_reconstruct(const char* graph_spec, const char* train_json,
                     const char* taus_csv, int hard, const char* out_dir);

/* Finite-difference checks of all differentiable primitives; per-op maximum
 * relative errors via cocn_last_report. */
int cocn_gradcheck(uint64_t seed);

/* Wall-clock scaling benchmark on random graphs of the given average degree.
 * variants_csv from {vanilla, expanded, sparse, segment}; sizes_csv like
 * "100,1000". Writes timings.csv under out_dir. */
int cocn_bench(const char* variants_csv, const char* sizes_csv,
               double avg_degree, uint64_t seed, const char* out_dir);

/* Permutation heatmaps (ahat.pgm, pxxp.pgm) for the first graph of the
 * dataset at relaxation tau and smoothness t, under seeded random weights. */
int cocn_permviz(const char* data_path, double tau, int smoothness_t,
                 uint64_t seed, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* COCN_H */
