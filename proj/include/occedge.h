/*
 * occedge - occlusion-edge detection in RGB-D frames with a small CNN.
 *
 * C API over the core library: opaque handles, integer status codes, and a
 * thread-local error message. All functions returning oe_status give OE_OK
 * (0) on success; on failure the handle outputs are untouched and
 * oe_last_error() describes the problem.
 */
#ifndef OCCEDGE_H
#define OCCEDGE_H

#include <stddef.h>

#if defined(_WIN32)
#define OE_API
#elif defined(OE_BUILD_SHARED)
#define OE_API __attribute__((visibility("default")))
#else
#define OE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum oe_status {
    OE_OK = 0,
    OE_ERR_INVALID_ARGUMENT = 1, /* bad parameter or configuration */
    OE_ERR_DATA = 2,             /* missing/unusable input data */
    OE_ERR_FORMAT = 3,           /* malformed on-disk artifact */
    OE_ERR_SHAPE = 4,            /* tensor/layer dimension mismatch */
    OE_ERR_NUMERIC = 5,          /* non-finite value detected */
    OE_ERR_INTERNAL = 6
} oe_status;

/* Library version, e.g. "0.1.0". */
OE_API const char* oe_version(void);

/* Message for the most recent failure on this thread ("" if none). */
OE_API const char* oe_last_error(void);

typedef struct oe_patchset oe_patchset;
typedef struct oe_model oe_model;
typedef struct oe_heatmap oe_heatmap;

/* ---- synthetic scenes ------------------------------------------------- */

/* Renders the JSON scene description into a TUM-layout dataset directory
 * (rgb/, depth/, rgb.txt, depth.txt, labels/). */
OE_API oe_status oe_synth_generate(const char* scene_json_path, const char* out_dir);

/* ---- ground-truth labels ---------------------------------------------- */

/* Writes one trivalent label PNG per frame of the dataset (no edge 128,
 * occlusion edge 255, invalid 0), named label_<index>.png. */
OE_API oe_status oe_label_gen(const char* dataset_dir, const char* out_dir, double tau_depth);

/* ---- patch extraction -------------------------------------------------- */

typedef struct oe_extract_params {
    int channels;                 /* 4 = RGB-D, 3 = RGB */
    int stride;                   /* extraction grid stride, pixels */
    double tau_depth;             /* depth discontinuity threshold, meters */
    double max_invalid_fraction;  /* patch pre-filter */
    double train_fraction;        /* contiguous time split */
    int balance;                  /* nonzero: subsample training negatives */
    double balance_ratio;         /* kept negatives per positive */
    unsigned long long seed;
    int threads;
} oe_extract_params;

OE_API void oe_extract_params_init(oe_extract_params* p);

OE_API oe_status oe_patchset_extract(const char* dataset_dir, const oe_extract_params* params,
                                     oe_patchset** out);
OE_API oe_status oe_patchset_open(const char* cache_path, oe_patchset** out);
OE_API oe_status oe_patchset_save(const oe_patchset* set, const char* cache_path);
OE_API void oe_patchset_close(oe_patchset* set);
OE_API oe_status oe_patchset_counts(const oe_patchset* set, int* train_count, int* test_count,
                                    int* channels);

/* ---- model ------------------------------------------------------------- */

typedef struct oe_train_params {
    int batch_size;
    double learning_rate;
    double momentum;
    double l2;
    int l2_on_output;
    int epochs;
    unsigned long long seed;
    int eval_max_patches; /* per-epoch error subsample cap; 0 = full split */
    int checkpoint_every; /* epochs between checkpoints; 0 = off */
    int threads;
} oe_train_params;

OE_API void oe_train_params_init(oe_train_params* p);

/* Fresh model with the standard architecture for 3 or 4 input channels. */
OE_API oe_status oe_model_init(int channels, unsigned long long seed, oe_model** out);

/* Trains in place on the patch set's train split, tracking per-epoch errors
 * on both splits. epoch_csv_path may be NULL. checkpoint_prefix may be NULL;
 * when set together with params->checkpoint_every, intermediate models go to
 * <prefix>.ep<N>.ocm. Normalization statistics are taken from the patch set
 * and kept with the model. */
OE_API oe_status oe_model_train(oe_model* model, const oe_patchset* set,
                                const oe_train_params* params, const char* epoch_csv_path,
                                const char* checkpoint_prefix);

/* Loads <path> plus the <path>.stats.json sidecar when present. */
OE_API oe_status oe_model_open(const char* path, oe_model** out);

/* Saves <path> and, if the model carries stats, <path>.stats.json. */
OE_API oe_status oe_model_save(const oe_model* model, const char* path);
OE_API void oe_model_close(oe_model* model);
OE_API int oe_model_channels(const oe_model* model);

/* Classifies one normalized C x 32 x 32 patch (row-major, channel planes).
 * label: 1 = occlusion, 0 = no occlusion; confidence = P(occlusion). */
OE_API oe_status oe_model_classify(const oe_model* model, const float* patch_chw, int channels,
                                   int* label, float* confidence);

/* ---- evaluation --------------------------------------------------------- */

typedef struct oe_eval_result {
    long long tp, fp, tn, fn;
    double overall_error;    /* -1 when undefined */
    double false_alarm;      /* -1 when undefined */
    double missed_detection; /* -1 when undefined */
} oe_eval_result;

/* split: 0 = test patches, 1 = train patches, 2 = both. */
OE_API oe_status oe_model_evaluate(const oe_model* model, const oe_patchset* set, int split,
                                   int threads, oe_eval_result* out);

/* ---- full-frame inference ----------------------------------------------- */

typedef struct oe_infer_params {
    int stride;           /* patch sweep stride, pixels */
    double fwhm;          /* Gaussian kernel full width at half maximum */
    int normalized;       /* nonzero: kernel-weighted mean; 0: raw sum */
    int threads;
} oe_infer_params;

OE_API void oe_infer_params_init(oe_infer_params* p);

/* Sweeps frame `frame_index` of the dataset and fuses the classifications
 * into a heatmap. The model must carry normalization stats. */
OE_API oe_status oe_infer_frame(const oe_model* model, const char* dataset_dir, int frame_index,
                                const oe_infer_params* params, oe_heatmap** out);

OE_API oe_status oe_heatmap_size(const oe_heatmap* hm, int* h, int* w);
/* Copies h*w confidence values in row-major order. */
OE_API oe_status oe_heatmap_values(const oe_heatmap* hm, float* out, size_t capacity);
OE_API int oe_heatmap_patch_count(const oe_heatmap* hm);
OE_API double oe_heatmap_wall_time(const oe_heatmap* hm);
OE_API oe_status oe_heatmap_write_gray(const oe_heatmap* hm, const char* png_path);
OE_API oe_status oe_heatmap_write_color(const oe_heatmap* hm, const char* png_path);
/* Threshold in (0,1); .pgm paths get binary PGM, anything else PNG. */
OE_API oe_status oe_heatmap_write_mask(const oe_heatmap* hm, double threshold, const char* path);
OE_API void oe_heatmap_close(oe_heatmap* hm);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* OCCEDGE_H */
