/*
 * vlimb - simulator and controller for a 5-DOF wire-driven arm.
 *
 * C interface to the shared library. Every object is an opaque handle
 * created by a vlimb_*_create/load/run/start call and released by the
 * matching *_free. Functions return a vlimb_status; on failure
 * vlimb_last_error() describes the problem (thread-local, valid until the
 * next call on the same thread). Strings returned through char** belong to
 * the caller and are released with vlimb_free_string.
 *
 * Units: SI throughout (m, kg, s, rad, N, N*m, A).
 */
#ifndef VLIMB_VLIMB_H
#define VLIMB_VLIMB_H

#include <stddef.h>

#if defined(_WIN32)
#define VLIMB_API
#elif defined(VLIMB_BUILDING_LIBRARY)
#define VLIMB_API __attribute__((visibility("default")))
#else
#define VLIMB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vlimb_status {
  VLIMB_OK = 0,
  VLIMB_E_INVALID_ARGUMENT = 1, /* null pointer, unknown name, value out of range */
  VLIMB_E_IO = 2,               /* file missing, unreadable or unwritable */
  VLIMB_E_PARSE = 3,            /* malformed model, scenario, CSV or message */
  VLIMB_E_MODEL = 4,            /* model parsed but violates an invariant */
  VLIMB_E_REJECTED = 5,         /* command refused: joint limit, not stationary, ... */
  VLIMB_E_NETWORK = 6,          /* cannot bind the gateway */
  VLIMB_E_INTERNAL = 7
} vlimb_status;

typedef struct vlimb_model vlimb_model;
typedef struct vlimb_report vlimb_report;
typedef struct vlimb_gateway vlimb_gateway;

VLIMB_API const char* vlimb_version(void);
VLIMB_API const char* vlimb_status_name(vlimb_status status);
VLIMB_API const char* vlimb_last_error(void);
VLIMB_API void vlimb_free_string(char* s);

/* ---- model ------------------------------------------------------------- */

/* Built-in parameter set (identical to data/vlimb_default.json). */
VLIMB_API vlimb_status vlimb_model_default(vlimb_model** out);
/* Parses and validates a model file. */
VLIMB_API vlimb_status vlimb_model_load(const char* path, vlimb_model** out);
VLIMB_API vlimb_status vlimb_model_validate(const vlimb_model* model);
VLIMB_API vlimb_status vlimb_model_to_json(const vlimb_model* model, char** out);
VLIMB_API size_t vlimb_model_element_count(const vlimb_model* model);
VLIMB_API vlimb_status vlimb_model_element_index(const vlimb_model* model, const char* name, size_t* out);
VLIMB_API void vlimb_model_free(vlimb_model* model);

/* Motor command for a wire/belt tension on one element. Any output pointer
 * may be NULL. pulley_torque_Nm is tension times pulley radius; saturated is
 * set when the current had to be clamped to the motor limit. */
VLIMB_API vlimb_status vlimb_tension_to_current(const vlimb_model* model, size_t element, double tension_N,
                                                double* current_A, double* pulley_torque_Nm, int* saturated);

/* ---- scenarios --------------------------------------------------------- */

typedef struct vlimb_run_options {
  const char* data_dir; /* NULL: VLIMB_DATA_DIR, else the installed data */
  const char* mode;     /* NULL: the scenario's routing mode */
  int has_payload;
  double payload_kg;
  double dt;            /* s; 0 selects 1e-3 */
  int has_kp;
  double kp;            /* uniform joint stiffness, N*m/rad */
  int belt_wire_contact;
  int log_every;        /* plant steps per CSV row; 0 selects 10 */
} vlimb_run_options;

VLIMB_API void vlimb_run_options_init(vlimb_run_options* options);

/* name: "reachability", "manipulation" or "lift". A failed scenario is still
 * VLIMB_OK; check vlimb_report_passed. */
VLIMB_API vlimb_status vlimb_run_scenario(const vlimb_model* model, const char* name, const vlimb_run_options* options,
                                          vlimb_report** out);
VLIMB_API int vlimb_report_passed(const vlimb_report* report);
VLIMB_API size_t vlimb_report_criterion_count(const vlimb_report* report);
/* name and detail stay valid until the report is freed. */
VLIMB_API vlimb_status vlimb_report_criterion(const vlimb_report* report, size_t index, const char** name, int* passed,
                                              const char** detail);
VLIMB_API vlimb_status vlimb_report_metric(const vlimb_report* report, const char* key, double* value);
VLIMB_API vlimb_status vlimb_report_summary(const vlimb_report* report, char** out);
VLIMB_API vlimb_status vlimb_report_csv(const vlimb_report* report, char** out);
/* Writes <name>.csv, <name>_summary.txt and <name>_plot.py. */
VLIMB_API vlimb_status vlimb_report_write(const vlimb_report* report, const char* dir);
VLIMB_API void vlimb_report_free(vlimb_report* report);

/* Reads a scenario CSV and describes it: duration, tracking error, peak
 * tensions and currents, heights. */
VLIMB_API vlimb_status vlimb_csv_describe(const char* csv_path, double tension_cap_N, char** out);

/* ---- gateway ----------------------------------------------------------- */

typedef struct vlimb_gateway_options {
  const char* host;      /* NULL: 127.0.0.1 */
  int port;              /* TCP JSON lines; 0 picks a free port */
  int http_port;         /* 0 picks a free port; negative disables */
  const char* static_dir;
  double stream_rate_hz;
  double time_scale;
  double dt;
  const char* data_dir;
  const char* scenario;  /* NULL: home posture */
} vlimb_gateway_options;

VLIMB_API void vlimb_gateway_options_init(vlimb_gateway_options* options);
VLIMB_API vlimb_status vlimb_gateway_start(const vlimb_model* model, const vlimb_gateway_options* options,
                                           vlimb_gateway** out);
VLIMB_API int vlimb_gateway_port(const vlimb_gateway* gateway);
VLIMB_API int vlimb_gateway_http_port(const vlimb_gateway* gateway);
/* One command message (JSON text). VLIMB_E_REJECTED for a nack,
 * VLIMB_E_PARSE for a malformed message; the reply is returned either way. */
VLIMB_API vlimb_status vlimb_gateway_command(vlimb_gateway* gateway, const char* message, char** reply);
/* 1 once the gateway has shut down, 0 after timeout_s. */
VLIMB_API int vlimb_gateway_wait(vlimb_gateway* gateway, double timeout_s);
VLIMB_API void vlimb_gateway_stop(vlimb_gateway* gateway);
VLIMB_API void vlimb_gateway_free(vlimb_gateway* gateway);
/* JSON Schema of every gateway message. */
VLIMB_API vlimb_status vlimb_gateway_schema(char** out);

#ifdef __cplusplus
}
#endif

#endif /* VLIMB_VLIMB_H */
