/* advkit C API: adversarial-robustness toolkit for EEG epoch classifiers.
 *
 * Every entry point returns a status code; on failure the thread-local
 * message from advkit_last_error() describes what went wrong. Objects are
 * opaque handles freed with their matching *_free function. Strings returned
 * through char** are heap-allocated; release them with advkit_string_free.
 */
#ifndef ADVKIT_H
#define ADVKIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum advkit_status {
    ADVKIT_OK = 0,
    ADVKIT_ERR_INVALID_ARGUMENT = 1,
    ADVKIT_ERR_IO = 2,
    ADVKIT_ERR_RUNTIME = 3
} advkit_status;

typedef struct advkit_dataset advkit_dataset;
typedef struct advkit_model advkit_model;
typedef struct advkit_attack_result advkit_attack_result;

const char* advkit_version(void);
const char* advkit_last_error(void);
void advkit_string_free(char* s);

/* --- datasets ----------------------------------------------------------- */

/* spec_json: {"classes":2,"n":2000,"channels":8,"samples":128,"fs":128,
 *             "template_snr_db":0,"subjects":8,"seed":7} (all optional)   */
advkit_status advkit_dataset_synth(const char* spec_json, advkit_dataset** out);
advkit_status advkit_dataset_read(const char* path, advkit_dataset** out);
advkit_status advkit_dataset_write(const advkit_dataset* set, const char* path);
/* {"n":..,"channels":..,"samples":..,"fs":..,"classes":..,"subjects":..}  */
advkit_status advkit_dataset_info(const advkit_dataset* set, char** json_out);
/* plan_json: {"kind":"within|loso|mixed|groupab","train_frac":0.8,
 *             "val_frac":0.25,"group_b_subjects":1}
 * out: {"folds":[{"train":[...],"val":[...],"test":[...],"attacker":[...]}]} */
advkit_status advkit_dataset_split(const advkit_dataset* set, const char* plan_json,
                                   uint64_t seed, char** folds_json_out);
advkit_status advkit_dataset_select(const advkit_dataset* set, const int64_t* indices,
                                    size_t count, advkit_dataset** out);
void advkit_dataset_free(advkit_dataset* set);

/* --- models --------------------------------------------------------------*/

/* arch_json: {"family":"eegnet|deepcnn|shallowcnn|spectrocnn","channels":8,
 *             "samples":128,"classes":2,"fs":128}                          */
advkit_status advkit_model_build(const char* arch_json, uint64_t seed, advkit_model** out);
advkit_status advkit_model_load(const char* dir, advkit_model** out);
advkit_status advkit_model_save(const advkit_model* model, const char* dir);
/* config_json: {"learning_rate":1e-3,"batch_size":32,"max_epochs":100,
 *               "patience":10,"seed":0,"class_weighting":true}
 * history_csv_out (optional): epoch,train_loss,val_loss,val_rca,val_bca   */
advkit_status advkit_model_train(advkit_model* model, const advkit_dataset* train_set,
                                 const advkit_dataset* val_set, const char* config_json,
                                 char** history_csv_out);
advkit_status advkit_model_evaluate(const advkit_model* model, const advkit_dataset* set,
                                    char** metrics_json_out);
/* labels_out must hold n entries. */
advkit_status advkit_model_predict(const advkit_model* model, const advkit_dataset* set,
                                   int32_t* labels_out);
void advkit_model_free(advkit_model* model);

/* --- attacks --------------------------------------------------------------*/

/* attack_json: {"kind":"white|gray|black|noise|fgsm","epsilon":0.1,
 *               "substitute":"deepcnn","lambda":0.5,"iterations":2,
 *               "seed":0,"query_budget":0,
 *               "train":{...advkit_model_train config...}}
 * aux: gray box -> the target's training data; black box -> attacker seed
 * epochs; others -> NULL.                                                  */
advkit_status advkit_attack_run(const advkit_model* target, const advkit_dataset* x,
                                const advkit_dataset* aux, const char* attack_json,
                                advkit_attack_result** out);
advkit_status advkit_attack_result_dataset(const advkit_attack_result* result,
                                           advkit_dataset** out);
advkit_status advkit_attack_result_metrics(const advkit_attack_result* result, char** json_out);
void advkit_attack_result_free(advkit_attack_result* result);

/* --- verification and experiments -----------------------------------------*/

/* spec_json: {"arch":"all|eegnet|deepcnn|shallowcnn|spectrocnn|layers",
 *             "channels":8,"samples":64,"classes":2,"seed":0}
 * Reports per-check max relative gradient error against central finite
 * differences; "pass" is true when every check met its tolerance.          */
advkit_status advkit_gradcheck(const char* spec_json, char** report_json_out);

/* config_json: see README (dataset, architectures, split, train, attacks,
 * epsilons, seed). Writes report.csv + manifest.json + artifacts under
 * out_dir and returns the report CSV.                                      */
advkit_status advkit_run_experiment(const char* config_json, const char* out_dir,
                                    char** report_csv_out);

/* Recompute all metrics of a finished run from its artifacts (1e-6).       */
advkit_status advkit_report_validate(const char* run_dir, char** report_out);

#ifdef __cplusplus
}
#endif

#endif /* ADVKIT_H */
