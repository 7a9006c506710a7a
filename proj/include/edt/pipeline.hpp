#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "edt/augmenter.hpp"
#include "edt/backend.hpp"
#include "edt/corpus.hpp"
#include "edt/encoder.hpp"
#include "edt/evaluator.hpp"
#include "edt/gateway.hpp"
#include "edt/profiler.hpp"
#include "edt/trainer.hpp"

namespace edt {

// One ablation switch per variant; `full` is the complete system.
enum class Variant {
  full,           // everything on
  no_aug,         // sequences pass through untouched, no synthetic items
  no_dft,         // skip domain fine-tuning, evaluate the pretrained model
  no_profiling,   // skip profiling, train with alignment weight zero
  no_filter,      // keep every generated candidate
  no_insert,      // survivors appended at the sequence tail, not anchored
  random_insert,  // survivors placed at seeded random positions
  no_sra,         // one naive summary of the whole history per user
};

Variant variant_from_string(const std::string& name);  // UsageError on unknown
const std::string& variant_name(Variant v);
const std::vector<std::string>& variant_names();

// Every knob of every command, mirroring the flat key=value config file.
// Field names match the config keys with '-' replaced by '_'.
struct RunConfig {
  // paths
  std::string out_dir = "out";
  std::string cache_dir;  // empty: in-memory response cache only
  std::string catalog_path;       // ingest source; empty means synthetic
  std::string interactions_path;  // ingest source
  // backend
  std::string backend = "mock";  // "mock" or "http"
  uint64_t mock_seed = 1;
  int mock_dim = 256;
  std::string base_url;
  std::string chat_model;
  std::string embed_model;
  std::string api_key_env = "EDT_API_KEY";
  // synthetic corpus
  int synth_users = 200;
  int synth_items = 80;  // per domain
  double synth_ratio = 0.9;
  uint64_t synth_seed = 1234;
  // model
  int d = 128;
  int layers = 2;
  int heads = 2;
  int max_len = 50;
  double dropout = 0.2;
  int domain_hidden = 64;
  // augmenter
  int rep_clusters = 10;
  int gen_budget = 5;
  int rank_cutoff = 10;
  double tau_f = 0.90;
  uint64_t aug_kmeans_seed = 7;
  uint64_t insert_seed = 999;
  // profiler
  int profile_clusters = 10;
  uint64_t profile_seed = 5150;
  // training
  double alpha = 0.5;
  double tau_c = 0.5;
  double lr_pretrain = 0.001;
  double lr_finetune = 1e-5;
  int batch = 512;
  int epochs_pretrain = 100;
  int epochs_finetune = 50;
  int patience = 10;
  // evaluation
  std::string eval_mode = "full";  // "full" or "sampled"
  int eval_negatives = 99;
  int cutoff = 10;
  uint64_t sample_seed = 303;
  int min_per_domain = 3;
  // run
  std::string variant = "full";
  std::string seeds = "42,44,46";
  std::string domain_a_name = "Domain-A";
  std::string domain_b_name = "Domain-B";

  std::vector<uint64_t> seed_list() const;  // UsageError on empty or junk
  Variant variant_value() const { return variant_from_string(variant); }
  DomainNames names() const { return DomainNames{domain_a_name, domain_b_name}; }
  EvalProtocol protocol() const;          // UsageError on unknown eval_mode
  ModelCfg model_cfg(int d_l) const;
};

// Parses "42,44,46"; shared by --seeds and the sweep grids.
std::vector<uint64_t> parse_uint_list(const std::string& text,
                                      const std::string& what);
std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& what);

// --- artifact layout --------------------------------------------------------

std::filesystem::path corpus_dir(const RunConfig& cfg);
std::filesystem::path variant_dir(const RunConfig& cfg, Variant v);
std::filesystem::path run_dir(const RunConfig& cfg, Variant v, uint64_t seed);

// Backend plus the gateway wrapping it, with matched lifetimes.
struct BackendHandle {
  std::unique_ptr<Backend> backend;
  std::unique_ptr<Gateway> gateway;
};
BackendHandle open_backend(const RunConfig& cfg);

// --- commands ---------------------------------------------------------------
// Each command reads its inputs from the artifact tree and writes its outputs
// back, so a pipeline run and the equivalent command sequence are
// interchangeable. Missing upstream artifacts raise DataError naming the
// command that produces them.

void run_synth(const RunConfig& cfg);
void run_ingest(const RunConfig& cfg);
void run_embed(const RunConfig& cfg);
void run_augment(const RunConfig& cfg);
void run_profile(const RunConfig& cfg);
void run_pretrain(const RunConfig& cfg);
void run_finetune(const RunConfig& cfg);
void run_evaluate(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

// End to end for the configured variant over all seeds; creates the corpus if
// none exists yet. Returns the seed-averaged report.
EvalReport run_pipeline(const RunConfig& cfg);

// Grid over alignment weights, filter thresholds and profile cluster counts;
// empty lists fall back to the single configured value. Each grid point runs
// the full pipeline into its own subtree and contributes one summary row.
void run_sweep(const RunConfig& cfg, const std::vector<double>& alphas,
               const std::vector<double>& taus, const std::vector<int>& clusters);

}  // namespace edt
