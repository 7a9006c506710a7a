#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "edt/corpus.hpp"
#include "edt/encoder.hpp"

namespace edt {

struct PretrainConfig {
  double lr = 0.001;
  int batch_size = 512;
  double alpha = 0.5;        // weight of the alignment term
  double temperature = 0.5;  // contrastive temperature
  bool standard_infonce = false;  // include the positive pair in the denominator
  int epochs = 100;
  int patience = 10;
  uint64_t seed = 42;
};

struct FinetuneConfig {
  double lr = 1e-5;
  int batch_size = 512;
  int epochs = 50;
  int patience = 10;
  uint64_t seed = 42;
};

struct LossReport {
  int epoch = 0;
  double l_pre = 0.0;    // ranking loss per valid position
  double l_align = 0.0;  // alignment loss summed over batches
  double l_a = 0.0;      // domain-A ranking loss per valid position
  double l_b = 0.0;
  double total = 0.0;    // raw objective sum for the epoch
  double val_metric = 0.0;
  size_t valid_positions = 0;
};

void write_loss_reports(const std::filesystem::path& path,
                        const std::vector<LossReport>& reports);

// --- losses -----------------------------------------------------------------

struct BprResult {
  double sum = 0.0;   // as summed in the objective
  double mean = 0.0;  // per valid position, for reporting
  size_t valid = 0;
};

// Pairwise ranking loss -sum log sigmoid(pos - neg) over mask==1 entries,
// computed through softplus for stability. Non-finite valid scores are
// rejected.
BprResult bpr_loss(const Mat& pos, const Mat& neg, const Mat& mask);

// d(sum)/d(pos); the matching negative-score gradient is its negation.
Mat bpr_backward(const Mat& pos, const Mat& neg, const Mat& mask);

// Two-sided contrastive alignment between user and profile batches (one
// vector per column). The positive pair is excluded from the denominator
// unless standard_infonce is set. B >= 2 and tau > 0 required.
double align_loss(const Mat& u, const Mat& p, double tau,
                  bool standard_infonce = false);
void align_backward(const Mat& u, const Mat& p, double tau,
                    bool standard_infonce, Mat& du, Mat& dp);

// --- sampling ---------------------------------------------------------------

// Uniform draw from pool minus exclude. Throws DataError when nothing is
// eligible. The pool must hold real (non-synthetic) item indices.
int negative_sample(const std::vector<int>& pool,
                    const std::vector<int>& exclude, uint64_t& rng);

// All real item indices across both domains, ascending.
std::vector<int> real_pool(const Catalog& catalog);

// --- optimizer --------------------------------------------------------------

struct Adam {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<ParamView>& views);
  void step(const std::vector<ParamView>& params,
            const std::vector<ParamView>& grads);
};

// --- pre-training -----------------------------------------------------------

struct PretrainData {
  Mat e_llm;  // d_l x catalog size, frozen text embeddings
  std::vector<std::string> user_ids;            // store order
  std::vector<std::vector<int>> train_seqs;     // item indices per user
  Mat profile_e;                                // d_l x users, zero col if absent
  std::vector<uint8_t> has_profile;
  std::vector<int> mixed_pool;                  // real items, both domains
};

PretrainData build_pretrain_data(const SequenceStore& store,
                                 const Catalog& catalog, const Mat& e_llm,
                                 const std::map<std::string, Vec>& profiles);

// Position-aligned padded batch; -1 marks padding, mask selects valid cells.
struct TrainBatch {
  std::vector<int> users;  // store indices, column order
  Eigen::MatrixXi inputs;
  Eigen::MatrixXi positives;
  Eigen::MatrixXi negatives;
  Mat mask;
};

TrainBatch assemble_batch(const PretrainData& data,
                          const std::vector<int>& users, int max_len,
                          uint64_t& rng);

struct StepResult {
  double bpr_sum = 0.0;
  size_t valid = 0;
  double align = 0.0;
  double total = 0.0;  // bpr_sum + alpha * align
};

// One optimization step's loss and gradients (grads nullable for loss-only
// evaluation, as finite-difference checks need). Dropout optional.
StepResult pretrain_step(ModelState& model, const PretrainData& data,
                         const TrainBatch& batch, const PretrainConfig& cfg,
                         ModelState* grads, Dropout* drop);

using ValidateFn = std::function<double(const ModelState&)>;

// Joint optimization of backbone, item adapter, and profile adapter. Keeps
// the epoch with the best validation metric (last epoch when no callback),
// stops after `patience` epochs without improvement, writes per-epoch
// reports, and saves tag `pretrain-best` under checkpoint_dir when given.
ModelState pretrain(const ModelState& init, const PretrainData& data,
                    const PretrainConfig& cfg, const ValidateFn& validate,
                    std::vector<LossReport>* reports,
                    const std::filesystem::path& checkpoint_dir = {},
                    const std::filesystem::path& log_path = {});

// --- fine-tuning ------------------------------------------------------------

struct FinetuneData {
  Mat proj;  // d x catalog, items through the frozen global adapter
  std::vector<int> pool_a, pool_b;
  struct Side {
    std::vector<int> user_index;
    std::vector<Mat> hidden;    // d x T frozen domain-thread hiddens
    std::vector<std::vector<int>> target;
    std::vector<Mat> gctx;      // d x T frozen mixed-context hiddens
  };
  Side a, b;
  const Side& side(Domain d) const { return d == Domain::A ? a : b; }
};

// Precomputes everything the frozen backbone can provide: projected catalog,
// per-user domain-thread hiddens, and the mixed-sequence context hidden
// preceding each target (zero when the context falls outside the window).
FinetuneData build_finetune_data(const SequenceStore& store,
                                 const Catalog& catalog, const Mat& e_llm,
                                 const ModelState& frozen);

struct FinetuneBatch {
  Domain domain = Domain::A;
  std::vector<int> examples;                // indices into the side arrays
  std::vector<std::vector<int>> negatives;  // aligned with examples/positions
};

StepResult finetune_step(ModelState& model, const FinetuneData& data,
                         const FinetuneBatch& batch, ModelState* grads);

// Optimizes the two domain adapters against the frozen backbone and frozen
// item adapter; every other tensor is left bit-identical. Saves tag
// `finetune-best` under checkpoint_dir when given.
ModelState finetune(const ModelState& pretrained, const SequenceStore& store,
                    const Catalog& catalog, const Mat& e_llm,
                    const FinetuneConfig& cfg, const ValidateFn& validate,
                    std::vector<LossReport>* reports,
                    const std::filesystem::path& checkpoint_dir = {},
                    const std::filesystem::path& log_path = {});

}  // namespace edt
