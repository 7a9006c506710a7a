#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "edt/common.hpp"
#include "edt/corpus.hpp"

namespace edt {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Two affine layers, no nonlinearity: y = W_up (W_down x + b_down) + b_up.
// The global and profile adapters map d_l -> d_l/2 -> d; the per-domain
// adapters map d -> domain_hidden -> d.
struct AdapterParams {
  Mat w_down;  // d_hidden x d_in
  Vec b_down;  // d_hidden
  Mat w_up;    // d_out x d_hidden
  Vec b_up;    // d_out

  int d_in() const { return static_cast<int>(w_down.cols()); }
  int d_hidden() const { return static_cast<int>(w_down.rows()); }
  int d_out() const { return static_cast<int>(w_up.rows()); }
};

// All-zero adapter with the given shape (gradient accumulators, tests).
AdapterParams zero_adapter(int d_in, int d_hidden, int d_out);

// Small gaussian weights, zero biases.
AdapterParams init_adapter(int d_in, int d_hidden, int d_out, uint64_t& rng,
                           double scale = 0.02);

// Domain-adapter start: small w_down, zero w_up and biases, so the adapter
// output is exactly zero and the residual path alone carries the signal.
AdapterParams init_domain_adapter(int d, int d_hidden, uint64_t& rng);

Vec adapt(const Vec& e, const AdapterParams& p);
// Column-wise batch variant: (d_in x n) -> (d_out x n).
Mat adapt_cols(const Mat& e, const AdapterParams& p);
// Accumulates parameter gradients for y = adapt_cols(e, p) given dL/dy.
// Returns dL/de when de is non-null.
void adapt_cols_backward(const Mat& e, const AdapterParams& p, const Mat& dy,
                         AdapterParams& grads, Mat* de = nullptr);

struct BackboneConfig {
  int d = 128;
  int layers = 2;
  int heads = 2;
  int max_len = 50;
  double dropout = 0.2;
};

struct LayerParams {
  Mat wq, wk, wv, wo;      // d x d
  Vec bq, bk, bv, bo;      // d
  Vec ln1_gamma, ln1_beta; // attention pre-norm
  Mat w1;                  // d x d feed-forward in
  Vec b1;
  Mat w2;                  // d x d feed-forward out
  Vec b2;
  Vec ln2_gamma, ln2_beta; // feed-forward pre-norm
};

struct BackboneParams {
  BackboneConfig cfg;
  Mat pos;  // d x max_len learned positions
  std::vector<LayerParams> layers;
  Vec lnf_gamma, lnf_beta;  // final norm
  bool frozen = false;
};

BackboneParams init_backbone(const BackboneConfig& cfg, uint64_t seed);
BackboneParams zeros_like(const BackboneParams& p);

// Inverted-dropout control for training passes. Masks are drawn from the
// stream during the forward pass and replayed by the backward pass.
struct Dropout {
  double rate = 0.0;
  uint64_t rng = 0;
  bool enabled() const { return rate > 0.0; }
};

struct LayerNormCache {
  Mat xhat;   // d x t normalized input
  Vec sigma;  // t per-column std
};

struct LayerCache {
  Mat x;  // layer input
  LayerNormCache ln1;
  Mat a_in, q, k, v;
  std::vector<Mat> probs;  // per-head t x t attention rows
  Mat concat;              // merged head outputs
  Mat attn_mask;           // dropout mask (empty when inference)
  Mat x1;                  // after attention residual
  LayerNormCache ln2;
  Mat f_in, h1;
  Mat ffn_mask;
};

struct ForwardCache {
  Mat input_mask;
  Mat x0;  // input after positions and dropout
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  Mat x_last;  // input of the final norm
};

// Causal pre-norm self-attention encoder. Input is the projected item
// sequence, one column per position, already truncated to max_len. Returns
// the hidden state at every position; column t sees only columns <= t.
// Pass cache/drop during training; both default off for inference.
Mat backbone_forward(const Mat& x, const BackboneParams& p,
                     ForwardCache* cache = nullptr, Dropout* drop = nullptr);

// Backpropagates dL/dH through a cached forward pass. Parameter gradients
// accumulate into grads (pos/layer/final-norm shapes must match p); returns
// dL/dx for the projected input so item-adapter gradients can follow.
Mat backbone_backward(const Mat& dh, const BackboneParams& p,
                      const ForwardCache& cache, BackboneParams& grads);

// Final-position hidden state of the sequence; keeps the most recent max_len
// items when the sequence is longer. Empty input is an error.
Vec encode(const std::vector<Vec>& projected, const BackboneParams& p);

// Final-position hidden of a single-domain sequence under a frozen backbone,
// then the domain adapter: u = h + A(h), or u = A(h) when residual is off.
// Rejects an unfrozen backbone.
Vec domain_encode(const std::vector<Vec>& projected, const BackboneParams& p,
                  const AdapterParams& adapter, bool residual = true);

// Domain-thread view of an item's projected embedding, same map as above.
Vec domain_item(const Vec& item_proj, const AdapterParams& adapter,
                bool residual = true);

double score_global(const Vec& item_proj, const Vec& u);

// Per-user scoring state for one domain thread.
struct DomainThread {
  Domain domain = Domain::A;
  Vec u_global;
  bool has_domain = false;  // false when the user has no history in `domain`
  Vec u_domain;
};

// Domain dot product plus global dot product; falls back to the global term
// alone when the thread has no domain representation. The item must belong
// to the thread's domain.
double score_combined(const Vec& item_global, const Vec& item_domain,
                      Domain item_domain_tag, const DomainThread& thread);

struct ModelCfg {
  int d_l = 256;
  int d = 128;
  int layers = 2;
  int heads = 2;
  int max_len = 50;
  double dropout = 0.2;
  int domain_hidden = 64;
  bool residual_domain = true;    // u = h + A(h) instead of the bare A(h)
  bool domain_item_adapter = true;  // domain score uses A_X(e); off: raw e
};

// Full trainable state: shared backbone, the d_l -> d item adapter, the
// profile-text adapter, and one adapter per domain.
struct ModelState {
  ModelCfg cfg;
  uint64_t seed = 0;
  BackboneParams backbone;
  AdapterParams global_adapter;
  AdapterParams profile_adapter;
  AdapterParams domain_a;
  AdapterParams domain_b;

  const AdapterParams& domain_adapter(Domain d) const {
    return d == Domain::A ? domain_a : domain_b;
  }
  AdapterParams& domain_adapter(Domain d) {
    return d == Domain::A ? domain_a : domain_b;
  }
};

ModelState make_model(const ModelCfg& cfg, uint64_t seed);
ModelState zeros_like(const ModelState& m);

// Named view over one flat tensor; used for the optimizer, finite-difference
// checks, checkpoints, and freeze comparisons. Order is fixed.
struct ParamView {
  std::string name;
  double* data;
  size_t size;
};

std::vector<ParamView> param_views(AdapterParams& p, const std::string& prefix);
std::vector<ParamView> param_views(BackboneParams& p);
std::vector<ParamView> param_views(ModelState& m);

// Checkpoints are a JSON manifest (architecture, freeze flag, seed, tensor
// table) plus named tensors as little-endian float32 in one binary file.
void save_checkpoint(const ModelState& m, const std::filesystem::path& dir,
                     const std::string& tag);
ModelState load_checkpoint(const std::filesystem::path& dir,
                           const std::string& tag);

}  // namespace edt
