#include "edt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace edt {

namespace {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Columns normalized to unit length; zero columns are a data fault.
Mat unit_columns(const Mat& x, const char* what) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double n = x.col(c).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw DataError(std::string("zero or non-finite ") + what +
                      " vector in alignment batch");
    out.col(c) = x.col(c) / n;
  }
  return out;
}

uint64_t substream(uint64_t seed, const char* label, uint64_t index) {
  return seed ^ fnv1a64(label) ^ (index * 0x9e3779b97f4a7c15ULL);
}

void shuffle_indices(std::vector<int>& idx, uint64_t& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = splitmix64(rng) % i;
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

void write_loss_reports(const std::filesystem::path& path,
                        const std::vector<LossReport>& reports) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log " + path.string());
  for (const auto& r : reports) {
    nlohmann::ordered_json j{{"epoch", r.epoch},
                             {"l_pre", r.l_pre},
                             {"l_align", r.l_align},
                             {"l_a", r.l_a},
                             {"l_b", r.l_b},
                             {"total", r.total},
                             {"val_metric", r.val_metric},
                             {"valid_positions", r.valid_positions}};
    out << j.dump() << "\n";
  }
}

// --- losses -----------------------------------------------------------------

BprResult bpr_loss(const Mat& pos, const Mat& neg, const Mat& mask) {
  if (pos.rows() != neg.rows() || pos.cols() != neg.cols() ||
      pos.rows() != mask.rows() || pos.cols() != mask.cols())
    throw UsageError("ranking loss shapes must agree");
  BprResult res;
  for (Eigen::Index c = 0; c < pos.cols(); ++c) {
    for (Eigen::Index r = 0; r < pos.rows(); ++r) {
      if (mask(r, c) == 0.0) continue;
      const double p = pos(r, c);
      const double n = neg(r, c);
      if (!std::isfinite(p) || !std::isfinite(n))
        throw DataError("non-finite score in ranking loss");
      res.sum += softplus(n - p);
      ++res.valid;
    }
  }
  res.mean = res.valid > 0 ? res.sum / static_cast<double>(res.valid) : 0.0;
  return res;
}

Mat bpr_backward(const Mat& pos, const Mat& neg, const Mat& mask) {
  Mat dpos = Mat::Zero(pos.rows(), pos.cols());
  for (Eigen::Index c = 0; c < pos.cols(); ++c)
    for (Eigen::Index r = 0; r < pos.rows(); ++r)
      if (mask(r, c) != 0.0) dpos(r, c) = -sigmoid(neg(r, c) - pos(r, c));
  return dpos;
}

namespace {

// Shared scaffolding for the two-sided contrastive loss. dc, when non-null,
// receives d(loss)/d(cosine matrix).
double align_from_cosines(const Mat& c, double tau, bool standard, Mat* dc) {
  const auto b = c.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  if (dc != nullptr) dc->setZero(b, b);

  // Row side: anchors u_i against profiles p_j.
  for (Eigen::Index i = 0; i < b; ++i) {
    double mx = -1e300;
    for (Eigen::Index j = 0; j < b; ++j)
      if (standard || j != i) mx = std::max(mx, c(i, j) / tau);
    double den = 0.0;
    for (Eigen::Index j = 0; j < b; ++j)
      if (standard || j != i) den += std::exp(c(i, j) / tau - mx);
    const double log_den = mx + std::log(den);
    loss += inv_b * (log_den - c(i, i) / tau);
    if (dc != nullptr) {
      (*dc)(i, i) += -inv_b / tau;
      for (Eigen::Index j = 0; j < b; ++j)
        if (standard || j != i)
          (*dc)(i, j) += inv_b / tau * std::exp(c(i, j) / tau - log_den);
    }
  }

  // Column side: anchors p_i against users u_j reads column i of c.
  for (Eigen::Index i = 0; i < b; ++i) {
    double mx = -1e300;
    for (Eigen::Index j = 0; j < b; ++j)
      if (standard || j != i) mx = std::max(mx, c(j, i) / tau);
    double den = 0.0;
    for (Eigen::Index j = 0; j < b; ++j)
      if (standard || j != i) den += std::exp(c(j, i) / tau - mx);
    const double log_den = mx + std::log(den);
    loss += inv_b * (log_den - c(i, i) / tau);
    if (dc != nullptr) {
      (*dc)(i, i) += -inv_b / tau;
      for (Eigen::Index j = 0; j < b; ++j)
        if (standard || j != i)
          (*dc)(j, i) += inv_b / tau * std::exp(c(j, i) / tau - log_den);
    }
  }
  return loss;
}

void check_align_args(const Mat& u, const Mat& p, double tau) {
  if (u.rows() != p.rows() || u.cols() != p.cols())
    throw UsageError("alignment batches must share shape");
  if (u.cols() < 2)
    throw UsageError("alignment needs a batch of at least two users");
  if (!(tau > 0.0)) throw UsageError("alignment temperature must be positive");
}

}  // namespace

double align_loss(const Mat& u, const Mat& p, double tau,
                  bool standard_infonce) {
  check_align_args(u, p, tau);
  const Mat uh = unit_columns(u, "user");
  const Mat ph = unit_columns(p, "profile");
  const Mat c = uh.transpose() * ph;
  return align_from_cosines(c, tau, standard_infonce, nullptr);
}

void align_backward(const Mat& u, const Mat& p, double tau,
                    bool standard_infonce, Mat& du, Mat& dp) {
  check_align_args(u, p, tau);
  const Mat uh = unit_columns(u, "user");
  const Mat ph = unit_columns(p, "profile");
  const Mat c = uh.transpose() * ph;
  Mat dc;
  align_from_cosines(c, tau, standard_infonce, &dc);

  const Mat duh = ph * dc.transpose();
  const Mat dph = uh * dc;
  du.setZero(u.rows(), u.cols());
  dp.setZero(p.rows(), p.cols());
  for (Eigen::Index col = 0; col < u.cols(); ++col) {
    const double nu = u.col(col).norm();
    du.col(col) =
        (duh.col(col) - uh.col(col) * uh.col(col).dot(duh.col(col))) / nu;
    const double np = p.col(col).norm();
    dp.col(col) =
        (dph.col(col) - ph.col(col) * ph.col(col).dot(dph.col(col))) / np;
  }
}

// --- sampling ---------------------------------------------------------------

int negative_sample(const std::vector<int>& pool,
                    const std::vector<int>& exclude, uint64_t& rng) {
  if (pool.empty()) throw DataError("negative sampling from an empty pool");
  auto excluded = [&](int item) {
    return std::find(exclude.begin(), exclude.end(), item) != exclude.end();
  };
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int cand = pool[splitmix64(rng) % pool.size()];
    if (!excluded(cand)) return cand;
  }
  std::vector<int> eligible;
  for (int it : pool)
    if (!excluded(it)) eligible.push_back(it);
  if (eligible.empty())
    throw DataError("no eligible negative item remains in the pool");
  return eligible[splitmix64(rng) % eligible.size()];
}

std::vector<int> real_pool(const Catalog& catalog) {
  std::vector<int> pool = catalog.items_of(Domain::A, true);
  const std::vector<int> b = catalog.items_of(Domain::B, true);
  pool.insert(pool.end(), b.begin(), b.end());
  std::sort(pool.begin(), pool.end());
  return pool;
}

// --- optimizer --------------------------------------------------------------

void Adam::init(const std::vector<ParamView>& views) {
  m.assign(views.size(), {});
  v.assign(views.size(), {});
  for (size_t i = 0; i < views.size(); ++i) {
    m[i].assign(views[i].size, 0.0);
    v[i].assign(views[i].size, 0.0);
  }
  t = 0;
}

void Adam::step(const std::vector<ParamView>& params,
                const std::vector<ParamView>& grads) {
  if (params.size() != m.size() || grads.size() != params.size())
    throw UsageError("optimizer state does not match parameter list");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].data;
    const double* g = grads[k].data;
    auto& mk = m[k];
    auto& vk = v[k];
    for (size_t i = 0; i < params[k].size; ++i) {
      mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
      vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = mk[i] / bc1;
      const double vhat = vk[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// --- pre-training -----------------------------------------------------------

PretrainData build_pretrain_data(const SequenceStore& store,
                                 const Catalog& catalog, const Mat& e_llm,
                                 const std::map<std::string, Vec>& profiles) {
  if (e_llm.cols() != catalog.size())
    throw UsageError("embedding table does not cover the catalog");
  PretrainData data;
  data.e_llm = e_llm;
  const int users = store.size();
  data.user_ids.reserve(static_cast<size_t>(users));
  data.train_seqs.resize(static_cast<size_t>(users));
  data.profile_e = Mat::Zero(e_llm.rows(), users);
  data.has_profile.assign(static_cast<size_t>(users), 0);
  for (int i = 0; i < users; ++i) {
    const auto& seq = store.user(i);
    data.user_ids.push_back(seq.user_id);
    auto& items = data.train_seqs[static_cast<size_t>(i)];
    items.reserve(seq.events.size());
    for (const auto& ev : seq.events) items.push_back(ev.item);
    const auto it = profiles.find(seq.user_id);
    if (it != profiles.end()) {
      if (it->second.size() != e_llm.rows())
        throw DataError("profile embedding width mismatch for user " +
                        seq.user_id);
      data.profile_e.col(i) = it->second;
      data.has_profile[static_cast<size_t>(i)] = 1;
    }
  }
  data.mixed_pool = real_pool(catalog);
  return data;
}

TrainBatch assemble_batch(const PretrainData& data,
                          const std::vector<int>& users, int max_len,
                          uint64_t& rng) {
  TrainBatch batch;
  batch.users = users;
  const int b = static_cast<int>(users.size());
  int t_max = 1;
  std::vector<std::vector<int>> in(static_cast<size_t>(b)),
      pos(static_cast<size_t>(b));
  for (int c = 0; c < b; ++c) {
    const auto& seq = data.train_seqs[static_cast<size_t>(users[c])];
    if (seq.size() < 2)
      throw UsageError("cannot train on a sequence with fewer than two items");
    const int pairs = static_cast<int>(seq.size()) - 1;
    const int keep = std::min(pairs, max_len);
    const int start = pairs - keep;
    for (int j = start; j < pairs; ++j) {
      in[static_cast<size_t>(c)].push_back(seq[static_cast<size_t>(j)]);
      pos[static_cast<size_t>(c)].push_back(seq[static_cast<size_t>(j) + 1]);
    }
    t_max = std::max(t_max, keep);
  }
  batch.inputs = Eigen::MatrixXi::Constant(t_max, b, -1);
  batch.positives = Eigen::MatrixXi::Constant(t_max, b, -1);
  batch.negatives = Eigen::MatrixXi::Constant(t_max, b, -1);
  batch.mask = Mat::Zero(t_max, b);
  for (int c = 0; c < b; ++c) {
    const auto& column = in[static_cast<size_t>(c)];
    for (size_t j = 0; j < column.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      batch.inputs(r, c) = column[j];
      const int target = pos[static_cast<size_t>(c)][j];
      batch.positives(r, c) = target;
      batch.negatives(r, c) = negative_sample(data.mixed_pool, {target}, rng);
      batch.mask(r, c) = 1.0;
    }
  }
  return batch;
}

StepResult pretrain_step(ModelState& model, const PretrainData& data,
                         const TrainBatch& batch, const PretrainConfig& cfg,
                         ModelState* grads, Dropout* drop) {
  const int b = static_cast<int>(batch.users.size());
  const int d = model.cfg.d;
  StepResult res;

  std::vector<int> lens(static_cast<size_t>(b), 0);
  for (int c = 0; c < b; ++c) {
    int len = 0;
    while (len < batch.mask.rows() && batch.mask(len, c) != 0.0) ++len;
    lens[static_cast<size_t>(c)] = len;
  }

  struct PerUser {
    Mat e_in, e_pos, e_neg;  // d_l slices
    Mat x, h, p, n;          // projected input, hiddens, projected targets
    ForwardCache cache;
  };
  std::vector<PerUser> work(static_cast<size_t>(b));
  Mat u_batch(d, b);

  Mat pos_scores = Mat::Zero(batch.mask.rows(), b);
  Mat neg_scores = Mat::Zero(batch.mask.rows(), b);
  const bool want_align = cfg.alpha != 0.0 && b >= 2;

  for (int c = 0; c < b; ++c) {
    auto& w = work[static_cast<size_t>(c)];
    const int t = lens[static_cast<size_t>(c)];
    w.e_in.resize(data.e_llm.rows(), t);
    w.e_pos.resize(data.e_llm.rows(), t);
    w.e_neg.resize(data.e_llm.rows(), t);
    for (int j = 0; j < t; ++j) {
      w.e_in.col(j) = data.e_llm.col(batch.inputs(j, c));
      w.e_pos.col(j) = data.e_llm.col(batch.positives(j, c));
      w.e_neg.col(j) = data.e_llm.col(batch.negatives(j, c));
    }
    w.x = adapt_cols(w.e_in, model.global_adapter);
    w.h = backbone_forward(w.x, model.backbone,
                           grads != nullptr ? &w.cache : nullptr, drop);
    w.p = adapt_cols(w.e_pos, model.global_adapter);
    w.n = adapt_cols(w.e_neg, model.global_adapter);
    for (int j = 0; j < t; ++j) {
      pos_scores(j, c) = w.h.col(j).dot(w.p.col(j));
      neg_scores(j, c) = w.h.col(j).dot(w.n.col(j));
    }
    u_batch.col(c) = w.h.col(t - 1);
  }

  const BprResult bpr = bpr_loss(pos_scores, neg_scores, batch.mask);
  res.bpr_sum = bpr.sum;
  res.valid = bpr.valid;

  Mat du_align, dp_align;
  if (want_align) {
    Mat prof(data.profile_e.rows(), b);
    for (int c = 0; c < b; ++c) {
      const int user = batch.users[static_cast<size_t>(c)];
      if (!data.has_profile[static_cast<size_t>(user)])
        throw DataError("missing profile embedding for user " +
                        data.user_ids[static_cast<size_t>(user)] +
                        "; run the profile command first or set alpha=0");
      prof.col(c) = data.profile_e.col(user);
    }
    const Mat p_tilde = adapt_cols(prof, model.profile_adapter);
    res.align = align_loss(u_batch, p_tilde, cfg.temperature,
                           cfg.standard_infonce);
    if (grads != nullptr) {
      align_backward(u_batch, p_tilde, cfg.temperature, cfg.standard_infonce,
                     du_align, dp_align);
      Mat dprof = cfg.alpha * dp_align;
      adapt_cols_backward(prof, model.profile_adapter, dprof,
                          grads->profile_adapter);
    }
  }
  res.total = res.bpr_sum + cfg.alpha * res.align;

  if (grads == nullptr) return res;

  const Mat dpos = bpr_backward(pos_scores, neg_scores, batch.mask);
  for (int c = 0; c < b; ++c) {
    auto& w = work[static_cast<size_t>(c)];
    const int t = lens[static_cast<size_t>(c)];
    Mat dh = Mat::Zero(d, t);
    Mat dp = Mat::Zero(d, t);
    Mat dn = Mat::Zero(d, t);
    for (int j = 0; j < t; ++j) {
      const double gp = dpos(j, c);
      dh.col(j) += gp * w.p.col(j) - gp * w.n.col(j);
      dp.col(j) = gp * w.h.col(j);
      dn.col(j) = -gp * w.h.col(j);
    }
    if (want_align) dh.col(t - 1) += cfg.alpha * du_align.col(c);
    adapt_cols_backward(w.e_pos, model.global_adapter, dp,
                        grads->global_adapter);
    adapt_cols_backward(w.e_neg, model.global_adapter, dn,
                        grads->global_adapter);
    const Mat dx = backbone_backward(dh, model.backbone, w.cache,
                                     grads->backbone);
    adapt_cols_backward(w.e_in, model.global_adapter, dx,
                        grads->global_adapter);
  }
  return res;
}

namespace {

void zero_state(ModelState& grads) {
  for (auto& view : param_views(grads))
    std::fill(view.data, view.data + view.size, 0.0);
}

std::vector<ParamView> domain_adapter_views(ModelState& m) {
  std::vector<ParamView> views = param_views(m.domain_a, "domain_a");
  for (auto& v : param_views(m.domain_b, "domain_b")) views.push_back(v);
  return views;
}

}  // namespace

ModelState pretrain(const ModelState& init, const PretrainData& data,
                    const PretrainConfig& cfg, const ValidateFn& validate,
                    std::vector<LossReport>* reports,
                    const std::filesystem::path& checkpoint_dir,
                    const std::filesystem::path& log_path) {
  if (!(cfg.lr > 0.0)) throw UsageError("learning rate must be positive");
  if (cfg.alpha < 0.0) throw UsageError("alignment weight must be >= 0");
  if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");

  ModelState model = init;
  ModelState grads = zeros_like(model);
  auto params = param_views(model);
  auto grad_views = param_views(grads);
  Adam opt;
  opt.lr = cfg.lr;
  opt.init(params);

  std::vector<int> eligible;
  for (size_t i = 0; i < data.train_seqs.size(); ++i)
    if (data.train_seqs[i].size() >= 2) eligible.push_back(static_cast<int>(i));
  if (eligible.empty())
    throw DataError("no trainable sequences: every user has fewer than two items");

  std::vector<LossReport> local;
  std::vector<LossReport>& log = reports != nullptr ? *reports : local;

  ModelState best = model;
  double best_metric = -1e300;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    uint64_t shuffle_rng = substream(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    uint64_t neg_rng = substream(cfg.seed, "negatives", static_cast<uint64_t>(epoch));
    Dropout drop{model.cfg.dropout,
                 substream(cfg.seed, "dropout", static_cast<uint64_t>(epoch))};
    Dropout* drop_ptr = drop.enabled() ? &drop : nullptr;

    std::vector<int> order = eligible;
    shuffle_indices(order, shuffle_rng);

    LossReport report;
    report.epoch = epoch;
    double align_sum = 0.0;
    for (size_t off = 0; off < order.size();
         off += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      std::vector<int> users(order.begin() + static_cast<long>(off),
                             order.begin() + static_cast<long>(end));
      TrainBatch batch =
          assemble_batch(data, users, model.cfg.max_len, neg_rng);
      zero_state(grads);
      const StepResult step =
          pretrain_step(model, data, batch, cfg, &grads, drop_ptr);
      if (!std::isfinite(step.total)) {
        if (!log_path.empty()) write_loss_reports(log_path, log);
        throw DataError("training diverged in epoch " + std::to_string(epoch));
      }
      report.total += step.total;
      report.l_pre += step.bpr_sum;
      report.valid_positions += step.valid;
      align_sum += step.align;
      opt.step(params, grad_views);
    }
    if (report.valid_positions > 0)
      report.l_pre /= static_cast<double>(report.valid_positions);
    report.l_align = align_sum;
    report.val_metric = validate ? validate(model) : 0.0;
    log.push_back(report);

    const double metric = validate ? report.val_metric
                                   : -report.total;  // fall back to the loss
    if (metric > best_metric) {
      best_metric = metric;
      best = model;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }

  if (!log_path.empty()) write_loss_reports(log_path, log);
  if (!checkpoint_dir.empty()) save_checkpoint(best, checkpoint_dir, "pretrain-best");
  return best;
}

// --- fine-tuning ------------------------------------------------------------

FinetuneData build_finetune_data(const SequenceStore& store,
                                 const Catalog& catalog, const Mat& e_llm,
                                 const ModelState& frozen) {
  if (!frozen.backbone.frozen)
    throw UsageError("fine-tuning data requires a frozen backbone");
  if (e_llm.cols() != catalog.size())
    throw UsageError("embedding table does not cover the catalog");

  FinetuneData data;
  data.proj = adapt_cols(e_llm, frozen.global_adapter);
  data.pool_a = catalog.items_of(Domain::A, true);
  data.pool_b = catalog.items_of(Domain::B, true);
  const int max_len = frozen.cfg.max_len;

  for (int ui = 0; ui < store.size(); ++ui) {
    const auto& seq = store.user(ui);
    const int m = static_cast<int>(seq.events.size());
    if (m < 2) continue;

    // Frozen hiddens over the most recent window of the mixed sequence.
    const int win = std::min(m, max_len);
    const int win_start = m - win;
    Mat x_mixed(frozen.cfg.d, win);
    for (int j = 0; j < win; ++j)
      x_mixed.col(j) = data.proj.col(seq.events[static_cast<size_t>(win_start + j)].item);
    const Mat h_mixed = backbone_forward(x_mixed, frozen.backbone);

    for (const Domain dom : {Domain::A, Domain::B}) {
      std::vector<int> dom_pos;  // positions in the mixed sequence
      for (int j = 0; j < m; ++j)
        if (catalog.item(seq.events[static_cast<size_t>(j)].item).domain == dom)
          dom_pos.push_back(j);
      const int md = static_cast<int>(dom_pos.size());
      if (md < 2) continue;

      const int pairs = md - 1;
      const int keep = std::min(pairs, max_len);
      const int start = pairs - keep;

      Mat x_dom(frozen.cfg.d, keep);
      std::vector<int> targets(static_cast<size_t>(keep));
      Mat gctx = Mat::Zero(frozen.cfg.d, keep);
      for (int j = 0; j < keep; ++j) {
        const int input_mixed = dom_pos[static_cast<size_t>(start + j)];
        const int target_mixed = dom_pos[static_cast<size_t>(start + j + 1)];
        x_dom.col(j) =
            data.proj.col(seq.events[static_cast<size_t>(input_mixed)].item);
        targets[static_cast<size_t>(j)] =
            seq.events[static_cast<size_t>(target_mixed)].item;
        // Context is the mixed-sequence state just before the target shows
        // up; targets whose context precedes the window keep a zero column.
        const int ctx = target_mixed - 1;
        if (ctx >= win_start) gctx.col(j) = h_mixed.col(ctx - win_start);
      }
      const Mat h_dom = backbone_forward(x_dom, frozen.backbone);

      auto& side = dom == Domain::A ? data.a : data.b;
      side.user_index.push_back(ui);
      side.hidden.push_back(h_dom);
      side.target.push_back(std::move(targets));
      side.gctx.push_back(gctx);
    }
  }
  return data;
}

StepResult finetune_step(ModelState& model, const FinetuneData& data,
                         const FinetuneBatch& batch, ModelState* grads) {
  const auto& side = data.side(batch.domain);
  const AdapterParams& adapter = model.domain_adapter(batch.domain);
  AdapterParams* agrad =
      grads != nullptr ? &grads->domain_adapter(batch.domain) : nullptr;
  const bool residual = model.cfg.residual_domain;
  const bool item_adapter = model.cfg.domain_item_adapter;

  StepResult res;
  for (size_t bi = 0; bi < batch.examples.size(); ++bi) {
    const int e = batch.examples[bi];
    const Mat& h = side.hidden[static_cast<size_t>(e)];
    const auto& targets = side.target[static_cast<size_t>(e)];
    const Mat& gctx = side.gctx[static_cast<size_t>(e)];
    const auto& negs = batch.negatives[bi];
    const int t = static_cast<int>(targets.size());
    if (static_cast<int>(negs.size()) != t)
      throw UsageError("negative list does not match target positions");

    const Mat adapted_h = adapt_cols(h, adapter);
    const Mat u = residual ? Mat(h + adapted_h) : adapted_h;

    Mat e_pos(model.cfg.d, t), e_neg(model.cfg.d, t);
    for (int j = 0; j < t; ++j) {
      e_pos.col(j) = data.proj.col(targets[static_cast<size_t>(j)]);
      e_neg.col(j) = data.proj.col(negs[static_cast<size_t>(j)]);
    }
    Mat px = e_pos, nx = e_neg;
    if (item_adapter) {
      const Mat ap = adapt_cols(e_pos, adapter);
      const Mat an = adapt_cols(e_neg, adapter);
      px = residual ? Mat(e_pos + ap) : ap;
      nx = residual ? Mat(e_neg + an) : an;
    }

    Mat pos(t, 1), neg(t, 1);
    for (int j = 0; j < t; ++j) {
      pos(j, 0) = px.col(j).dot(u.col(j)) + e_pos.col(j).dot(gctx.col(j));
      neg(j, 0) = nx.col(j).dot(u.col(j)) + e_neg.col(j).dot(gctx.col(j));
    }
    const Mat mask = Mat::Ones(t, 1);
    const BprResult bpr = bpr_loss(pos, neg, mask);
    res.bpr_sum += bpr.sum;
    res.valid += bpr.valid;

    if (agrad == nullptr) continue;
    const Mat dpos = bpr_backward(pos, neg, mask);
    Mat du(model.cfg.d, t), dpx(model.cfg.d, t), dnx(model.cfg.d, t);
    for (int j = 0; j < t; ++j) {
      const double gp = dpos(j, 0);
      du.col(j) = gp * px.col(j) - gp * nx.col(j);
      dpx.col(j) = gp * u.col(j);
      dnx.col(j) = -gp * u.col(j);
    }
    // The identity path of the residual carries no parameters, so the
    // adapter gradient is the same with or without it.
    adapt_cols_backward(h, adapter, du, *agrad);
    if (item_adapter) {
      adapt_cols_backward(e_pos, adapter, dpx, *agrad);
      adapt_cols_backward(e_neg, adapter, dnx, *agrad);
    }
  }
  res.total = res.bpr_sum;
  return res;
}

ModelState finetune(const ModelState& pretrained, const SequenceStore& store,
                    const Catalog& catalog, const Mat& e_llm,
                    const FinetuneConfig& cfg, const ValidateFn& validate,
                    std::vector<LossReport>* reports,
                    const std::filesystem::path& checkpoint_dir,
                    const std::filesystem::path& log_path) {
  if (!(cfg.lr > 0.0)) throw UsageError("learning rate must be positive");
  if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");

  ModelState model = pretrained;
  model.backbone.frozen = true;
  const FinetuneData data = build_finetune_data(store, catalog, e_llm, model);
  if (data.a.user_index.empty() && data.b.user_index.empty())
    throw DataError("no user has two or more interactions in either domain");

  ModelState grads = zeros_like(model);
  auto params = domain_adapter_views(model);
  auto grad_views = domain_adapter_views(grads);
  Adam opt;
  opt.lr = cfg.lr;
  opt.init(params);

  std::vector<LossReport> local;
  std::vector<LossReport>& log = reports != nullptr ? *reports : local;

  ModelState best = model;
  double best_metric = -1e300;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    uint64_t shuffle_rng = substream(cfg.seed, "ft-shuffle", static_cast<uint64_t>(epoch));
    uint64_t neg_rng = substream(cfg.seed, "ft-negatives", static_cast<uint64_t>(epoch));

    LossReport report;
    report.epoch = epoch;
    size_t valid_a = 0, valid_b = 0;

    // Single-domain batches, all of A then all of B; each epoch reshuffles
    // example order within a domain.
    std::vector<FinetuneBatch> batches;
    for (const Domain dom : {Domain::A, Domain::B}) {
      const auto& side = data.side(dom);
      std::vector<int> order(side.user_index.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      shuffle_indices(order, shuffle_rng);
      for (size_t off = 0; off < order.size();
           off += static_cast<size_t>(cfg.batch_size)) {
        const size_t end =
            std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
        FinetuneBatch batch;
        batch.domain = dom;
        batch.examples.assign(order.begin() + static_cast<long>(off),
                              order.begin() + static_cast<long>(end));
        const auto& pool = dom == Domain::A ? data.pool_a : data.pool_b;
        for (int e : batch.examples) {
          const auto& targets = side.target[static_cast<size_t>(e)];
          std::vector<int> negs(targets.size());
          for (size_t j = 0; j < targets.size(); ++j)
            negs[j] = negative_sample(pool, {targets[j]}, neg_rng);
          batch.negatives.push_back(std::move(negs));
        }
        batches.push_back(std::move(batch));
      }
    }
    for (auto& batch : batches) {
      zero_state(grads);
      const StepResult step = finetune_step(model, data, batch, &grads);
      if (!std::isfinite(step.total)) {
        if (!log_path.empty()) write_loss_reports(log_path, log);
        throw DataError("fine-tuning diverged in epoch " +
                        std::to_string(epoch));
      }
      if (batch.domain == Domain::A) {
        report.l_a += step.bpr_sum;
        valid_a += step.valid;
      } else {
        report.l_b += step.bpr_sum;
        valid_b += step.valid;
      }
      report.total += step.total;
      opt.step(params, grad_views);
    }
    report.valid_positions = valid_a + valid_b;
    if (valid_a > 0) report.l_a /= static_cast<double>(valid_a);
    if (valid_b > 0) report.l_b /= static_cast<double>(valid_b);
    report.val_metric = validate ? validate(model) : 0.0;
    log.push_back(report);

    const double metric = validate ? report.val_metric : -report.total;
    if (metric > best_metric) {
      best_metric = metric;
      best = model;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }

  if (!log_path.empty()) write_loss_reports(log_path, log);
  if (!checkpoint_dir.empty()) save_checkpoint(best, checkpoint_dir, "finetune-best");
  return best;
}

}  // namespace edt
