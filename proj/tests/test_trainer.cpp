#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "edt/trainer.hpp"

using namespace edt;

namespace {

Vec random_vec(int n, uint64_t& rng, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = (splitmix_unit(rng) - 0.5) * 2.0 * scale;
  return v;
}

Mat random_mat(int r, int c, uint64_t& rng, double scale = 1.0) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j) m.col(j) = random_vec(r, rng, scale);
  return m;
}

// Small two-domain corpus with alternating interactions.
std::pair<Catalog, SequenceStore> tiny_corpus(int users, int items_per_domain,
                                              int seq_len) {
  Catalog catalog;
  for (int d = 0; d < 2; ++d) {
    for (int i = 0; i < items_per_domain; ++i) {
      ItemRecord rec;
      rec.item_id = std::string(d == 0 ? "A" : "B") + std::to_string(i);
      rec.domain = d == 0 ? Domain::A : Domain::B;
      rec.title = std::string(d == 0 ? "alpha" : "beta") + " item " +
                  std::to_string(i);
      catalog.add(rec);
    }
  }
  SequenceStore store;
  uint64_t rng = 77;
  for (int u = 0; u < users; ++u) {
    const std::string uid = "u" + std::to_string(u);
    for (int k = 0; k < seq_len; ++k) {
      Event ev;
      const bool use_a = (k + u) % 2 == 0;
      const int local = static_cast<int>(splitmix64(rng) %
                                         static_cast<uint64_t>(items_per_domain));
      ev.item = (use_a ? 0 : items_per_domain) + local;
      ev.timestamp = 1000 + k;
      ev.ingest_order = k;
      store.add_event(uid, ev);
    }
  }
  store.finalize(catalog);
  return {std::move(catalog), std::move(store)};
}

ModelCfg tiny_cfg() {
  ModelCfg cfg;
  cfg.d_l = 16;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 12;
  cfg.dropout = 0.0;
  cfg.domain_hidden = 4;
  return cfg;
}

std::map<std::string, Vec> random_profiles(const SequenceStore& store, int d_l,
                                           uint64_t seed) {
  std::map<std::string, Vec> profiles;
  uint64_t rng = seed;
  for (const auto& seq : store.users())
    profiles[seq.user_id] = random_vec(d_l, rng);
  return profiles;
}

bool same_doubles(std::vector<ParamView> a, std::vector<ParamView> b) {
  if (a.size() != b.size()) return false;
  for (size_t k = 0; k < a.size(); ++k) {
    if (a[k].size != b[k].size) return false;
    for (size_t i = 0; i < a[k].size; ++i)
      if (a[k].data[i] != b[k].data[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("ranking loss hits ln 2 when scores tie") {
  Mat pos = Mat::Zero(1, 1), neg = Mat::Zero(1, 1), mask = Mat::Ones(1, 1);
  pos(0, 0) = 1.7;
  neg(0, 0) = 1.7;
  const BprResult r = bpr_loss(pos, neg, mask);
  CHECK(r.valid == 1);
  CHECK(r.sum == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("ranking loss vanishes as the margin grows") {
  Mat pos = Mat::Constant(1, 1, 40.0), neg = Mat::Zero(1, 1),
      mask = Mat::Ones(1, 1);
  CHECK(bpr_loss(pos, neg, mask).sum < 1e-12);
}

TEST_CASE("ranking loss matches a scalar-loop oracle and honors the mask") {
  uint64_t rng = 11;
  Mat pos = random_mat(3, 4, rng, 2.0);
  Mat neg = random_mat(3, 4, rng, 2.0);
  Mat mask = Mat::Ones(3, 4);
  mask(2, 1) = 0.0;
  mask(0, 3) = 0.0;

  double want = 0.0;
  size_t count = 0;
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 3; ++r) {
      if (mask(r, c) == 0.0) continue;
      const double x = pos(r, c) - neg(r, c);
      want += -std::log(1.0 / (1.0 + std::exp(-x)));
      ++count;
    }
  }
  const BprResult got = bpr_loss(pos, neg, mask);
  CHECK(got.valid == count);
  CHECK(got.sum == doctest::Approx(want).epsilon(1e-9));
  CHECK(got.mean ==
        doctest::Approx(want / static_cast<double>(count)).epsilon(1e-9));
}

TEST_CASE("ranking loss rejects non-finite scores yet ignores padding") {
  Mat pos = Mat::Zero(2, 1), neg = Mat::Zero(2, 1), mask = Mat::Ones(2, 1);
  pos(1, 0) = std::nan("");
  CHECK_THROWS_AS(bpr_loss(pos, neg, mask), DataError);
  mask(1, 0) = 0.0;  // the NaN cell is padding now
  CHECK_NOTHROW(bpr_loss(pos, neg, mask));
}

TEST_CASE("ranking loss gradient matches finite differences") {
  uint64_t rng = 13;
  Mat pos = random_mat(3, 2, rng);
  Mat neg = random_mat(3, 2, rng);
  Mat mask = Mat::Ones(3, 2);
  mask(1, 1) = 0.0;
  const Mat dpos = bpr_backward(pos, neg, mask);
  const double h = 1e-6;
  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < 3; ++r) {
      const double saved = pos(r, c);
      pos(r, c) = saved + h;
      const double up = bpr_loss(pos, neg, mask).sum;
      pos(r, c) = saved - h;
      const double down = bpr_loss(pos, neg, mask).sum;
      pos(r, c) = saved;
      const double fd = (up - down) / (2.0 * h);
      CHECK(std::abs(fd - dpos(r, c)) < 1e-7);
    }
  }
}

TEST_CASE("alignment loss closed form: orthogonal pairs at tau=1") {
  Mat u = Mat::Zero(2, 2), p = Mat::Zero(2, 2);
  u(0, 0) = 1.0;
  u(1, 1) = 1.0;
  p = u;
  CHECK(align_loss(u, p, 1.0) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("alignment loss closed form: identical batch gives 2 log(B-1)") {
  for (int b : {2, 3, 4}) {
    Mat u(3, b);
    uint64_t rng = 17;
    const Vec base = random_vec(3, rng);
    for (int c = 0; c < b; ++c) u.col(c) = base * (0.5 + c);  // same direction
    const double got = align_loss(u, u, 0.5);
    CHECK(got == doctest::Approx(2.0 * std::log(b - 1.0)).epsilon(1e-9));
    // Including the positive pair turns the denominator into B terms.
    const double std_got = align_loss(u, u, 0.5, true);
    CHECK(std_got ==
          doctest::Approx(2.0 * std::log(static_cast<double>(b))).epsilon(1e-9));
  }
}

TEST_CASE("alignment loss against a direct 2x2 similarity-table oracle") {
  uint64_t rng = 19;
  Mat u = random_mat(4, 2, rng);
  Mat p = random_mat(4, 2, rng);
  const double tau = 0.7;

  auto cosine = [](const Vec& a, const Vec& b) {
    return a.dot(b) / (a.norm() * b.norm());
  };
  double table[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      table[i][j] = cosine(Vec(u.col(i)), Vec(p.col(j)));
  // Row side: only the off-diagonal entry survives in each denominator.
  double l1 = 0.0;
  l1 -= 0.5 * std::log(std::exp(table[0][0] / tau) / std::exp(table[0][1] / tau));
  l1 -= 0.5 * std::log(std::exp(table[1][1] / tau) / std::exp(table[1][0] / tau));
  double l2 = 0.0;
  l2 -= 0.5 * std::log(std::exp(table[0][0] / tau) / std::exp(table[1][0] / tau));
  l2 -= 0.5 * std::log(std::exp(table[1][1] / tau) / std::exp(table[0][1] / tau));

  CHECK(align_loss(u, p, tau) == doctest::Approx(l1 + l2).epsilon(1e-9));
}

TEST_CASE("alignment loss is symmetric and rescale-invariant") {
  uint64_t rng = 23;
  Mat u = random_mat(5, 3, rng);
  Mat p = random_mat(5, 3, rng);
  CHECK(align_loss(u, p, 0.4) == doctest::Approx(align_loss(p, u, 0.4)));

  Mat u2 = u, p2 = p;
  uint64_t rng2 = 29;
  for (int c = 0; c < 3; ++c) {
    u2.col(c) *= 0.1 + 5.0 * splitmix_unit(rng2);
    p2.col(c) *= 0.1 + 5.0 * splitmix_unit(rng2);
  }
  CHECK(align_loss(u2, p2, 0.4) ==
        doctest::Approx(align_loss(u, p, 0.4)).epsilon(1e-12));
}

TEST_CASE("alignment loss validates its inputs") {
  uint64_t rng = 31;
  Mat one = random_mat(4, 1, rng);
  CHECK_THROWS_AS(align_loss(one, one, 1.0), UsageError);
  Mat u = random_mat(4, 3, rng);
  CHECK_THROWS_AS(align_loss(u, u, 0.0), UsageError);
  CHECK_THROWS_AS(align_loss(u, u, -1.0), UsageError);
  Mat with_zero = u;
  with_zero.col(1).setZero();
  CHECK_THROWS_AS(align_loss(with_zero, u, 1.0), DataError);
  Mat wrong = random_mat(4, 2, rng);
  CHECK_THROWS_AS(align_loss(u, wrong, 1.0), UsageError);
}

TEST_CASE("alignment gradient matches finite differences") {
  for (const bool standard : {false, true}) {
    uint64_t rng = 37;
    Mat u = random_mat(6, 4, rng);
    Mat p = random_mat(6, 4, rng);
    const double tau = 0.6;
    Mat du, dp;
    align_backward(u, p, tau, standard, du, dp);
    const double h = 1e-6;
    auto fd_check = [&](Mat& target, const Mat& grad) {
      for (int c = 0; c < target.cols(); ++c) {
        for (int r = 0; r < target.rows(); ++r) {
          const double saved = target(r, c);
          target(r, c) = saved + h;
          const double up = align_loss(u, p, tau, standard);
          target(r, c) = saved - h;
          const double down = align_loss(u, p, tau, standard);
          target(r, c) = saved;
          const double fd = (up - down) / (2.0 * h);
          const double scale =
              std::max({1e-6, std::abs(fd), std::abs(grad(r, c))});
          CHECK(std::abs(fd - grad(r, c)) / scale < 1e-4);
        }
      }
    };
    fd_check(u, du);
    fd_check(p, dp);
  }
}

TEST_CASE("negative sampling is uniform, exclusion-safe, and total") {
  std::vector<int> pool{10, 11};
  uint64_t rng = 41;
  for (int i = 0; i < 50; ++i)
    CHECK(negative_sample(pool, {10}, rng) == 11);

  std::vector<int> big;
  for (int i = 0; i < 10; ++i) big.push_back(i);
  std::map<int, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[negative_sample(big, {}, rng)];
  for (int i = 0; i < 10; ++i) {
    // sigma = sqrt(n p (1-p)) = 30; allow three of them around 1000.
    CHECK(std::abs(counts[i] - 1000) < 90);
  }

  for (int i = 0; i < 1000; ++i)
    CHECK(negative_sample(big, {3}, rng) != 3);

  CHECK_THROWS_AS(negative_sample({}, {}, rng), DataError);
  CHECK_THROWS_AS(negative_sample(pool, {10, 11}, rng), DataError);
}

TEST_CASE("optimizer walks a quadratic to its minimum deterministically") {
  Vec x = Vec::Zero(4);
  Vec c(4);
  c << 1.0, -2.0, 0.5, 3.0;
  std::vector<ParamView> params{{"x", x.data(), 4}};
  Vec g(4);
  std::vector<ParamView> grads{{"x", g.data(), 4}};
  Adam opt;
  opt.lr = 0.05;
  opt.init(params);
  for (int i = 0; i < 800; ++i) {
    g = x - c;
    opt.step(params, grads);
  }
  CHECK((x - c).cwiseAbs().maxCoeff() < 1e-3);

  Vec x2 = Vec::Zero(4);
  std::vector<ParamView> params2{{"x", x2.data(), 4}};
  Adam opt2;
  opt2.lr = 0.05;
  opt2.init(params2);
  for (int i = 0; i < 800; ++i) {
    g = x2 - c;
    opt2.step(params2, grads);
  }
  CHECK((x - x2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pretrain step: combined objective gradient matches finite differences") {
  auto [catalog, store] = tiny_corpus(3, 3, 5);
  uint64_t rng = 43;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  const auto profiles = random_profiles(store, 16, 47);

  const PretrainData data = build_pretrain_data(store, catalog, e_llm, profiles);
  ModelState model = make_model(tiny_cfg(), 53);
  PretrainConfig cfg;
  cfg.alpha = 0.7;
  cfg.temperature = 0.5;

  uint64_t neg_rng = 59;
  const TrainBatch batch =
      assemble_batch(data, {0, 1, 2}, model.cfg.max_len, neg_rng);

  ModelState grads = zeros_like(model);
  const StepResult step = pretrain_step(model, data, batch, cfg, &grads, nullptr);
  CHECK(step.valid == 12);  // 3 users x 4 positions
  CHECK(step.total == step.bpr_sum + cfg.alpha * step.align);

  auto loss = [&]() {
    return pretrain_step(model, data, batch, cfg, nullptr, nullptr).total;
  };
  const double h = 1e-5;
  auto pv = param_views(model);
  auto gv = param_views(grads);
  REQUIRE(pv.size() == gv.size());
  size_t checked = 0;
  for (size_t k = 0; k < pv.size(); ++k) {
    const size_t stride = pv[k].size > 48 ? 5 : 1;
    for (size_t i = 0; i < pv[k].size; i += stride) {
      const double saved = pv[k].data[i];
      pv[k].data[i] = saved + h;
      const double up = loss();
      pv[k].data[i] = saved - h;
      const double down = loss();
      pv[k].data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double scale =
          std::max({1e-5, std::abs(fd), std::abs(gv[k].data[i])});
      CAPTURE(pv[k].name);
      CAPTURE(i);
      CAPTURE(fd);
      CAPTURE(gv[k].data[i]);
      CHECK(std::abs(fd - gv[k].data[i]) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 300);
}

TEST_CASE("pretrain step: alpha=0 never needs profiles and drops the align term") {
  auto [catalog, store] = tiny_corpus(3, 3, 5);
  uint64_t rng = 61;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  // No profiles at all.
  const PretrainData data = build_pretrain_data(store, catalog, e_llm, {});
  ModelState model = make_model(tiny_cfg(), 67);
  PretrainConfig cfg;
  cfg.alpha = 0.0;
  uint64_t neg_rng = 71;
  const TrainBatch batch =
      assemble_batch(data, {0, 1, 2}, model.cfg.max_len, neg_rng);
  ModelState grads = zeros_like(model);
  const StepResult step = pretrain_step(model, data, batch, cfg, &grads, nullptr);
  CHECK(step.align == 0.0);
  CHECK(step.total == step.bpr_sum);

  // With alpha > 0 the same batch must refuse to run without profiles.
  PretrainConfig with_align;
  with_align.alpha = 0.5;
  CHECK_THROWS_AS(
      pretrain_step(model, data, batch, with_align, &grads, nullptr),
      DataError);
}

TEST_CASE("pretrain improves the training loss and stays deterministic") {
  auto [catalog, store] = tiny_corpus(8, 4, 9);
  uint64_t rng = 73;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  const auto profiles = random_profiles(store, 16, 79);
  const PretrainData data = build_pretrain_data(store, catalog, e_llm, profiles);

  ModelCfg mc = tiny_cfg();
  mc.dropout = 0.1;
  ModelState init = make_model(mc, 83);
  PretrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 4;
  cfg.alpha = 0.3;
  cfg.epochs = 12;
  cfg.patience = 50;
  cfg.seed = 42;

  std::vector<LossReport> log1;
  ModelState out1 = pretrain(init, data, cfg, nullptr, &log1);
  REQUIRE(log1.size() == 12);
  CHECK(log1.back().l_pre < log1.front().l_pre);
  for (const auto& r : log1) {
    CHECK(std::isfinite(r.l_pre));
    CHECK(std::isfinite(r.l_align));
    CHECK(std::isfinite(r.total));
  }

  std::vector<LossReport> log2;
  ModelState out2 = pretrain(init, data, cfg, nullptr, &log2);
  REQUIRE(log2.size() == log1.size());
  for (size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].total == log2[i].total);
    CHECK(log1[i].l_pre == log2[i].l_pre);
    CHECK(log1[i].l_align == log2[i].l_align);
  }
  CHECK(same_doubles(param_views(out1), param_views(out2)));
}

TEST_CASE("pretrain with alpha=0 equals a run that never saw profiles") {
  auto [catalog, store] = tiny_corpus(6, 4, 7);
  uint64_t rng = 89;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  const auto profiles = random_profiles(store, 16, 97);

  const PretrainData with_profiles =
      build_pretrain_data(store, catalog, e_llm, profiles);
  const PretrainData without =
      build_pretrain_data(store, catalog, e_llm, {});

  ModelCfg mc = tiny_cfg();
  mc.dropout = 0.2;  // dropout streams must line up too
  ModelState init = make_model(mc, 101);
  PretrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 4;
  cfg.alpha = 0.0;
  cfg.epochs = 3;
  cfg.patience = 50;
  cfg.seed = 42;

  ModelState a = pretrain(init, with_profiles, cfg, nullptr, nullptr);
  ModelState b = pretrain(init, without, cfg, nullptr, nullptr);
  CHECK(same_doubles(param_views(a), param_views(b)));
}

TEST_CASE("pretrain writes a checkpoint and a training log") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "edt_trainer_smoke";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto [catalog, store] = tiny_corpus(4, 3, 5);
  uint64_t rng = 103;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  const PretrainData data = build_pretrain_data(store, catalog, e_llm, {});
  ModelState init = make_model(tiny_cfg(), 107);
  PretrainConfig cfg;
  cfg.alpha = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 4;

  ModelState out = pretrain(init, data, cfg, nullptr, nullptr, dir,
                            dir / "pretrain_log.jsonl");
  CHECK(fs::exists(dir / "pretrain-best.json"));
  CHECK(fs::exists(dir / "pretrain-best.bin"));
  CHECK(fs::exists(dir / "pretrain_log.jsonl"));
  std::ifstream log(dir / "pretrain_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 1);
  const ModelState reloaded = load_checkpoint(dir, "pretrain-best");
  CHECK(reloaded.cfg.d == out.cfg.d);
  fs::remove_all(dir);
}

TEST_CASE("validation callback drives best-checkpoint selection and patience") {
  auto [catalog, store] = tiny_corpus(4, 3, 5);
  uint64_t rng = 109;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  const PretrainData data = build_pretrain_data(store, catalog, e_llm, {});
  ModelState init = make_model(tiny_cfg(), 113);
  PretrainConfig cfg;
  cfg.alpha = 0.0;
  cfg.epochs = 40;
  cfg.patience = 3;
  cfg.batch_size = 4;

  // Metric peaks at epoch 2 and decays after; patience should cut the run.
  int calls = 0;
  auto validate = [&](const ModelState&) {
    ++calls;
    return calls == 2 ? 1.0 : 1.0 / (1.0 + calls);
  };
  std::vector<LossReport> log;
  pretrain(init, data, cfg, validate, &log);
  CHECK(log.size() == 5);  // best at 2, stopped after 2 + patience
  CHECK(log[1].val_metric == 1.0);
}

TEST_CASE("fine-tuning touches only the two domain adapters") {
  auto [catalog, store] = tiny_corpus(6, 4, 8);
  uint64_t rng = 127;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  ModelState pretrained = make_model(tiny_cfg(), 131);

  ModelState before = pretrained;  // deep copy for the bit comparison
  FinetuneConfig cfg;
  cfg.lr = 0.01;  // strong enough to move the adapters visibly
  cfg.epochs = 3;
  cfg.batch_size = 4;
  std::vector<LossReport> log;
  ModelState after = finetune(pretrained, store, catalog, e_llm, cfg, nullptr,
                              &log);
  REQUIRE(log.size() == 3);

  CHECK(same_doubles(param_views(before.backbone), param_views(after.backbone)));
  CHECK(same_doubles(param_views(before.global_adapter, "g"),
                     param_views(after.global_adapter, "g")));
  CHECK(same_doubles(param_views(before.profile_adapter, "p"),
                     param_views(after.profile_adapter, "p")));
  CHECK_FALSE(same_doubles(param_views(before.domain_a, "a"),
                           param_views(after.domain_a, "a")));
  CHECK_FALSE(same_doubles(param_views(before.domain_b, "b"),
                           param_views(after.domain_b, "b")));
  CHECK(after.backbone.frozen);

  CHECK(log.back().total < log.front().total);
  for (const auto& r : log) {
    CHECK(std::isfinite(r.l_a));
    CHECK(std::isfinite(r.l_b));
  }
}

TEST_CASE("users without a domain contribute nothing to its adapter") {
  // All interactions live in domain A.
  Catalog catalog;
  for (int i = 0; i < 5; ++i) {
    ItemRecord rec;
    rec.item_id = "A" + std::to_string(i);
    rec.domain = Domain::A;
    rec.title = "only alpha " + std::to_string(i);
    catalog.add(rec);
  }
  SequenceStore store;
  for (int u = 0; u < 3; ++u) {
    for (int k = 0; k < 5; ++k) {
      Event ev;
      ev.item = (u + k) % 5;
      ev.timestamp = k;
      ev.ingest_order = k;
      store.add_event("u" + std::to_string(u), ev);
    }
  }
  store.finalize(catalog);

  uint64_t rng = 137;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  ModelState pretrained = make_model(tiny_cfg(), 139);
  ModelState before = pretrained;
  FinetuneConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 2;
  std::vector<LossReport> log;
  ModelState after =
      finetune(pretrained, store, catalog, e_llm, cfg, nullptr, &log);
  for (const auto& r : log) CHECK(r.l_b == 0.0);
  CHECK(same_doubles(param_views(before.domain_b, "b"),
                     param_views(after.domain_b, "b")));
  CHECK_FALSE(same_doubles(param_views(before.domain_a, "a"),
                           param_views(after.domain_a, "a")));
}

TEST_CASE("fine-tune step gradient matches finite differences") {
  auto [catalog, store] = tiny_corpus(3, 3, 6);
  uint64_t rng = 149;
  const Mat e_llm = random_mat(16, catalog.size(), rng, 0.5);
  ModelState model = make_model(tiny_cfg(), 151);
  // Give the adapters nonzero weights so both layers carry gradient.
  uint64_t wrng = 157;
  model.domain_a = init_adapter(8, 4, 8, wrng, 0.3);
  model.backbone.frozen = true;
  const FinetuneData data =
      build_finetune_data(store, catalog, e_llm, model);
  REQUIRE(!data.a.user_index.empty());

  FinetuneBatch batch;
  batch.domain = Domain::A;
  uint64_t neg_rng = 163;
  for (size_t e = 0; e < data.a.user_index.size(); ++e) {
    batch.examples.push_back(static_cast<int>(e));
    std::vector<int> negs;
    for (int target : data.a.target[e])
      negs.push_back(negative_sample(data.pool_a, {target}, neg_rng));
    batch.negatives.push_back(std::move(negs));
  }

  ModelState grads = zeros_like(model);
  finetune_step(model, data, batch, &grads);
  auto pv = param_views(model.domain_a, "domain_a");
  auto gv = param_views(grads.domain_a, "domain_a");
  const double h = 1e-6;
  for (size_t k = 0; k < pv.size(); ++k) {
    for (size_t i = 0; i < pv[k].size; ++i) {
      const double saved = pv[k].data[i];
      pv[k].data[i] = saved + h;
      const double up = finetune_step(model, data, batch, nullptr).total;
      pv[k].data[i] = saved - h;
      const double down = finetune_step(model, data, batch, nullptr).total;
      pv[k].data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double scale =
          std::max({1e-5, std::abs(fd), std::abs(gv[k].data[i])});
      CAPTURE(pv[k].name);
      CAPTURE(i);
      CAPTURE(fd);
      CAPTURE(gv[k].data[i]);
      CHECK(std::abs(fd - gv[k].data[i]) / scale < 1e-4);
    }
  }
  // The un-touched domain-B adapter accumulated nothing.
  for (const auto& v : param_views(grads.domain_b, "domain_b"))
    for (size_t i = 0; i < v.size; ++i) CHECK(v.data[i] == 0.0);
}
