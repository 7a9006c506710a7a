#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "edt/evaluator.hpp"
#include "edt/gateway.hpp"
#include "edt/prompts.hpp"
#include "nlohmann/json.hpp"

using namespace edt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ItemRecord make_item(const std::string& id, Domain d, const std::string& title,
                     bool synthetic = false) {
  ItemRecord rec;
  rec.item_id = id;
  rec.domain = d;
  rec.title = title;
  rec.brand = "BrandX";
  rec.date = "2021-05-05";
  rec.price = "19.99";
  rec.categories = {"core"};
  rec.description = "plain";
  rec.synthetic = synthetic;
  return rec;
}

Mat embed_catalog(const Catalog& catalog, Gateway& gateway) {
  DomainNames names;
  Mat m(gateway.dim(), catalog.size());
  for (int i = 0; i < catalog.size(); ++i) {
    std::vector<float> e = gateway.embed(item_text(catalog.item(i), names));
    for (size_t k = 0; k < e.size(); ++k) m(static_cast<int>(k), i) = e[k];
  }
  return m;
}

ModelCfg tiny_cfg() {
  ModelCfg cfg;
  cfg.d_l = 24;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 12;
  cfg.dropout = 0.0;
  cfg.domain_hidden = 4;
  return cfg;
}

SequenceStore train_only_store(const SequenceStore& original, const SplitSpec& split,
                               const Catalog& catalog) {
  std::vector<std::pair<std::string, std::vector<Event>>> seqs;
  for (int i = 0; i < original.size(); ++i) {
    const UserSequence& seq = original.user(i);
    seqs.emplace_back(seq.user_id,
                      train_events(seq, split.users[static_cast<size_t>(i)]));
  }
  return store_from_ordered(seqs, catalog);
}

struct OracleTotals {
  double hr[2] = {0.0, 0.0};
  double ndcg[2] = {0.0, 0.0};
  int n[2] = {0, 0};
};

// Exhaustive full-sort scorer over explicit per-user input lists.
OracleTotals oracle_eval(const ModelState& model, const SequenceStore& original,
                         const SplitSpec& split, const Catalog& catalog,
                         const Mat& e_llm, int k, bool domain_threads,
                         const std::vector<std::vector<Event>>& input_lists) {
  OracleTotals t;
  for (int ui = 0; ui < original.size(); ++ui) {
    const UserSequence& seq = original.user(ui);
    const UserSplit& us = split.users[static_cast<size_t>(ui)];
    const std::vector<Event>& in = input_lists[static_cast<size_t>(ui)];
    if (in.empty()) continue;

    std::vector<Vec> mixed;
    for (const Event& ev : in) {
      mixed.push_back(adapt(e_llm.col(ev.item), model.global_adapter));
    }
    Vec u = encode(mixed, model.backbone);

    for (Domain d : {Domain::A, Domain::B}) {
      int pos = us.of(d).test_pos;
      if (pos < 0) continue;
      int target = seq.events[static_cast<size_t>(pos)].item;

      Vec u_dom;
      bool has_dom = false;
      if (domain_threads) {
        std::vector<Vec> view;
        for (const Event& ev : in) {
          if (catalog.item(ev.item).domain == d) {
            view.push_back(adapt(e_llm.col(ev.item), model.global_adapter));
          }
        }
        if (!view.empty()) {
          u_dom = domain_encode(view, model.backbone, model.domain_adapter(d),
                                model.cfg.residual_domain);
          has_dom = true;
        }
      }

      struct Row {
        int item;
        std::string id;
        double score;
      };
      std::vector<Row> rows;
      for (int c : catalog.items_of(d, true)) {
        Vec e = adapt(e_llm.col(c), model.global_adapter);
        double s = e.dot(u);
        if (has_dom) {
          Vec ed = model.cfg.domain_item_adapter
                       ? domain_item(e, model.domain_adapter(d),
                                     model.cfg.residual_domain)
                       : e;
          s += ed.dot(u_dom);
        }
        rows.push_back({c, catalog.item(c).item_id, s});
      }
      std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.id < y.id;
      });
      int rank = 0;
      for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].item == target) rank = static_cast<int>(i) + 1;
      }
      REQUIRE(rank > 0);
      int di = static_cast<int>(d);
      t.n[di] += 1;
      if (rank <= k) {
        t.hr[di] += 1.0;
        t.ndcg[di] += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
      }
    }
  }
  return t;
}

std::string dump_report(const EvalReport& r) {
  const fs::path dir = fs::temp_directory_path() / "edt_eval_dump";
  fs::create_directories(dir);
  const std::string path = (dir / "r.json").string();
  write_report_json(r, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("rank metric spot values") {
  Catalog catalog;
  for (int i = 0; i < 12; ++i) {
    catalog.add(make_item("b" + std::to_string(i), Domain::B, "Title " +
                          std::to_string(i)));
  }
  std::vector<std::pair<int, double>> scores;
  for (int i = 0; i < 3; ++i) scores.emplace_back(i, 10.0 - i);

  RankResult top = rank_metrics(scores, 0, 10, catalog);
  CHECK(top.rank == 1);
  CHECK(top.hit == 1);
  CHECK(top.ndcg == 1.0);

  RankResult second = rank_metrics(scores, 1, 10, catalog);
  CHECK(second.rank == 2);
  CHECK(second.hit == 1);
  CHECK(second.ndcg == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));

  std::vector<std::pair<int, double>> long_scores;
  for (int i = 0; i < 12; ++i) long_scores.emplace_back(i, 100.0 - i);
  RankResult miss = rank_metrics(long_scores, 10, 10, catalog);
  CHECK(miss.rank == 11);
  CHECK(miss.hit == 0);
  CHECK(miss.ndcg == 0.0);

  CHECK_THROWS_AS(rank_metrics(scores, 7, 10, catalog), UsageError);
}

TEST_CASE("equal scores order by item id") {
  Catalog catalog;
  int a = catalog.add(make_item("i-a", Domain::A, "Alpha"));
  int b = catalog.add(make_item("i-b", Domain::A, "Beta"));
  int c = catalog.add(make_item("i-c", Domain::A, "Gamma"));
  std::vector<std::pair<int, double>> scores = {{a, 1.0}, {b, 1.0}, {c, 0.5}};
  CHECK(rank_metrics(scores, a, 10, catalog).rank == 1);
  CHECK(rank_metrics(scores, b, 10, catalog).rank == 2);
  CHECK(rank_metrics(scores, c, 10, catalog).rank == 3);

  std::vector<std::pair<int, double>> shuffled = {{c, 0.5}, {b, 1.0}, {a, 1.0}};
  CHECK(rank_metrics(shuffled, b, 10, catalog).rank == 2);
}

TEST_CASE("rank depends only on score order") {
  Catalog catalog;
  for (int i = 0; i < 15; ++i) {
    catalog.add(make_item("x" + std::to_string(i), Domain::A, "T" +
                          std::to_string(i)));
  }
  uint64_t rng = 2024;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<int, double>> scores;
    for (int i = 0; i < 15; ++i) {
      double s = std::floor(splitmix_unit(rng) * 6.0);  // quantized, ties likely
      scores.emplace_back(i, s);
    }
    int target = static_cast<int>(splitmix64(rng) % 15);
    RankResult base = rank_metrics(scores, target, 10, catalog);

    std::vector<std::pair<int, double>> expd = scores;
    for (auto& [item, s] : expd) s = std::exp(s);
    RankResult e = rank_metrics(expd, target, 10, catalog);
    CHECK(e.rank == base.rank);
    CHECK(e.ndcg == base.ndcg);

    std::vector<std::pair<int, double>> affine = scores;
    for (auto& [item, s] : affine) s = 2.0 * s + 1.0;
    RankResult f = rank_metrics(affine, target, 10, catalog);
    CHECK(f.rank == base.rank);
    CHECK(f.hit == base.hit);
  }
}

TEST_CASE("rank matches a full-sort oracle") {
  Catalog catalog;
  for (int i = 0; i < 20; ++i) {
    catalog.add(make_item("c" + std::to_string(100 + i), Domain::B,
                          "Item " + std::to_string(i)));
  }
  uint64_t rng = 555;
  for (int trial = 0; trial < 200; ++trial) {
    int pool = 2 + static_cast<int>(splitmix64(rng) % 19);
    std::vector<std::pair<int, double>> scores;
    for (int i = 0; i < pool; ++i) {
      scores.emplace_back(i, std::floor(splitmix_unit(rng) * 5.0) * 0.5);
    }
    int target = static_cast<int>(splitmix64(rng) % static_cast<uint64_t>(pool));
    int k = 1 + static_cast<int>(splitmix64(rng) % 10);

    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end(),
              [&](const auto& x, const auto& y) {
                if (x.second != y.second) return x.second > y.second;
                return catalog.item(x.first).item_id < catalog.item(y.first).item_id;
              });
    int rank = 0;
    for (size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i].first == target) rank = static_cast<int>(i) + 1;
    }

    RankResult r = rank_metrics(scores, target, k, catalog);
    CAPTURE(trial);
    CHECK(r.rank == rank);
    CHECK(r.hit == (rank <= k ? 1 : 0));
    double want = rank <= k ? 1.0 / std::log2(rank + 1.0) : 0.0;
    CHECK(r.ndcg == want);
  }
}

TEST_CASE("history length buckets") {
  CHECK(length_bucket(1) == "Very Short");
  CHECK(length_bucket(5) == "Very Short");
  CHECK(length_bucket(6) == "Short");
  CHECK(length_bucket(10) == "Short");
  CHECK(length_bucket(11) == "Medium");
  CHECK(length_bucket(15) == "Medium");
  CHECK(length_bucket(16) == "Long");
  CHECK(length_bucket(20) == "Long");
  CHECK(length_bucket(21) == "Very Long");
  CHECK(length_bucket(500) == "Very Long");
  CHECK(length_bucket_labels().size() == 5);
}

TEST_CASE("imbalance buckets") {
  CHECK(ratio_bucket(1.0) == "r >= 0.95");
  CHECK(ratio_bucket(0.96) == "r >= 0.95");
  CHECK(ratio_bucket(0.95) == "r >= 0.95");
  CHECK(ratio_bucket(0.92) == "0.95 > r >= 0.9");
  CHECK(ratio_bucket(0.9) == "0.95 > r >= 0.9");
  CHECK(ratio_bucket(0.89) == "r < 0.9");
  CHECK(ratio_bucket(0.5) == "r < 0.9");
  CHECK(ratio_bucket(0.0) == "r < 0.9");
  CHECK(ratio_bucket_labels().size() == 3);
}

TEST_CASE("ordered store keeps placed synthetics in position") {
  Catalog catalog;
  int a0 = catalog.add(make_item("a0", Domain::A, "Alpha Zero"));
  int b0 = catalog.add(make_item("b0", Domain::B, "Beta Zero"));
  int b1 = catalog.add(make_item("b1", Domain::B, "Beta One"));
  int s = catalog.add(make_item("gen:1", Domain::B, "Synth One", true));

  std::vector<Event> ordered = {Event{a0, 100, 1}, Event{s, 0, 0},
                                Event{b0, 200, 2}, Event{b1, 300, 3}};
  SequenceStore store = store_from_ordered({{"u1", ordered}}, catalog);
  REQUIRE(store.size() == 1);
  const UserSequence& seq = store.user(0);
  REQUIRE(seq.events.size() == 4);
  CHECK(seq.events[0].item == a0);
  CHECK(seq.events[1].item == s);
  CHECK(seq.events[2].item == b0);
  CHECK(seq.events[3].item == b1);
  CHECK(seq.n_a == 1);
  CHECK(seq.n_b == 3);

  // Leading synthetic stays in front.
  std::vector<Event> lead = {Event{s, 0, 0}, Event{a0, 100, 1}, Event{b0, 200, 2}};
  SequenceStore store2 = store_from_ordered({{"u2", lead}}, catalog);
  CHECK(store2.user(0).events[0].item == s);
  CHECK(store2.user(0).events[1].item == a0);
}

TEST_CASE("validation events merge back chronologically") {
  Catalog catalog;
  int a0 = catalog.add(make_item("a0", Domain::A, "Alpha Zero"));
  int a1 = catalog.add(make_item("a1", Domain::A, "Alpha One"));
  int b0 = catalog.add(make_item("b0", Domain::B, "Beta Zero"));
  int b1 = catalog.add(make_item("b1", Domain::B, "Beta One"));
  int b2 = catalog.add(make_item("b2", Domain::B, "Beta Two"));
  int s = catalog.add(make_item("gen:2", Domain::B, "Synth Two", true));

  // Training prefix with a synthetic placed after its anchor a0.
  std::vector<Event> inputs = {Event{a0, 100, 1}, Event{s, 100, 1},
                               Event{b0, 200, 2}, Event{b1, 400, 4}};
  // Held-out validation events from the original sequence.
  std::vector<Event> valids = {Event{a1, 300, 3}, Event{b2, 500, 5}};

  std::vector<Event> merged = merge_validation_events(inputs, valids, catalog);
  REQUIRE(merged.size() == 6);
  CHECK(merged[0].item == a0);
  CHECK(merged[1].item == s);   // adjacency to the anchor survives
  CHECK(merged[2].item == b0);
  CHECK(merged[3].item == a1);  // before b1 by timestamp
  CHECK(merged[4].item == b1);
  CHECK(merged[5].item == b2);  // appended at the tail
}

TEST_CASE("evaluation matches the exhaustive oracle") {
  SynthConfig synth;
  synth.users = 20;
  synth.items_per_domain = 12;
  synth.ratio_target = 0.5;
  synth.seed = 909;
  synth.min_len = 10;
  synth.max_len = 20;
  auto [catalog, store] = synth_corpus(synth);
  SplitSpec split = leave_one_out(store, catalog);
  SequenceStore inputs = train_only_store(store, split, catalog);

  MockBackend backend(1, 24);
  Gateway gateway(backend, "");
  Mat e_llm = embed_catalog(catalog, gateway);

  ModelState model = make_model(tiny_cfg(), 3);
  EvalProtocol protocol;

  // Oracle inputs: the original events minus the test targets, which is what
  // the merge of train prefix + validation events must reproduce.
  std::vector<std::vector<Event>> lists;
  for (int i = 0; i < store.size(); ++i) {
    const UserSequence& seq = store.user(i);
    const UserSplit& us = split.users[static_cast<size_t>(i)];
    std::vector<Event> in;
    for (size_t p = 0; p < seq.events.size(); ++p) {
      if (static_cast<int>(p) == us.a.test_pos ||
          static_cast<int>(p) == us.b.test_pos) {
        continue;
      }
      in.push_back(seq.events[p]);
    }
    lists.push_back(std::move(in));
  }

  SUBCASE("shared representation only") {
    EvalReport report = evaluate(model, store, split, inputs, catalog, e_llm,
                                 protocol, EvalStage::test, false, "full");
    OracleTotals t = oracle_eval(model, store, split, catalog, e_llm,
                                 protocol.cutoff, false, lists);
    REQUIRE(t.n[0] > 0);
    REQUIRE(t.n[1] > 0);
    CHECK(report.a.users == t.n[0]);
    CHECK(report.b.users == t.n[1]);
    CHECK(report.a.hr == doctest::Approx(t.hr[0] / t.n[0]).epsilon(1e-12));
    CHECK(report.a.ndcg == doctest::Approx(t.ndcg[0] / t.n[0]).epsilon(1e-12));
    CHECK(report.b.hr == doctest::Approx(t.hr[1] / t.n[1]).epsilon(1e-12));
    CHECK(report.b.ndcg == doctest::Approx(t.ndcg[1] / t.n[1]).epsilon(1e-12));
    CHECK(report.a.hr >= 0.0);
    CHECK(report.a.hr <= 1.0);
    CHECK(report.a.ndcg <= 1.0);
    CHECK(report.evaluated_users > 0);
  }

  SUBCASE("domain threads") {
    model.backbone.frozen = true;
    uint64_t rng = 77;
    model.domain_a = init_adapter(8, 4, 8, rng, 0.3);
    model.domain_b = init_adapter(8, 4, 8, rng, 0.3);
    EvalReport report = evaluate(model, store, split, inputs, catalog, e_llm,
                                 protocol, EvalStage::test, true, "full");
    OracleTotals t = oracle_eval(model, store, split, catalog, e_llm,
                                 protocol.cutoff, true, lists);
    CHECK(report.a.users == t.n[0]);
    CHECK(report.b.users == t.n[1]);
    CHECK(report.a.hr == doctest::Approx(t.hr[0] / t.n[0]).epsilon(1e-12));
    CHECK(report.a.ndcg == doctest::Approx(t.ndcg[0] / t.n[0]).epsilon(1e-12));
    CHECK(report.b.hr == doctest::Approx(t.hr[1] / t.n[1]).epsilon(1e-12));
    CHECK(report.b.ndcg == doctest::Approx(t.ndcg[1] / t.n[1]).epsilon(1e-12));
  }

  SUBCASE("bucket populations partition the evaluated users") {
    EvalReport report = evaluate(model, store, split, inputs, catalog, e_llm,
                                 protocol, EvalStage::test, false, "full");
    int len_a = 0, len_b = 0, ratio_a = 0, ratio_b = 0;
    for (const BucketRow& row : report.length_buckets) {
      len_a += row.a.users;
      len_b += row.b.users;
    }
    for (const BucketRow& row : report.ratio_buckets) {
      ratio_a += row.a.users;
      ratio_b += row.b.users;
    }
    CHECK(len_a == report.a.users);
    CHECK(len_b == report.b.users);
    CHECK(ratio_a == report.a.users);
    CHECK(ratio_b == report.b.users);
    REQUIRE(report.length_buckets.size() == 5);
    REQUIRE(report.ratio_buckets.size() == 3);
  }

  SUBCASE("repeated evaluation is identical") {
    EvalReport r1 = evaluate(model, store, split, inputs, catalog, e_llm,
                             protocol, EvalStage::test, false, "full");
    EvalReport r2 = evaluate(model, store, split, inputs, catalog, e_llm,
                             protocol, EvalStage::test, false, "full");
    CHECK(dump_report(r1) == dump_report(r2));
  }

  SUBCASE("validation stage uses fewer inputs") {
    EvalReport r = evaluate(model, store, split, inputs, catalog, e_llm,
                            protocol, EvalStage::validation, false, "full");
    CHECK(r.stage == "validation");
    CHECK(r.a.users > 0);
    CHECK(r.b.users > 0);
  }

  SUBCASE("sampled pools dominate the full catalog pointwise") {
    EvalProtocol sampled;
    sampled.mode = EvalMode::sampled;
    sampled.sampled_negatives = 5;
    EvalReport rs = evaluate(model, store, split, inputs, catalog, e_llm,
                             sampled, EvalStage::test, false, "full");
    EvalReport rf = evaluate(model, store, split, inputs, catalog, e_llm,
                             protocol, EvalStage::test, false, "full");
    CHECK(rs.protocol == "sampled-5");
    CHECK(rs.a.hr >= rf.a.hr - 1e-12);
    CHECK(rs.b.hr >= rf.b.hr - 1e-12);
    CHECK(rs.a.ndcg >= rf.a.ndcg - 1e-12);
    CHECK(rs.b.ndcg >= rf.b.ndcg - 1e-12);

    EvalReport rs2 = evaluate(model, store, split, inputs, catalog, e_llm,
                              sampled, EvalStage::test, false, "full");
    CHECK(dump_report(rs) == dump_report(rs2));
  }

  SUBCASE("an oversized sample reduces to the full catalog") {
    EvalProtocol sampled;
    sampled.mode = EvalMode::sampled;
    sampled.sampled_negatives = 200;  // pools hold only 12 items
    EvalReport rs = evaluate(model, store, split, inputs, catalog, e_llm,
                             sampled, EvalStage::test, false, "full");
    EvalReport rf = evaluate(model, store, split, inputs, catalog, e_llm,
                             protocol, EvalStage::test, false, "full");
    CHECK(rs.a.hr == rf.a.hr);
    CHECK(rs.a.ndcg == rf.a.ndcg);
    CHECK(rs.b.hr == rf.b.hr);
    CHECK(rs.b.ndcg == rf.b.ndcg);
  }
}

TEST_CASE("synthetic history feeds the model but never the pools") {
  Catalog catalog;
  int a0 = catalog.add(make_item("a0", Domain::A, "Alpha Zero"));
  int a1 = catalog.add(make_item("a1", Domain::A, "Alpha One"));
  int a2 = catalog.add(make_item("a2", Domain::A, "Alpha Two"));
  int b0 = catalog.add(make_item("b0", Domain::B, "Beta Zero"));
  int b1 = catalog.add(make_item("b1", Domain::B, "Beta One"));
  int b2 = catalog.add(make_item("b2", Domain::B, "Beta Two"));
  int b3 = catalog.add(make_item("b3", Domain::B, "Beta Three"));
  int s = catalog.add(make_item("gen:9", Domain::B, "Synth Nine", true));

  SequenceStore original;
  int64_t t = 1000;
  int order = 0;
  for (int item : {a0, b0, a1, b1, a2, b2, b3}) {
    original.add_event("u9", Event{item, t, order});
    t += 100;
    ++order;
  }
  original.finalize(catalog);
  SplitSpec split = leave_one_out(original, catalog);
  REQUIRE(split.users[0].a.test_pos >= 0);
  REQUIRE(split.users[0].b.test_pos >= 0);

  // Augmented training prefix: synthetic placed right after its anchor a0.
  std::vector<Event> train = train_events(original.user(0), split.users[0]);
  REQUIRE(train.size() == 3);
  std::vector<Event> with_syn = {train[0], Event{s, 0, 0}, train[1], train[2]};
  SequenceStore inputs = store_from_ordered({{"u9", with_syn}}, catalog);

  MockBackend backend(8, 24);
  Gateway gateway(backend, "");
  Mat e_llm = embed_catalog(catalog, gateway);
  ModelState model = make_model(tiny_cfg(), 6);
  model.backbone.frozen = true;
  uint64_t rng = 55;
  model.domain_a = init_adapter(8, 4, 8, rng, 0.3);
  model.domain_b = init_adapter(8, 4, 8, rng, 0.3);

  EvalProtocol protocol;
  EvalReport report = evaluate(model, original, split, inputs, catalog, e_llm,
                               protocol, EvalStage::test, true, "full");

  // Hand-built expected input: prefix + synthetic + both validation events.
  const UserSequence& seq = original.user(0);
  std::vector<Event> expected = {
      seq.events[0], Event{s, 0, 0},           seq.events[1],
      seq.events[2],  // validation target of A, merged back
      seq.events[3],  seq.events[5],           // validation target of B at tail
  };
  std::vector<std::vector<Event>> lists = {expected};
  OracleTotals oracle = oracle_eval(model, original, split, catalog, e_llm,
                                    protocol.cutoff, true, lists);
  REQUIRE(oracle.n[0] == 1);
  REQUIRE(oracle.n[1] == 1);
  CHECK(report.a.users == 1);
  CHECK(report.b.users == 1);
  CHECK(report.a.hr == doctest::Approx(oracle.hr[0]).epsilon(1e-12));
  CHECK(report.a.ndcg == doctest::Approx(oracle.ndcg[0]).epsilon(1e-12));
  CHECK(report.b.hr == doctest::Approx(oracle.hr[1]).epsilon(1e-12));
  CHECK(report.b.ndcg == doctest::Approx(oracle.ndcg[1]).epsilon(1e-12));
}

TEST_CASE("reports average across seeds") {
  EvalReport r1;
  r1.variant = "full";
  r1.protocol = "full-catalog";
  r1.stage = "test";
  r1.cutoff = 10;
  r1.a = {0.4, 0.3, 10};
  r1.b = {0.6, 0.5, 8};
  for (const std::string& label : length_bucket_labels()) {
    r1.length_buckets.push_back({label, {0.2, 0.1, 2}, {0.4, 0.2, 2}});
  }
  for (const std::string& label : ratio_bucket_labels()) {
    r1.ratio_buckets.push_back({label, {0.2, 0.1, 3}, {0.4, 0.2, 3}});
  }
  r1.evaluated_users = 10;

  EvalReport r2 = r1;
  r2.a.hr = 0.6;
  r2.length_buckets[0].a.hr = 0.4;

  EvalReport avg = average_reports({r1, r2});
  CHECK(avg.a.hr == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.a.ndcg == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(avg.b.hr == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(avg.length_buckets[0].a.hr == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(avg.length_buckets[1].a.hr == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(avg.variant == "full");

  EvalReport identical = average_reports({r1, r1});
  CHECK(identical.a.hr == r1.a.hr);

  EvalReport other = r1;
  other.variant = "no-aug";
  CHECK_THROWS_AS(average_reports({r1, other}), UsageError);
  CHECK_THROWS_AS(average_reports({}), UsageError);
}

TEST_CASE("variant comparison tables") {
  EvalReport full;
  full.variant = "full";
  full.protocol = "full-catalog";
  full.stage = "test";
  full.cutoff = 10;
  full.a = {0.5, 0.4, 10};
  full.b = {0.7, 0.6, 10};

  EvalReport ablated = full;
  ablated.variant = "no-aug";
  ablated.a.hr = 0.45;

  VariantTable table = compare_variants({full, ablated});
  CHECK(table.markdown.find("| full |") != std::string::npos);
  CHECK(table.markdown.find("| no-aug |") != std::string::npos);
  CHECK(table.markdown.find("-0.0500") != std::string::npos);
  CHECK(table.markdown.find("paper reference - not reproduced") !=
        std::string::npos);
  CHECK(table.csv.find("no-aug,0.4500") != std::string::npos);

  VariantTable same = compare_variants({full, full});
  size_t zeros = 0;
  for (size_t pos = 0; (pos = same.csv.find("0.0000", pos)) != std::string::npos;
       ++pos) {
    ++zeros;
  }
  CHECK(zeros >= 8);  // both rows delta columns

  EvalReport sampled = ablated;
  sampled.protocol = "sampled-99";
  CHECK_THROWS_AS(compare_variants({full, sampled}), UsageError);
  CHECK_THROWS_AS(compare_variants({}), UsageError);

  // Baseline falls back to the first row when no "full" report is present.
  EvalReport x = full;
  x.variant = "no-dft";
  VariantTable fallback = compare_variants({x, ablated});
  CHECK(fallback.csv.find("no-dft,0.5000") != std::string::npos);
}

TEST_CASE("report files round-trip and embed references") {
  EvalReport r;
  r.variant = "full";
  r.protocol = "full-catalog";
  r.stage = "test";
  r.cutoff = 10;
  r.a = {0.8104, 0.7488, 55};
  r.b = {0.5, 0.25, 44};
  for (const std::string& label : length_bucket_labels()) {
    r.length_buckets.push_back({label, {0.25, 0.125, 11}, {0.1, 0.05, 9}});
  }
  for (const std::string& label : ratio_bucket_labels()) {
    r.ratio_buckets.push_back({label, {0.25, 0.125, 18}, {0.1, 0.05, 15}});
  }
  r.evaluated_users = 55;

  const fs::path dir = fs::temp_directory_path() / "edt_eval_report";
  fs::create_directories(dir);
  const std::string json_path = (dir / "report.json").string();
  const std::string csv_path = (dir / "report.csv").string();
  const std::string md_path = (dir / "report.md").string();

  write_report_json(r, json_path);
  write_report_csv(r, csv_path);
  write_report_md(r, md_path);

  EvalReport back = read_report_json(json_path);
  CHECK(back.variant == r.variant);
  CHECK(back.protocol == r.protocol);
  CHECK(back.stage == r.stage);
  CHECK(back.cutoff == r.cutoff);
  CHECK(back.a.hr == r.a.hr);
  CHECK(back.a.ndcg == r.a.ndcg);
  CHECK(back.b.users == r.b.users);
  REQUIRE(back.length_buckets.size() == 5);
  CHECK(back.length_buckets[2].label == r.length_buckets[2].label);
  CHECK(back.length_buckets[2].a.hr == r.length_buckets[2].a.hr);
  CHECK(back.ratio_buckets[1].b.ndcg == r.ratio_buckets[1].b.ndcg);
  CHECK(back.evaluated_users == r.evaluated_users);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::string json_text = slurp(json_path);
  CHECK(json_text.find("paper reference - not reproduced") != std::string::npos);
  CHECK(json_text.find("0.8104") != std::string::npos);
  std::string md_text = slurp(md_path);
  CHECK(md_text.find("paper reference - not reproduced") != std::string::npos);
  CHECK(md_text.find("0.8104") != std::string::npos);
  CHECK(md_text.find("Very Short") != std::string::npos);
  std::string csv_text = slurp(csv_path);
  CHECK(csv_text.rfind("variant,stage,protocol,section,label,domain,hr,ndcg,users",
                       0) == 0);

  write_report_json(r, (dir / "report2.json").string());
  CHECK(slurp((dir / "report2.json").string()) == json_text);

  CHECK_THROWS_AS(read_report_json((dir / "missing.json").string()), DataError);

  SynthConfig synth;
  synth.users = 30;
  synth.items_per_domain = 10;
  auto [catalog, store] = synth_corpus(synth);
  const std::string hist_path = (dir / "hist.csv").string();
  write_ratio_histogram_csv(store, hist_path);
  std::ifstream hist(hist_path);
  std::string line;
  std::getline(hist, line);
  CHECK(line == "bin_low,bin_high,users");
  int total = 0;
  while (std::getline(hist, line)) {
    size_t comma = line.rfind(',');
    total += std::stoi(line.substr(comma + 1));
  }
  CHECK(total == 30);
}
