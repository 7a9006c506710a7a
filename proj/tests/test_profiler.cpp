#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "edt/profiler.hpp"
#include "nlohmann/json.hpp"

using namespace edt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ItemRecord make_item(const std::string& id, Domain d, const std::string& title) {
  ItemRecord rec;
  rec.item_id = id;
  rec.domain = d;
  rec.title = title;
  rec.brand = "BrandX";
  rec.date = "2020-01-01";
  rec.price = "9.99";
  rec.categories = {"core"};
  rec.description = "plain";
  return rec;
}

Event ev(int item, int64_t ts) { return Event{item, ts, static_cast<int>(ts)}; }

bool same_events(const std::vector<Event>& a, const std::vector<Event>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].item != b[i].item || a[i].timestamp != b[i].timestamp ||
        a[i].ingest_order != b[i].ingest_order) {
      return false;
    }
  }
  return true;
}

std::vector<Event> flatten(const ClusterPartition& part) {
  std::vector<Event> all;
  for (const auto& g : part.groups) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end(), [](const Event& x, const Event& y) {
    return std::pair(x.timestamp, x.ingest_order) <
           std::pair(y.timestamp, y.ingest_order);
  });
  return all;
}

std::set<std::string> token_set(const std::string& text) {
  std::set<std::string> out;
  for (const std::string& t : tokenize_lower(text)) out.insert(t);
  return out;
}

Mat embed_catalog(const Catalog& catalog, Gateway& gateway, const DomainNames& names) {
  Mat m(gateway.dim(), catalog.size());
  for (int i = 0; i < catalog.size(); ++i) {
    std::vector<float> e = gateway.embed(item_text(catalog.item(i), names));
    for (size_t k = 0; k < e.size(); ++k) m(static_cast<int>(k), i) = e[k];
  }
  return m;
}

bool same_profile(const UserProfile& x, const UserProfile& y) {
  return x.user_id == y.user_id && x.summaries_a == y.summaries_a &&
         x.summaries_b == y.summaries_b && x.reform_bucket == y.reform_bucket &&
         x.analysis == y.analysis;
}

}  // namespace

TEST_CASE("one requested cluster keeps the whole view") {
  Mat m(4, 3);
  m << 1, 0, 0.5, 0, 1, 0.5, 0, 0, 1, 1, 0, 0;
  std::vector<Event> view = {ev(0, 10), ev(1, 20), ev(2, 30)};
  ClusterPartition part = cluster_domain(view, Domain::A, m, 1, 99);
  CHECK(part.domain == Domain::A);
  REQUIRE(part.groups.size() == 1);
  CHECK(same_events(part.groups[0], view));
  CHECK(part.assignment == std::vector<int>{0, 0, 0});
}

TEST_CASE("separated blobs land in separate groups") {
  Mat m = Mat::Zero(4, 6);
  for (int i = 0; i < 3; ++i) {
    m(0, i) = 1.0 + 0.01 * i;
    m(0, 3 + i) = -1.0 - 0.01 * i;
    m(1, 3 + i) = 5.0;
  }
  std::vector<Event> view = {ev(0, 1), ev(3, 2), ev(1, 3),
                             ev(4, 4), ev(2, 5), ev(5, 6)};
  ClusterPartition part = cluster_domain(view, Domain::B, m, 2, 7);
  REQUIRE(part.groups.size() == 2);
  for (const auto& group : part.groups) {
    REQUIRE(!group.empty());
    bool low = group[0].item < 3;
    for (const Event& e : group) CHECK((e.item < 3) == low);
    for (size_t i = 1; i < group.size(); ++i) {
      CHECK(group[i - 1].timestamp < group[i].timestamp);
    }
  }
  CHECK(same_events(flatten(part), view));
}

TEST_CASE("groups partition the view") {
  Mat m(3, 6);
  uint64_t rng = 31;
  for (int j = 0; j < 6; ++j) {
    for (int i = 0; i < 3; ++i) m(i, j) = splitmix_unit(rng) * 4.0 - 2.0;
  }
  std::vector<Event> view;
  for (int t = 0; t < 10; ++t) view.push_back(ev(t % 6, 100 + t));
  ClusterPartition part = cluster_domain(view, Domain::A, m, 3, 11);
  REQUIRE(!part.groups.empty());
  CHECK(part.groups.size() <= 3);
  size_t total = 0;
  for (const auto& g : part.groups) {
    CHECK(!g.empty());
    total += g.size();
  }
  CHECK(total == view.size());
  CHECK(same_events(flatten(part), view));
  REQUIRE(part.assignment.size() == view.size());
  for (size_t i = 0; i < view.size(); ++i) {
    int g = part.assignment[i];
    REQUIRE(g >= 0);
    REQUIRE(g < static_cast<int>(part.groups.size()));
    bool found = false;
    for (const Event& e : part.groups[g]) {
      if (e.item == view[i].item && e.timestamp == view[i].timestamp) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("cluster count is capped by distinct items") {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  std::vector<Event> view = {ev(0, 1), ev(1, 2), ev(0, 3),
                             ev(1, 4), ev(0, 5), ev(1, 6)};
  ClusterPartition part = cluster_domain(view, Domain::A, m, 10, 3);
  CHECK(part.groups.size() == 2);
  CHECK(same_events(flatten(part), view));
}

TEST_CASE("cluster input validation") {
  Mat m = Mat::Zero(2, 2);
  std::vector<Event> view = {ev(0, 1)};
  CHECK_THROWS_AS(cluster_domain(view, Domain::A, m, 0, 1), UsageError);
  ClusterPartition empty = cluster_domain({}, Domain::B, m, 4, 1);
  CHECK(empty.groups.empty());
  CHECK(empty.assignment.empty());
  std::vector<Event> bad = {ev(5, 1)};
  CHECK_THROWS_AS(cluster_domain(bad, Domain::A, m, 1, 1), DataError);
}

TEST_CASE("imbalance buckets with edges going up") {
  struct Row {
    double ratio;
    int bucket;
  };
  const Row rows[] = {{0.0, 1},  {0.1, 1},  {0.19, 1}, {0.2, 2}, {0.3, 2},
                      {0.4, 3},  {0.5, 3},  {0.6, 4},  {0.7, 4}, {0.8, 5},
                      {0.9, 5},  {0.95, 5}, {1.0, 5}};
  for (const Row& r : rows) {
    CAPTURE(r.ratio);
    CHECK(reform_bucket(r.ratio) == r.bucket);
    ReformInstruction instr = build_reform(r.ratio);
    CHECK(instr.bucket == r.bucket);
    CHECK(instr.ratio == r.ratio);
    CHECK(instr.text == reform_text(r.bucket));
    CHECK(!instr.text.empty());
  }
  CHECK(reform_label(1) == "balanced");
  CHECK(reform_label(5) == "extremely dominant");
  CHECK_THROWS_AS(build_reform(-0.001), UsageError);
  CHECK_THROWS_AS(build_reform(1.001), UsageError);
  CHECK_THROWS_AS(reform_text(0), UsageError);
  CHECK_THROWS_AS(reform_label(6), UsageError);
}

TEST_CASE("reform options file matches the embedded table") {
  std::ifstream in(EDT_SOURCE_DIR "/data/reform_options.json");
  REQUIRE(in.good());
  json j = json::parse(in);
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 5);
  for (const json& entry : j) {
    int bucket = entry["bucket"].get<int>();
    CHECK(entry["label"].get<std::string>() == reform_label(bucket));
    CHECK(entry["text"].get<std::string>() == reform_text(bucket));
  }
}

TEST_CASE("cluster summary reflects the cluster vocabulary") {
  Catalog catalog;
  catalog.add(make_item("a1", Domain::A, "Quantum Telescope Primer"));
  catalog.add(make_item("a2", Domain::A, "Telescope Mirror Kit"));
  catalog.add(make_item("a3", Domain::A, "Nebula Star Atlas"));
  MockBackend backend(3, 32);
  Gateway gateway(backend, "");
  DomainNames names;
  ReformInstruction reform = build_reform(0.0);
  std::vector<Event> group = {ev(0, 1), ev(1, 2), ev(2, 3)};

  std::string summary =
      summarize_cluster(group, Domain::A, reform, catalog, gateway, names);
  CHECK(!summary.empty());
  std::set<std::string> title_tokens;
  for (int i = 0; i < catalog.size(); ++i) {
    for (const std::string& t : tokenize_lower(catalog.item(i).title)) {
      title_tokens.insert(t);
    }
  }
  std::set<std::string> summary_tokens = token_set(summary);
  bool mentions = false;
  for (const std::string& t : summary_tokens) {
    if (title_tokens.count(t)) mentions = true;
  }
  CHECK(mentions);

  std::string again =
      summarize_cluster(group, Domain::A, reform, catalog, gateway, names);
  CHECK(summary == again);

  CHECK_THROWS_AS(summarize_cluster({}, Domain::A, reform, catalog, gateway, names),
                  UsageError);
}

TEST_CASE("analysis merges both domains and tolerates one side") {
  MockBackend backend(4, 32);
  Gateway gateway(backend, "");
  DomainNames names;
  ReformInstruction reform = build_reform(0.5);
  std::vector<std::string> sa = {"Mostly drawn to quantum telescope overall."};
  std::vector<std::string> sb = {"Mostly drawn to velvet sofa overall."};

  std::string both = analyze_user(sa, sb, reform, gateway, names);
  CHECK(both.find("quantum") != std::string::npos);
  CHECK(both.find("sofa") != std::string::npos);

  std::string only_a = analyze_user(sa, {}, reform, gateway, names);
  CHECK(!only_a.empty());
  CHECK(only_a != both);
  CHECK(only_a == analyze_user(sa, {}, reform, gateway, names));

  std::string only_b = analyze_user({}, sb, reform, gateway, names);
  CHECK(!only_b.empty());

  CHECK_THROWS_AS(analyze_user({}, {}, reform, gateway, names), UsageError);
}

TEST_CASE("profile projection goes through the adapter") {
  MockBackend backend(9, 16);
  Gateway gateway(backend, "");

  AdapterParams zero = zero_adapter(16, 8, 4);
  Vec p0 = project_profile("whatever text", gateway, zero);
  REQUIRE(p0.size() == 4);
  CHECK(p0.cwiseAbs().maxCoeff() == 0.0);

  uint64_t rng = 17;
  AdapterParams ad = init_adapter(16, 8, 4, rng);
  std::string text = "telescope and sofa enthusiast";
  Vec p = project_profile(text, gateway, ad);
  std::vector<float> emb = gateway.embed(text);
  Vec e(16);
  for (int i = 0; i < 16; ++i) e[i] = emb[static_cast<size_t>(i)];
  Vec expect = adapt(e, ad);
  REQUIRE(p.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == expect[i]);

  AdapterParams wide = zero_adapter(32, 8, 4);
  CHECK_THROWS_AS(project_profile(text, gateway, wide), UsageError);
}

TEST_CASE("profile projection matches the model dimensions") {
  MockBackend backend(2, 256);
  Gateway gateway(backend, "");
  ModelState model = make_model(ModelCfg{}, 5);
  Vec p = project_profile("mixed domain shopper", gateway, model.profile_adapter);
  CHECK(p.size() == 128);
}

TEST_CASE("full profiling pass is deterministic and round-trips") {
  SynthConfig synth;
  synth.users = 5;
  synth.items_per_domain = 12;
  synth.seed = 77;
  synth.min_len = 8;
  synth.max_len = 14;
  auto [catalog, store] = synth_corpus(synth);
  MockBackend backend(5, 48);
  Gateway gateway(backend, "");
  ProfilerConfig config;
  config.cluster_count = 3;
  Mat e_llm = embed_catalog(catalog, gateway, config.names);

  std::vector<UserProfile> profiles =
      profile_users(store, catalog, e_llm, gateway, config);
  REQUIRE(static_cast<int>(profiles.size()) == store.size());
  for (int i = 0; i < store.size(); ++i) {
    const UserProfile& p = profiles[static_cast<size_t>(i)];
    CHECK(p.user_id == store.user(i).user_id);
    CHECK(p.reform_bucket >= 1);
    CHECK(p.reform_bucket <= 5);
    CHECK(p.summaries_a.size() <= 3);
    CHECK(p.summaries_b.size() <= 3);
    CHECK(p.summaries_a.size() + p.summaries_b.size() > 0);
    CHECK(!p.analysis.empty());
    CHECK(p.reform_bucket == build_reform(domain_ratio(store.user(i))).bucket);
  }

  std::vector<UserProfile> again =
      profile_users(store, catalog, e_llm, gateway, config);
  REQUIRE(again.size() == profiles.size());
  for (size_t i = 0; i < profiles.size(); ++i) {
    CHECK(same_profile(profiles[i], again[i]));
  }

  const fs::path dir = fs::temp_directory_path() / "edt_profiler_test";
  fs::create_directories(dir);
  const std::string path = (dir / "profiles.jsonl").string();
  write_profiles_jsonl(profiles, path);
  std::vector<UserProfile> loaded = read_profiles_jsonl(path);
  REQUIRE(loaded.size() == profiles.size());
  for (size_t i = 0; i < profiles.size(); ++i) {
    CHECK(same_profile(profiles[i], loaded[i]));
  }

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  json j = json::parse(line);
  CHECK(j["user_id"].is_string());
  CHECK(j["summaries_A"].is_array());
  CHECK(j["summaries_B"].is_array());
  CHECK(j["reform_bucket"].is_number_integer());
  CHECK(j["analysis"].is_string());

  std::map<std::string, Vec> embs = profile_embeddings(profiles, gateway);
  REQUIRE(embs.size() == profiles.size());
  for (const UserProfile& p : profiles) {
    REQUIRE(embs.count(p.user_id) == 1);
    const Vec& e = embs.at(p.user_id);
    REQUIRE(e.size() == 48);
    std::vector<float> raw = gateway.embed(p.analysis);
    for (int k = 0; k < 48; ++k) {
      CHECK(e[k] == static_cast<double>(raw[static_cast<size_t>(k)]));
    }
  }
}

TEST_CASE("profiling rejects an empty sequence") {
  Catalog catalog;
  catalog.add(make_item("a1", Domain::A, "Solo Item"));
  MockBackend backend(6, 16);
  Gateway gateway(backend, "");
  Mat e_llm = Mat::Zero(16, 1);
  UserSequence seq;
  seq.user_id = "u-empty";
  CHECK_THROWS_AS(profile_user(seq, catalog, e_llm, gateway, ProfilerConfig{}),
                  DataError);
}
