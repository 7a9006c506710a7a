#include "edt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <utility>

#include <nlohmann/json.hpp>

#include "edt/prompts.hpp"

namespace fs = std::filesystem;

namespace edt {

namespace {

const std::vector<std::string> kVariantNames = {
    "full",      "no-aug",    "no-dft",       "no-profiling",
    "no-filter", "no-insert", "random-insert", "no-sra",
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

Variant variant_from_string(const std::string& name) {
  for (size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  }
  std::string known;
  for (const std::string& n : kVariantNames) {
    if (!known.empty()) known += ", ";
    known += n;
  }
  throw UsageError("unknown variant '" + name + "' (expected one of " + known + ")");
}

const std::string& variant_name(Variant v) {
  return kVariantNames[static_cast<size_t>(v)];
}

const std::vector<std::string>& variant_names() { return kVariantNames; }

std::vector<uint64_t> parse_uint_list(const std::string& text,
                                      const std::string& what) {
  std::vector<uint64_t> out;
  for (const std::string& tok : split_commas(text)) {
    if (tok.empty()) throw UsageError(what + ": empty entry in '" + text + "'");
    uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw UsageError(what + ": '" + tok + "' is not an unsigned integer");
    }
    out.push_back(value);
  }
  if (out.empty()) throw UsageError(what + " list is empty");
  return out;
}

std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& what) {
  std::vector<double> out;
  for (const std::string& tok : split_commas(text)) {
    if (tok.empty()) throw UsageError(what + ": empty entry in '" + text + "'");
    size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw UsageError(what + ": '" + tok + "' is not a number");
    }
    if (used != tok.size()) {
      throw UsageError(what + ": '" + tok + "' is not a number");
    }
    out.push_back(value);
  }
  if (out.empty()) throw UsageError(what + " list is empty");
  return out;
}

std::vector<uint64_t> RunConfig::seed_list() const {
  return parse_uint_list(seeds, "seeds");
}

EvalProtocol RunConfig::protocol() const {
  EvalProtocol p;
  if (eval_mode == "full") {
    p.mode = EvalMode::full_catalog;
  } else if (eval_mode == "sampled") {
    p.mode = EvalMode::sampled;
  } else {
    throw UsageError("unknown eval-mode '" + eval_mode + "' (use full or sampled)");
  }
  p.sampled_negatives = eval_negatives;
  p.cutoff = cutoff;
  p.sample_seed = sample_seed;
  return p;
}

ModelCfg RunConfig::model_cfg(int d_l) const {
  ModelCfg m;
  m.d_l = d_l;
  m.d = d;
  m.layers = layers;
  m.heads = heads;
  m.max_len = max_len;
  m.dropout = dropout;
  m.domain_hidden = domain_hidden;
  return m;
}

fs::path corpus_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "corpus"; }

fs::path variant_dir(const RunConfig& cfg, Variant v) {
  return fs::path(cfg.out_dir) / variant_name(v);
}

fs::path run_dir(const RunConfig& cfg, Variant v, uint64_t seed) {
  return variant_dir(cfg, v) / std::to_string(seed);
}

BackendHandle open_backend(const RunConfig& cfg) {
  BackendHandle h;
  if (cfg.backend == "mock") {
    h.backend = std::make_unique<MockBackend>(cfg.mock_seed, cfg.mock_dim);
  } else if (cfg.backend == "http") {
    if (cfg.base_url.empty()) throw UsageError("http backend requires base-url");
    HttpBackendConfig hc;
    hc.base_url = cfg.base_url;
    hc.chat_model = cfg.chat_model;
    hc.embed_model = cfg.embed_model;
    hc.api_key_env = cfg.api_key_env;
    h.backend = std::make_unique<HttpBackend>(hc);
  } else {
    throw UsageError("unknown backend '" + cfg.backend + "' (use mock or http)");
  }
  h.gateway = std::make_unique<Gateway>(*h.backend, cfg.cache_dir);
  return h;
}

namespace {

// Loaded corpus plus the per-user train prefixes every stage works from.
struct Ctx {
  RunConfig cfg;
  Variant v = Variant::full;
  DomainNames nm;
  BackendHandle bh;
  Catalog catalog;
  SequenceStore store;
  SplitSpec split;
  std::vector<std::string> user_ids;
  std::vector<std::vector<Event>> train;
};

void write_corpus_files(const RunConfig& cfg, const Catalog& catalog,
                        const SequenceStore& store) {
  fs::path dir = corpus_dir(cfg);
  fs::create_directories(dir);
  write_catalog_jsonl(catalog, (dir / "catalog.jsonl").string());
  write_interactions_jsonl(store, catalog, (dir / "interactions.jsonl").string());
}

std::pair<Catalog, SequenceStore> load_corpus(const RunConfig& cfg) {
  fs::path cat = corpus_dir(cfg) / "catalog.jsonl";
  fs::path inter = corpus_dir(cfg) / "interactions.jsonl";
  if (!fs::exists(cat) || !fs::exists(inter)) {
    throw DataError("missing " + cat.string() +
                    "; run the synth or ingest command first");
  }
  return ingest(cat.string(), inter.string());
}

std::pair<Catalog, SequenceStore> ensure_corpus(const RunConfig& cfg) {
  fs::path cat = corpus_dir(cfg) / "catalog.jsonl";
  fs::path inter = corpus_dir(cfg) / "interactions.jsonl";
  if (fs::exists(cat) && fs::exists(inter)) {
    return ingest(cat.string(), inter.string());
  }
  if (!cfg.catalog_path.empty() || !cfg.interactions_path.empty()) {
    if (cfg.catalog_path.empty() || cfg.interactions_path.empty()) {
      throw UsageError("ingest needs both catalog and interactions paths");
    }
    auto pair = ingest(cfg.catalog_path, cfg.interactions_path);
    write_corpus_files(cfg, pair.first, pair.second);
    return pair;
  }
  SynthConfig sc;
  sc.users = cfg.synth_users;
  sc.items_per_domain = cfg.synth_items;
  sc.ratio_target = cfg.synth_ratio;
  sc.seed = cfg.synth_seed;
  auto pair = synth_corpus(sc);
  write_corpus_files(cfg, pair.first, pair.second);
  return pair;
}

Ctx make_ctx(const RunConfig& cfg, bool create_corpus) {
  Ctx ctx;
  ctx.cfg = cfg;
  ctx.v = cfg.variant_value();
  ctx.nm = cfg.names();
  ctx.bh = open_backend(cfg);
  auto pair = create_corpus ? ensure_corpus(cfg) : load_corpus(cfg);
  ctx.catalog = std::move(pair.first);
  ctx.store = std::move(pair.second);
  ctx.split = leave_one_out(ctx.store, ctx.catalog, cfg.min_per_domain);
  for (int i = 0; i < ctx.store.size(); ++i) {
    const UserSequence& seq = ctx.store.user(i);
    ctx.user_ids.push_back(seq.user_id);
    ctx.train.push_back(train_events(seq, ctx.split.users[i]));
  }
  return ctx;
}

AugmenterConfig augmenter_config(const Ctx& ctx) {
  AugmenterConfig ac;
  ac.cluster_count = ctx.cfg.rep_clusters;
  ac.gen_budget = ctx.cfg.gen_budget;
  ac.rank_cutoff = ctx.cfg.rank_cutoff;
  ac.threshold = ctx.cfg.tau_f;
  ac.filter_enabled = ctx.v != Variant::no_filter;
  ac.insert_mode = ctx.v == Variant::no_insert      ? InsertMode::tail
                   : ctx.v == Variant::random_insert ? InsertMode::random_position
                                                     : InsertMode::anchor;
  ac.kmeans_seed = ctx.cfg.aug_kmeans_seed;
  ac.insert_seed = ctx.cfg.insert_seed;
  ac.names = ctx.nm;
  return ac;
}

std::vector<AugmentedSequence> passthrough_all(const Ctx& ctx) {
  std::vector<AugmentedSequence> out;
  for (size_t i = 0; i < ctx.user_ids.size(); ++i) {
    out.push_back(passthrough_sequence(ctx.user_ids[i], ctx.train[i]));
  }
  return out;
}

std::vector<AugmentedSequence> compute_augmented(Ctx& ctx) {
  if (ctx.v == Variant::no_aug) return passthrough_all(ctx);
  AugmenterConfig ac = augmenter_config(ctx);
  std::vector<AugmentedSequence> out;
  for (size_t i = 0; i < ctx.user_ids.size(); ++i) {
    out.push_back(augment_user(ctx.user_ids[i], ctx.train[i], ctx.catalog,
                               *ctx.bh.gateway, ac));
  }
  return out;
}

void write_augment_artifacts(const Ctx& ctx, uint64_t seed,
                             const std::vector<AugmentedSequence>& augs) {
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed);
  fs::create_directories(dir);
  write_augmented_jsonl(augs, (dir / "augmented.jsonl").string());
  write_catalog_jsonl(ctx.catalog, (dir / "catalog_synthetic.jsonl").string(),
                      /*synthetic_only=*/true);
}

std::vector<AugmentedSequence> load_augmented(Ctx& ctx, uint64_t seed) {
  if (ctx.v == Variant::no_aug) return passthrough_all(ctx);
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed);
  fs::path aug = dir / "augmented.jsonl";
  fs::path syn = dir / "catalog_synthetic.jsonl";
  if (!fs::exists(aug) || !fs::exists(syn)) {
    throw DataError("missing " + aug.string() +
                    "; run the augment command first");
  }
  read_catalog_jsonl(syn.string(), ctx.catalog);
  return replay_augmented_jsonl(aug.string(), ctx.user_ids, ctx.train,
                                ctx.catalog);
}

SequenceStore augmented_store(const Ctx& ctx,
                              const std::vector<AugmentedSequence>& augs) {
  std::vector<std::pair<std::string, std::vector<Event>>> ordered;
  for (const AugmentedSequence& a : augs) ordered.emplace_back(a.user_id, a.events);
  return store_from_ordered(ordered, ctx.catalog);
}

Mat embed_catalog_items(const Catalog& catalog, Gateway& gateway,
                        const DomainNames& nm) {
  if (catalog.size() == 0) throw DataError("catalog is empty");
  std::vector<std::vector<float>> cols(catalog.size());
  for (int i = 0; i < catalog.size(); ++i) {
    cols[i] = gateway.embed(item_text(catalog.item(i), nm));
  }
  int d_l = static_cast<int>(cols[0].size());
  Mat m(d_l, catalog.size());
  for (int i = 0; i < catalog.size(); ++i) {
    if (static_cast<int>(cols[i].size()) != d_l) {
      throw BackendError("embedding width changed mid-catalog");
    }
    for (int r = 0; r < d_l; ++r) m(r, i) = cols[i][r];
  }
  return m;
}

// One summary of the whole mixed history, standing in for the per-domain
// summarize-reform-analyze chain.
std::vector<UserProfile> naive_profiles(const Ctx& ctx,
                                        const SequenceStore& aug_store,
                                        Gateway& gateway) {
  std::vector<UserProfile> out;
  for (int i = 0; i < aug_store.size(); ++i) {
    const UserSequence& seq = aug_store.user(i);
    if (seq.events.empty()) {
      throw DataError("user " + seq.user_id + " has no events to profile");
    }
    std::vector<std::string> rendered;
    for (const Event& ev : seq.events) {
      rendered.push_back(item_text(ctx.catalog.item(ev.item), ctx.nm));
    }
    std::string prompt =
        render(TemplateId::summarize_reform,
               {{"domain", ctx.nm.a + " and " + ctx.nm.b},
                {"samples", join_samples(rendered)},
                {"ManualPrompt", "not specially weighted"}});
    std::string text = gateway.chat_text(prompt, ChatKind::summarize);
    UserProfile p;
    p.user_id = seq.user_id;
    p.summaries_a = {text};
    p.reform_bucket = build_reform(domain_ratio(seq)).bucket;
    p.analysis = text;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<UserProfile> compute_profiles(Ctx& ctx, const SequenceStore& aug_store,
                                          const Mat& e_llm) {
  if (ctx.v == Variant::no_sra) {
    return naive_profiles(ctx, aug_store, *ctx.bh.gateway);
  }
  ProfilerConfig pc;
  pc.cluster_count = ctx.cfg.profile_clusters;
  pc.kmeans_seed = ctx.cfg.profile_seed;
  pc.names = ctx.nm;
  return profile_users(aug_store, ctx.catalog, e_llm, *ctx.bh.gateway, pc);
}

std::vector<UserProfile> load_profiles(const Ctx& ctx, uint64_t seed) {
  fs::path path = run_dir(ctx.cfg, ctx.v, seed) / "profiles.jsonl";
  if (!fs::exists(path)) {
    throw DataError("missing " + path.string() +
                    "; run the profile command first");
  }
  return read_profiles_jsonl(path.string());
}

double validation_score(const Ctx& ctx, const ModelState& m,
                        const SequenceStore& aug_store, const Mat& e_llm,
                        bool domain_threads) {
  EvalReport r = evaluate(m, ctx.store, ctx.split, aug_store, ctx.catalog, e_llm,
                          ctx.cfg.protocol(), EvalStage::validation,
                          domain_threads, variant_name(ctx.v));
  double sum = 0.0;
  int n = 0;
  if (r.a.users > 0) { sum += r.a.hr; ++n; }
  if (r.b.users > 0) { sum += r.b.hr; ++n; }
  return n > 0 ? sum / n : 0.0;
}

ModelState pretrain_stage(const Ctx& ctx, uint64_t seed,
                          const SequenceStore& aug_store, const Mat& e_llm,
                          const std::vector<UserProfile>& profiles) {
  std::map<std::string, Vec> targets;
  if (ctx.v != Variant::no_profiling) {
    targets = profile_embeddings(profiles, *ctx.bh.gateway);
  }
  PretrainData data =
      build_pretrain_data(aug_store, ctx.catalog, e_llm, targets);
  PretrainConfig pc;
  pc.lr = ctx.cfg.lr_pretrain;
  pc.batch_size = ctx.cfg.batch;
  pc.alpha = ctx.v == Variant::no_profiling ? 0.0 : ctx.cfg.alpha;
  pc.temperature = ctx.cfg.tau_c;
  pc.epochs = ctx.cfg.epochs_pretrain;
  pc.patience = ctx.cfg.patience;
  pc.seed = seed;
  ModelState init = make_model(ctx.cfg.model_cfg(static_cast<int>(e_llm.rows())), seed);
  auto validate = [&](const ModelState& m) {
    return validation_score(ctx, m, aug_store, e_llm, /*domain_threads=*/false);
  };
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed);
  fs::create_directories(dir / "checkpoints");
  std::vector<LossReport> reports;
  ModelState best = pretrain(init, data, pc, validate, &reports,
                             dir / "checkpoints", dir / "pretrain_log.jsonl");
  return best;
}

ModelState finetune_stage(const Ctx& ctx, uint64_t seed, const ModelState& pre,
                          const SequenceStore& aug_store, const Mat& e_llm) {
  FinetuneConfig fc;
  fc.lr = ctx.cfg.lr_finetune;
  fc.batch_size = ctx.cfg.batch;
  fc.epochs = ctx.cfg.epochs_finetune;
  fc.patience = ctx.cfg.patience;
  fc.seed = seed;
  auto validate = [&](const ModelState& m) {
    return validation_score(ctx, m, aug_store, e_llm, /*domain_threads=*/true);
  };
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed);
  fs::create_directories(dir / "checkpoints");
  std::vector<LossReport> reports;
  return finetune(pre, aug_store, ctx.catalog, e_llm, fc, validate, &reports,
                  dir / "checkpoints", dir / "finetune_log.jsonl");
}

ModelState load_model(const Ctx& ctx, uint64_t seed) {
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed) / "checkpoints";
  const bool finetuned = ctx.v != Variant::no_dft;
  const std::string tag = finetuned ? "finetune-best" : "pretrain-best";
  if (!fs::exists(dir / (tag + ".json"))) {
    throw DataError("missing checkpoint " + (dir / (tag + ".json")).string() +
                    "; run the " + (finetuned ? "finetune" : "pretrain") +
                    " command first");
  }
  return load_checkpoint(dir, tag);
}

EvalReport evaluate_stage(const Ctx& ctx, uint64_t seed, const ModelState& m,
                          const SequenceStore& aug_store, const Mat& e_llm) {
  EvalReport rep = evaluate(m, ctx.store, ctx.split, aug_store, ctx.catalog,
                            e_llm, ctx.cfg.protocol(), EvalStage::test,
                            ctx.v != Variant::no_dft, variant_name(ctx.v));
  fs::path dir = run_dir(ctx.cfg, ctx.v, seed);
  fs::create_directories(dir);
  write_report_json(rep, (dir / "report.json").string());
  write_report_csv(rep, (dir / "report.csv").string());
  write_report_md(rep, (dir / "report.md").string());
  return rep;
}

void write_variant_outputs(const RunConfig& cfg, Variant v, const EvalReport& avg) {
  fs::path dir = variant_dir(cfg, v);
  fs::create_directories(dir);
  write_report_json(avg, (dir / "report.json").string());
  write_report_csv(avg, (dir / "report.csv").string());
  write_report_md(avg, (dir / "report.md").string());
}

// Cross-variant table over every variant whose averaged report exists.
void write_comparison(const RunConfig& cfg) {
  std::vector<EvalReport> rows;
  for (const std::string& name : variant_names()) {
    fs::path p = fs::path(cfg.out_dir) / name / "report.json";
    if (fs::exists(p)) rows.push_back(read_report_json(p.string()));
  }
  if (rows.empty()) return;
  VariantTable table = compare_variants(rows);
  std::ofstream md(fs::path(cfg.out_dir) / "variants.md");
  md << table.markdown;
  std::ofstream csv(fs::path(cfg.out_dir) / "variants.csv");
  csv << table.csv;
}

int count_inserted(const std::vector<AugmentedSequence>& augs) {
  int n = 0;
  for (const AugmentedSequence& a : augs) n += static_cast<int>(a.inserted.size());
  return n;
}

EvalReport pipeline_seed(Ctx& ctx, uint64_t seed) {
  std::vector<AugmentedSequence> augs = compute_augmented(ctx);
  fs::create_directories(run_dir(ctx.cfg, ctx.v, seed));
  if (ctx.v != Variant::no_aug) write_augment_artifacts(ctx, seed, augs);
  SequenceStore aug_store = augmented_store(ctx, augs);
  Mat e_llm = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
  std::vector<UserProfile> profiles;
  if (ctx.v != Variant::no_profiling) {
    profiles = compute_profiles(ctx, aug_store, e_llm);
    write_profiles_jsonl(
        profiles, (run_dir(ctx.cfg, ctx.v, seed) / "profiles.jsonl").string());
  }
  pretrain_stage(ctx, seed, aug_store, e_llm, profiles);
  // Reload through the float32 checkpoint so a pipeline run and the stepwise
  // command sequence hand identical weights to the next stage.
  fs::path ckpt = run_dir(ctx.cfg, ctx.v, seed) / "checkpoints";
  ModelState model = load_checkpoint(ckpt, "pretrain-best");
  if (ctx.v != Variant::no_dft) {
    finetune_stage(ctx, seed, model, aug_store, e_llm);
    model = load_checkpoint(ckpt, "finetune-best");
  }
  return evaluate_stage(ctx, seed, model, aug_store, e_llm);
}

}  // namespace

void run_synth(const RunConfig& cfg) {
  SynthConfig sc;
  sc.users = cfg.synth_users;
  sc.items_per_domain = cfg.synth_items;
  sc.ratio_target = cfg.synth_ratio;
  sc.seed = cfg.synth_seed;
  auto [catalog, store] = synth_corpus(sc);
  write_corpus_files(cfg, catalog, store);
  std::cout << "synth: " << store.size() << " users, " << catalog.size()
            << " items -> " << corpus_dir(cfg).string() << "\n";
}

void run_ingest(const RunConfig& cfg) {
  if (cfg.catalog_path.empty() || cfg.interactions_path.empty()) {
    throw UsageError("ingest needs both catalog and interactions paths");
  }
  auto [catalog, store] = ingest(cfg.catalog_path, cfg.interactions_path);
  write_corpus_files(cfg, catalog, store);
  std::cout << "ingest: " << store.size() << " users, " << catalog.size()
            << " items -> " << corpus_dir(cfg).string() << "\n";
}

void run_embed(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  Mat e = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
  nlohmann::ordered_json meta;
  meta["items"] = e.cols();
  meta["dim"] = e.rows();
  meta["backend"] = cfg.backend;
  std::ofstream out(fs::path(cfg.out_dir) / "embed_meta.json");
  out << meta.dump(2) << "\n";
  std::cout << "embed: " << e.cols() << " items at width " << e.rows() << "\n";
}

void run_augment(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  if (ctx.v == Variant::no_aug) {
    std::cout << "augment: variant no-aug leaves sequences untouched\n";
    return;
  }
  for (uint64_t seed : cfg.seed_list()) {
    std::vector<AugmentedSequence> augs = compute_augmented(ctx);
    write_augment_artifacts(ctx, seed, augs);
    std::cout << "augment[" << seed << "]: " << count_inserted(augs)
              << " synthetic events -> " << run_dir(cfg, ctx.v, seed).string()
              << "\n";
  }
}

void run_profile(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  if (ctx.v == Variant::no_profiling) {
    std::cout << "profile: variant no-profiling skips profiling\n";
    return;
  }
  for (uint64_t seed : cfg.seed_list()) {
    std::vector<AugmentedSequence> augs = load_augmented(ctx, seed);
    SequenceStore aug_store = augmented_store(ctx, augs);
    Mat e_llm = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
    std::vector<UserProfile> profiles = compute_profiles(ctx, aug_store, e_llm);
    fs::path path = run_dir(cfg, ctx.v, seed) / "profiles.jsonl";
    write_profiles_jsonl(profiles, path.string());
    std::cout << "profile[" << seed << "]: " << profiles.size()
              << " users -> " << path.string() << "\n";
  }
}

void run_pretrain(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  for (uint64_t seed : cfg.seed_list()) {
    std::vector<AugmentedSequence> augs = load_augmented(ctx, seed);
    SequenceStore aug_store = augmented_store(ctx, augs);
    Mat e_llm = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
    std::vector<UserProfile> profiles;
    if (ctx.v != Variant::no_profiling) profiles = load_profiles(ctx, seed);
    pretrain_stage(ctx, seed, aug_store, e_llm, profiles);
    std::cout << "pretrain[" << seed << "]: checkpoint -> "
              << (run_dir(cfg, ctx.v, seed) / "checkpoints").string() << "\n";
  }
}

void run_finetune(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  if (ctx.v == Variant::no_dft) {
    std::cout << "finetune: variant no-dft evaluates the pretrained model\n";
    return;
  }
  for (uint64_t seed : cfg.seed_list()) {
    std::vector<AugmentedSequence> augs = load_augmented(ctx, seed);
    SequenceStore aug_store = augmented_store(ctx, augs);
    Mat e_llm = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
    fs::path ckpt = run_dir(cfg, ctx.v, seed) / "checkpoints";
    if (!fs::exists(ckpt / "pretrain-best.json")) {
      throw DataError("missing checkpoint " +
                      (ckpt / "pretrain-best.json").string() +
                      "; run the pretrain command first");
    }
    ModelState pre = load_checkpoint(ckpt, "pretrain-best");
    finetune_stage(ctx, seed, pre, aug_store, e_llm);
    std::cout << "finetune[" << seed << "]: checkpoint -> " << ckpt.string()
              << "\n";
  }
}

void run_evaluate(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/false);
  for (uint64_t seed : cfg.seed_list()) {
    std::vector<AugmentedSequence> augs = load_augmented(ctx, seed);
    SequenceStore aug_store = augmented_store(ctx, augs);
    Mat e_llm = embed_catalog_items(ctx.catalog, *ctx.bh.gateway, ctx.nm);
    ModelState model = load_model(ctx, seed);
    EvalReport rep = evaluate_stage(ctx, seed, model, aug_store, e_llm);
    std::cout << "evaluate[" << seed << "]: A HR@" << rep.cutoff << " "
              << fmt4(rep.a.hr) << ", B HR@" << rep.cutoff << " "
              << fmt4(rep.b.hr) << "\n";
  }
}

void run_report(const RunConfig& cfg) {
  Variant v = cfg.variant_value();
  std::vector<EvalReport> reports;
  for (uint64_t seed : cfg.seed_list()) {
    fs::path p = run_dir(cfg, v, seed) / "report.json";
    reports.push_back(read_report_json(p.string()));
  }
  EvalReport avg = average_reports(reports);
  write_variant_outputs(cfg, v, avg);
  write_comparison(cfg);
  auto [catalog, store] = load_corpus(cfg);
  write_ratio_histogram_csv(store,
                            (fs::path(cfg.out_dir) / "ratio_hist.csv").string());
  std::cout << "report: " << variant_name(v) << " over " << reports.size()
            << " seeds -> " << variant_dir(cfg, v).string() << "\n";
}

EvalReport run_pipeline(const RunConfig& cfg) {
  Ctx ctx = make_ctx(cfg, /*create_corpus=*/true);
  std::vector<EvalReport> reports;
  for (uint64_t seed : cfg.seed_list()) {
    reports.push_back(pipeline_seed(ctx, seed));
    std::cout << "pipeline[" << variant_name(ctx.v) << "/" << seed
              << "]: A HR@" << reports.back().cutoff << " "
              << fmt4(reports.back().a.hr) << ", B HR@"
              << reports.back().cutoff << " " << fmt4(reports.back().b.hr)
              << "\n";
  }
  EvalReport avg = average_reports(reports);
  write_variant_outputs(cfg, ctx.v, avg);
  write_comparison(cfg);
  write_ratio_histogram_csv(
      ctx.store, (fs::path(cfg.out_dir) / "ratio_hist.csv").string());
  return avg;
}

void run_sweep(const RunConfig& cfg, const std::vector<double>& alphas,
               const std::vector<double>& taus,
               const std::vector<int>& clusters) {
  std::vector<double> as = alphas.empty() ? std::vector<double>{cfg.alpha} : alphas;
  std::vector<double> ts = taus.empty() ? std::vector<double>{cfg.tau_f} : taus;
  std::vector<int> cs =
      clusters.empty() ? std::vector<int>{cfg.profile_clusters} : clusters;

  struct Row {
    double alpha, tau;
    int c;
    EvalReport rep;
  };
  std::vector<Row> rows;
  for (double a : as) {
    for (double t : ts) {
      for (int c : cs) {
        RunConfig sub = cfg;
        sub.alpha = a;
        sub.tau_f = t;
        sub.profile_clusters = c;
        std::string tag = "a" + fmt_g(a) + "-t" + fmt_g(t) + "-c" + std::to_string(c);
        sub.out_dir = (fs::path(cfg.out_dir) / "sweep" / tag).string();
        rows.push_back(Row{a, t, c, run_pipeline(sub)});
      }
    }
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "sweep.csv");
  csv << "alpha,tau_f,clusters,variant,protocol,stage,cutoff,seeds,"
         "hr_a,ndcg_a,hr_b,ndcg_b\n";
  for (const Row& r : rows) {
    csv << fmt_g(r.alpha) << "," << fmt_g(r.tau) << "," << r.c << ","
        << r.rep.variant << "," << r.rep.protocol << "," << r.rep.stage << ","
        << r.rep.cutoff << "," << "\"" << cfg.seeds << "\"" << ","
        << fmt4(r.rep.a.hr) << "," << fmt4(r.rep.a.ndcg) << ","
        << fmt4(r.rep.b.hr) << "," << fmt4(r.rep.b.ndcg) << "\n";
  }

  std::ofstream md(fs::path(cfg.out_dir) / "sweep.md");
  md << "# Hyperparameter sweep\n\n";
  md << "Variant " << cfg.variant << ", seeds " << cfg.seeds << ".\n\n";
  md << "| alpha | tau_f | clusters | A HR | A NDCG | B HR | B NDCG |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const Row& r : rows) {
    md << "| " << fmt_g(r.alpha) << " | " << fmt_g(r.tau) << " | " << r.c
       << " | " << fmt4(r.rep.a.hr) << " | " << fmt4(r.rep.a.ndcg) << " | "
       << fmt4(r.rep.b.hr) << " | " << fmt4(r.rep.b.ndcg) << " |\n";
  }
  std::cout << "sweep: " << rows.size() << " grid points -> "
            << (fs::path(cfg.out_dir) / "sweep.csv").string() << "\n";
}

}  // namespace edt
