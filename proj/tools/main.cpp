#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edt/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "llm-edt: cross-domain sequential recommender with LLM-based item "
      "augmentation, user profiling and dual-phase training"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value configuration file");

  edt::RunConfig cfg;
  auto opt = [&](const std::string& name, auto& field, const std::string& desc) {
    return app.add_option(name, field, desc)->capture_default_str();
  };

  opt("--out", cfg.out_dir, "artifact tree root");
  opt("--cache", cfg.cache_dir, "backend response cache directory");
  opt("--catalog", cfg.catalog_path, "catalog.jsonl to ingest");
  opt("--interactions", cfg.interactions_path, "interactions.jsonl to ingest");
  opt("--backend", cfg.backend, "mock or http");
  opt("--mock-seed", cfg.mock_seed, "mock backend seed");
  opt("--mock-dim", cfg.mock_dim, "mock embedding width");
  opt("--base-url", cfg.base_url, "http backend base URL");
  opt("--chat-model", cfg.chat_model, "http chat model name");
  opt("--embed-model", cfg.embed_model, "http embedding model name");
  opt("--api-key-env", cfg.api_key_env, "env var holding the API key");
  opt("--synth-users", cfg.synth_users, "synthetic corpus user count");
  opt("--synth-items", cfg.synth_items, "synthetic items per domain");
  opt("--synth-ratio", cfg.synth_ratio, "synthetic dominant-domain ratio");
  opt("--synth-seed", cfg.synth_seed, "synthetic corpus seed");
  opt("--dim", cfg.d, "model embedding width");
  opt("--layers", cfg.layers, "encoder blocks");
  opt("--heads", cfg.heads, "attention heads");
  opt("--max-len", cfg.max_len, "sequence positions fed to the encoder");
  opt("--dropout", cfg.dropout, "dropout rate");
  opt("--domain-hidden", cfg.domain_hidden, "domain adapter hidden width");
  opt("--rep-clusters", cfg.rep_clusters, "representative clusters per domain");
  opt("--gen-budget", cfg.gen_budget, "generated candidates per direction");
  opt("--rank-cutoff", cfg.rank_cutoff, "source-score rank bound for the filter");
  opt("--tau-f", cfg.tau_f, "target-domain similarity threshold");
  opt("--aug-kmeans-seed", cfg.aug_kmeans_seed, "augmenter clustering seed");
  opt("--insert-seed", cfg.insert_seed, "random-insert placement seed");
  opt("--profile-clusters", cfg.profile_clusters, "profile clusters per domain");
  opt("--profile-seed", cfg.profile_seed, "profiler clustering seed");
  opt("--alpha", cfg.alpha, "alignment loss weight");
  opt("--tau-c", cfg.tau_c, "contrastive temperature");
  opt("--lr-pretrain", cfg.lr_pretrain, "pretraining learning rate");
  opt("--lr-finetune", cfg.lr_finetune, "fine-tuning learning rate");
  opt("--batch", cfg.batch, "batch size");
  opt("--epochs-pretrain", cfg.epochs_pretrain, "pretraining epoch cap");
  opt("--epochs-finetune", cfg.epochs_finetune, "fine-tuning epoch cap");
  opt("--patience", cfg.patience, "early-stopping patience");
  opt("--eval-mode", cfg.eval_mode, "ranking pool: full or sampled");
  opt("--eval-negatives", cfg.eval_negatives, "negatives per user in sampled mode");
  opt("--cutoff", cfg.cutoff, "ranking cutoff k");
  opt("--sample-seed", cfg.sample_seed, "sampled-pool seed");
  opt("--min-per-domain", cfg.min_per_domain, "events per domain to enter the split");
  opt("--variant", cfg.variant, "full, no-aug, no-dft, no-profiling, no-filter, "
                                "no-insert, random-insert or no-sra");
  opt("--seeds", cfg.seeds, "comma-separated run seeds");
  opt("--domain-a-name", cfg.domain_a_name, "display name of domain A");
  opt("--domain-b-name", cfg.domain_b_name, "display name of domain B");

  std::string alphas, taus, cluster_counts;

  auto sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->fallthrough();
    return s;
  };

  sub("synth", "generate the synthetic two-domain corpus")
      ->callback([&] { edt::run_synth(cfg); });
  sub("ingest", "normalize an external catalog and interaction log")
      ->callback([&] { edt::run_ingest(cfg); });
  sub("embed", "compute and cache item embeddings")
      ->callback([&] { edt::run_embed(cfg); });
  sub("augment", "generate, filter and insert cross-domain items")
      ->callback([&] { edt::run_augment(cfg); });
  sub("profile", "build domain-aware user profiles")
      ->callback([&] { edt::run_profile(cfg); });
  sub("pretrain", "train the shared backbone with alignment")
      ->callback([&] { edt::run_pretrain(cfg); });
  sub("finetune", "adapt the frozen backbone per domain")
      ->callback([&] { edt::run_finetune(cfg); });
  sub("evaluate", "rank held-out items and write per-seed reports")
      ->callback([&] { edt::run_evaluate(cfg); });
  sub("report", "average seeds and render comparison tables")
      ->callback([&] { edt::run_report(cfg); });
  sub("pipeline", "run every stage end to end for the configured variant")
      ->callback([&] { edt::run_pipeline(cfg); });

  CLI::App* sweep = sub("sweep", "grid over alpha, tau-f and profile clusters");
  sweep->add_option("--alphas", alphas, "comma-separated alignment weights");
  sweep->add_option("--taus", taus, "comma-separated filter thresholds");
  sweep->add_option("--cluster-counts", cluster_counts,
                    "comma-separated profile cluster counts");
  sweep->callback([&] {
    std::vector<double> av, tv;
    std::vector<int> cv;
    if (!alphas.empty()) av = edt::parse_double_list(alphas, "alphas");
    if (!taus.empty()) tv = edt::parse_double_list(taus, "taus");
    if (!cluster_counts.empty()) {
      for (uint64_t c : edt::parse_uint_list(cluster_counts, "cluster-counts")) {
        cv.push_back(static_cast<int>(c));
      }
    }
    edt::run_sweep(cfg, av, tv, cv);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const edt::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const edt::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const edt::BackendError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
