#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edt/corpus.hpp"
#include "edt/encoder.hpp"

namespace edt {

enum class EvalMode { full_catalog, sampled };
enum class EvalStage { validation, test };

struct EvalProtocol {
  EvalMode mode = EvalMode::full_catalog;
  int sampled_negatives = 99;  // sampled mode: pool = target + N negatives
  int cutoff = 10;
  uint64_t sample_seed = 303;

  std::string label() const;  // "full-catalog" or "sampled-<N>"
};

struct RankResult {
  int hit = 0;
  double ndcg = 0.0;
  int rank = 0;  // 1-based
};

// Rank of `target` inside the score list: items with a higher score rank
// first; equal scores order by ascending item_id, so a tied item with the
// smaller id wins. hit = rank <= k, ndcg = 1/log2(rank + 1) when hit.
// Target absent from the list -> UsageError.
RankResult rank_metrics(const std::vector<std::pair<int, double>>& scores,
                        int target, int k, const Catalog& catalog);

struct DomainMetrics {
  double hr = 0.0;
  double ndcg = 0.0;
  int users = 0;
};

struct BucketRow {
  std::string label;
  DomainMetrics a;
  DomainMetrics b;
};

struct EvalReport {
  std::string variant;
  std::string protocol;
  int cutoff = 10;
  std::string stage;  // "validation" or "test"
  DomainMetrics a;
  DomainMetrics b;
  std::vector<BucketRow> length_buckets;  // fixed 5 rows
  std::vector<BucketRow> ratio_buckets;   // fixed 3 rows
  int evaluated_users = 0;
};

// History-length buckets: (0,5] "Very Short", (5,10] "Short", (10,15]
// "Medium", (15,20] "Long", (20,inf) "Very Long".
const std::vector<std::string>& length_bucket_labels();
const std::string& length_bucket(int length);

// Imbalance buckets: r >= 0.95, then 0.95 > r >= 0.9, then r < 0.9.
const std::vector<std::string>& ratio_bucket_labels();
const std::string& ratio_bucket(double ratio);

// Inserts held-out validation events back into a training prefix by their
// chronological key, measured against real events only so placed synthetic
// items keep their positions.
std::vector<Event> merge_validation_events(const std::vector<Event>& inputs,
                                           const std::vector<Event>& validation,
                                           const Catalog& catalog);

// Next-item ranking over held-out targets. `original` supplies targets and
// the pre-augmentation bucket statistics; `inputs` holds each user's model
// input prefix (test stage re-inserts the validation events). Candidate
// pools are the real items of the target's domain. domain_threads scores
// through the per-domain adapters and requires a frozen backbone; off, the
// shared representation alone scores.
EvalReport evaluate(const ModelState& model, const SequenceStore& original,
                    const SplitSpec& split, const SequenceStore& inputs,
                    const Catalog& catalog, const Mat& e_llm,
                    const EvalProtocol& protocol, EvalStage stage,
                    bool domain_threads, const std::string& variant_label);

// Unweighted mean over per-seed reports of one variant. Mismatched variant,
// protocol, stage or cutoff -> UsageError.
EvalReport average_reports(const std::vector<EvalReport>& reports);

struct VariantTable {
  std::string markdown;
  std::string csv;
};

// Side-by-side variant table with deltas against the "full" row (the first
// row when no report is labeled "full"). Mismatched protocols -> UsageError.
VariantTable compare_variants(const std::vector<EvalReport>& reports);

// Published results quoted for context in generated reports; never compared
// against local runs.
struct ReferenceResult {
  std::string dataset;
  std::string metric;
  double value = 0.0;
};
const std::vector<ReferenceResult>& reference_results();
extern const char* kReferenceNote;  // the "not reproduced" label

void write_report_json(const EvalReport& report, const std::string& path);
EvalReport read_report_json(const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_md(const EvalReport& report, const std::string& path);

// Plot-ready histogram of users per domain-ratio bin.
void write_ratio_histogram_csv(const SequenceStore& store, const std::string& path,
                               int bin_count = 10);

}  // namespace edt
