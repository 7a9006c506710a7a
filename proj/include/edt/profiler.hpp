#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edt/corpus.hpp"
#include "edt/encoder.hpp"
#include "edt/gateway.hpp"
#include "edt/prompts.hpp"

namespace edt {

// One domain's events grouped into interest clusters. Groups keep the
// chronological order of the input view; empty clusters are dropped and the
// remaining group indices are dense.
struct ClusterPartition {
  Domain domain = Domain::A;
  std::vector<int> assignment;             // input event -> group index
  std::vector<std::vector<Event>> groups;  // all non-empty
};

// Severity of the user's domain imbalance, rendered as a prompt phrase.
struct ReformInstruction {
  double ratio = 0.0;
  int bucket = 1;  // 1..5
  std::string text;
};

struct UserProfile {
  std::string user_id;
  std::vector<std::string> summaries_a;  // one per domain-A cluster
  std::vector<std::string> summaries_b;
  int reform_bucket = 1;
  std::string analysis;
};

struct ProfilerConfig {
  int cluster_count = 10;
  uint64_t kmeans_seed = 5150;
  DomainNames names;
};

// Groups a domain view by k-means over the events' item embedding columns.
// The requested cluster count is capped by the number of distinct items in
// the view; cluster_count < 1 is a UsageError. An empty view gives an empty
// partition.
ClusterPartition cluster_domain(const std::vector<Event>& domain_view, Domain domain,
                                const Mat& item_embeddings, int cluster_count,
                                uint64_t seed);

// Imbalance buckets over |n_A - n_B| / (n_A + n_B): edges at 0.2, 0.4, 0.6
// and 0.8, with a ratio on an edge falling into the higher bucket.
int reform_bucket(double ratio);
const std::string& reform_label(int bucket);  // "balanced" .. "extremely dominant"
const std::string& reform_text(int bucket);   // phrase spliced into prompts

// ratio outside [0, 1] -> UsageError.
ReformInstruction build_reform(double ratio);

// Summarizes one cluster's interests through the backend. Empty group ->
// UsageError; callers skip empty domains instead.
std::string summarize_cluster(const std::vector<Event>& group, Domain domain,
                              const ReformInstruction& reform, const Catalog& catalog,
                              Gateway& gateway, const DomainNames& names);

// Merges cluster summaries of both domains into one cross-domain analysis.
// A domain without summaries is declared absent inside the prompt; both
// empty -> UsageError.
std::string analyze_user(const std::vector<std::string>& summaries_a,
                         const std::vector<std::string>& summaries_b,
                         const ReformInstruction& reform, Gateway& gateway,
                         const DomainNames& names);

// Embeds the analysis text and maps it into the sequence space through the
// profile adapter. Embedding width must match the adapter input.
Vec project_profile(const std::string& analysis, Gateway& gateway,
                    const AdapterParams& profile_adapter);

// Cluster -> summarize -> analyze for one user. Events must be non-empty.
UserProfile profile_user(const UserSequence& seq, const Catalog& catalog,
                         const Mat& item_embeddings, Gateway& gateway,
                         const ProfilerConfig& config);

// Profiles every user, in store order.
std::vector<UserProfile> profile_users(const SequenceStore& store,
                                       const Catalog& catalog,
                                       const Mat& item_embeddings, Gateway& gateway,
                                       const ProfilerConfig& config);

void write_profiles_jsonl(const std::vector<UserProfile>& profiles,
                          const std::string& path);
std::vector<UserProfile> read_profiles_jsonl(const std::string& path);

// Analysis-text embeddings keyed by user id, the alignment targets for
// pretraining.
std::map<std::string, Vec> profile_embeddings(const std::vector<UserProfile>& profiles,
                                              Gateway& gateway);

}  // namespace edt
