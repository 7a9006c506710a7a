#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edt/corpus.hpp"
#include "edt/gateway.hpp"
#include "edt/prompts.hpp"

namespace edt {

enum class Direction : uint8_t { A2B = 0, B2A = 1 };

inline const char* direction_name(Direction d) {
  return d == Direction::A2B ? "A2B" : "B2A";
}

enum class InsertMode { anchor, tail, random_position };

struct AugmenterConfig {
  int cluster_count = 10;   // representatives per domain
  int gen_budget = 5;       // candidates per direction
  int rank_cutoff = 10;     // source-score rank bound
  double threshold = 0.90;  // minimum target-domain similarity
  bool filter_enabled = true;
  InsertMode insert_mode = InsertMode::anchor;
  uint64_t kmeans_seed = 7;
  uint64_t insert_seed = 999;  // random_position mode only
  DomainNames names;
};

struct Representative {
  int item = -1;  // catalog index
  std::vector<float> embedding;
};

struct RepresentativeSet {
  Domain domain = Domain::A;
  std::vector<Representative> items;
  int cluster_count = 0;
};

struct ScoredCandidate {
  ItemRecord item;  // synthetic, id "gen:<hash>"
  std::vector<float> embedding;
  Direction direction = Direction::A2B;
  int anchor_a = -1;  // catalog index of nearest domain-A representative
  double score_a = 0.0;
  int anchor_b = -1;
  double score_b = 0.0;

  int source_anchor() const { return direction == Direction::A2B ? anchor_a : anchor_b; }
  double source_score() const { return direction == Direction::A2B ? score_a : score_b; }
  double target_score() const { return direction == Direction::A2B ? score_b : score_a; }
};

struct InsertionRecord {
  std::string item_id;
  Direction direction = Direction::A2B;
  std::string anchor_item_id;
  double score_src = 0.0;
  double score_tgt = 0.0;
  int position_index = -1;  // index in the augmented event list
};

struct AugmentedSequence {
  std::string user_id;
  std::vector<Event> events;  // originals in order, synthetics placed
  std::vector<InsertionRecord> inserted;
  std::vector<std::string> skipped;  // survivors whose anchor was missing
};

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

// One representative per non-empty cluster of the user's distinct interacted
// items in a domain; empty input gives an empty set.
RepresentativeSet select_representatives(const std::vector<int>& interacted_items,
                                         const Catalog& catalog, Gateway& gateway,
                                         int cluster_count, uint64_t seed,
                                         const DomainNames& names);

// Asks the backend for up to gen_budget items in the target domain, drops
// titles colliding with real catalog items (normalized), embeds the rest.
// Source representatives must be non-empty.
std::vector<ScoredCandidate> generate_candidates(const std::string& user_id,
                                                 const RepresentativeSet& reps_src,
                                                 const RepresentativeSet& reps_tgt,
                                                 Direction direction,
                                                 const AugmenterConfig& config,
                                                 const Catalog& catalog,
                                                 Gateway& gateway);

// Highest-similarity representative per domain; ties by smallest item_id.
void score_candidate(ScoredCandidate& candidate, const RepresentativeSet& reps_a,
                     const RepresentativeSet& reps_b, const Catalog& catalog);

// Keep candidates ranked in the top rank_cutoff by source-domain score whose
// target-domain score reaches the threshold. Output in rank order.
std::vector<ScoredCandidate> filter(std::vector<ScoredCandidate> candidates,
                                    const AugmenterConfig& config);

// Registers survivors in the catalog (reusing ids already present) and places
// each right after its anchor's last occurrence. Survivors whose anchor is
// missing from the sequence are recorded in `skipped`.
AugmentedSequence insert(const std::string& user_id,
                         const std::vector<Event>& events,
                         const std::vector<ScoredCandidate>& survivors,
                         Catalog& catalog, const AugmenterConfig& config);

// Full per-user pass: representatives, generation both ways, filter, insert.
AugmentedSequence augment_user(const std::string& user_id,
                               const std::vector<Event>& events, Catalog& catalog,
                               Gateway& gateway, const AugmenterConfig& config);

// events copied through with no synthetics; the augmentation-off baseline.
AugmentedSequence passthrough_sequence(const std::string& user_id,
                                       const std::vector<Event>& events);

void write_augmented_jsonl(const std::vector<AugmentedSequence>& sequences,
                           const std::string& path);

// Replays an augmented.jsonl against per-user base events. The catalog must
// already hold the synthetic items (written via write_catalog_jsonl).
std::vector<AugmentedSequence> replay_augmented_jsonl(
    const std::string& path, const std::vector<std::string>& user_ids,
    const std::vector<std::vector<Event>>& base_events, const Catalog& catalog);

// Mean cosine similarity between each user's base-sequence text embedding and
// the embedding after injecting the top share of survivors, per fraction.
// Report-only diagnostic.
std::vector<std::pair<double, double>> profile_similarity(
    const std::vector<std::string>& user_ids,
    const std::vector<std::vector<Event>>& base_events,
    const std::vector<AugmentedSequence>& augmented, const Catalog& catalog,
    Gateway& gateway, const std::vector<double>& injection_fractions);

}  // namespace edt
