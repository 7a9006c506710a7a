#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edt/common.hpp"

namespace edt {

enum class Domain : uint8_t { A = 0, B = 1 };

inline char domain_letter(Domain d) { return d == Domain::A ? 'A' : 'B'; }
Domain domain_from_string(const std::string& s);
Domain other_domain(Domain d);

struct ItemRecord {
  std::string item_id;
  Domain domain = Domain::A;
  std::string title;
  std::string brand;
  std::string date;
  std::string price;
  std::vector<std::string> categories;
  std::string description;
  bool synthetic = false;
};

// Catalog of items; indices are stable handles used everywhere downstream.
class Catalog {
 public:
  // Throws DataError on duplicate item_id or empty title.
  int add(ItemRecord rec);
  const ItemRecord& item(int index) const { return items_[index]; }
  int index_of(const std::string& item_id) const;
  int size() const { return static_cast<int>(items_.size()); }

  // Item indices of one domain, ascending. real_only drops synthetic items.
  std::vector<int> items_of(Domain d, bool real_only) const;

  // Index of a non-synthetic item whose normalized title matches, or -1.
  int find_real_title(const std::string& normalized_title) const;
  // Index of any item whose normalized title matches, or -1.
  int find_title(const std::string& normalized_title) const;

 private:
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, int> by_id_;
  std::unordered_map<std::string, int> by_norm_title_;  // first occurrence wins
};

struct Event {
  int item = -1;        // catalog index
  int64_t timestamp = 0;
  int ingest_order = 0; // tie-break for equal timestamps
};

struct UserSequence {
  std::string user_id;
  std::vector<Event> events;  // ascending (timestamp, ingest_order)
  int n_a = 0;
  int n_b = 0;
};

class SequenceStore {
 public:
  // Events may arrive in any order; finalize() sorts and counts.
  void add_event(const std::string& user_id, Event ev);
  void finalize(const Catalog& catalog);

  int size() const { return static_cast<int>(users_.size()); }
  const UserSequence& user(int index) const { return users_[index]; }
  UserSequence& user(int index) { return users_[index]; }
  int index_of(const std::string& user_id) const;
  const std::vector<UserSequence>& users() const { return users_; }

 private:
  std::vector<UserSequence> users_;  // sorted by user_id after finalize
  std::unordered_map<std::string, int> by_user_;
  bool finalized_ = false;
};

// --- ingest -----------------------------------------------------------------

// Parses catalog.jsonl + interactions.jsonl. Errors carry the offending line
// number; events referencing unknown items name the item_id.
std::pair<Catalog, SequenceStore> ingest(const std::string& catalog_path,
                                         const std::string& interactions_path);

void write_catalog_jsonl(const Catalog& catalog, const std::string& path,
                         bool synthetic_only = false);
void write_interactions_jsonl(const SequenceStore& store, const Catalog& catalog,
                              const std::string& path);

// Appends the records of a catalog.jsonl file to an existing catalog; item ids
// already present are skipped. Used to replay synthetic-item files.
void read_catalog_jsonl(const std::string& path, Catalog& catalog);

// --- statistics -------------------------------------------------------------

// |n_A - n_B| / (n_A + n_B). Throws DataError on an empty sequence.
double domain_ratio(const UserSequence& seq);

// Counts of users per ratio bin over [0,1]; final bin right-closed.
std::vector<int> ratio_histogram(const SequenceStore& store, int bin_count = 10);

// Partition into per-domain event lists, relative order preserved.
std::pair<std::vector<Event>, std::vector<Event>> split_by_domain(
    const UserSequence& seq, const Catalog& catalog);

// Builds a finalized store from per-user event lists whose order is
// authoritative. Real events keep their keys and must already be in
// ascending (timestamp, ingest_order) order; each synthetic event takes the
// key of the nearest real event before it (after it when leading), so the
// finalize sort reproduces the given order exactly.
SequenceStore store_from_ordered(
    const std::vector<std::pair<std::string, std::vector<Event>>>& sequences,
    const Catalog& catalog);

// --- leave-one-out split ----------------------------------------------------

struct DomainSplit {
  int valid_pos = -1;  // position in UserSequence.events, -1 if absent
  int test_pos = -1;
};

struct UserSplit {
  DomainSplit a;
  DomainSplit b;
  bool is_target(int pos) const {
    return pos == a.valid_pos || pos == a.test_pos || pos == b.valid_pos ||
           pos == b.test_pos;
  }
  const DomainSplit& of(Domain d) const { return d == Domain::A ? a : b; }
};

struct SplitSpec {
  std::vector<UserSplit> users;  // aligned with SequenceStore order
  int min_per_domain = 3;
};

// Last item of a domain = test, second-to-last = validation, for users with
// at least min_per_domain interactions in that domain.
SplitSpec leave_one_out(const SequenceStore& store, const Catalog& catalog,
                        int min_per_domain = 3);

// Events excluding the user's validation/test targets.
std::vector<Event> train_events(const UserSequence& seq, const UserSplit& split);

// --- synthetic corpus -------------------------------------------------------

struct SynthConfig {
  int users = 200;
  int items_per_domain = 80;
  double ratio_target = 0.9;
  uint64_t seed = 1234;
  int taste_groups = 4;
  int min_len = 10;
  int max_len = 48;
  double noise_rate = 0.12;  // chance an event ignores the user's taste group
};

// Two-domain corpus with planted taste groups: a user's domain-B preference
// group is a fixed function of their domain-A group, and paired groups share
// theme vocabulary so the structure is visible to text embeddings.
// Deterministic under seed. Throws DataError for unreachable ratio targets.
std::pair<Catalog, SequenceStore> synth_corpus(const SynthConfig& config);

}  // namespace edt
