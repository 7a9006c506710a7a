#include "edt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace edt {

using json = nlohmann::ordered_json;

Domain domain_from_string(const std::string& s) {
  if (s == "A") return Domain::A;
  if (s == "B") return Domain::B;
  throw DataError("unknown domain '" + s + "' (expected \"A\" or \"B\")");
}

Domain other_domain(Domain d) { return d == Domain::A ? Domain::B : Domain::A; }

int Catalog::add(ItemRecord rec) {
  if (rec.item_id.empty()) throw DataError("item with empty item_id");
  if (rec.title.empty()) throw DataError("item '" + rec.item_id + "' has empty title");
  if (by_id_.count(rec.item_id)) {
    throw DataError("duplicate item_id '" + rec.item_id + "'");
  }
  int index = static_cast<int>(items_.size());
  by_id_.emplace(rec.item_id, index);
  by_norm_title_.emplace(normalize_title(rec.title), index);  // keeps first
  items_.push_back(std::move(rec));
  return index;
}

int Catalog::index_of(const std::string& item_id) const {
  auto it = by_id_.find(item_id);
  return it == by_id_.end() ? -1 : it->second;
}

std::vector<int> Catalog::items_of(Domain d, bool real_only) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    const ItemRecord& rec = items_[i];
    if (rec.domain != d) continue;
    if (real_only && rec.synthetic) continue;
    out.push_back(i);
  }
  return out;
}

int Catalog::find_real_title(const std::string& normalized_title) const {
  auto it = by_norm_title_.find(normalized_title);
  if (it == by_norm_title_.end()) return -1;
  return items_[it->second].synthetic ? -1 : it->second;
}

int Catalog::find_title(const std::string& normalized_title) const {
  auto it = by_norm_title_.find(normalized_title);
  return it == by_norm_title_.end() ? -1 : it->second;
}

void SequenceStore::add_event(const std::string& user_id, Event ev) {
  auto it = by_user_.find(user_id);
  int index;
  if (it == by_user_.end()) {
    index = static_cast<int>(users_.size());
    by_user_.emplace(user_id, index);
    users_.push_back(UserSequence{user_id, {}, 0, 0});
  } else {
    index = it->second;
  }
  users_[index].events.push_back(ev);
  finalized_ = false;
}

void SequenceStore::finalize(const Catalog& catalog) {
  std::sort(users_.begin(), users_.end(),
            [](const UserSequence& a, const UserSequence& b) {
              return a.user_id < b.user_id;
            });
  by_user_.clear();
  for (int i = 0; i < size(); ++i) {
    by_user_.emplace(users_[i].user_id, i);
    UserSequence& u = users_[i];
    // Stable so events sharing a key (placed synthetics inherit their
    // predecessor's key) keep their insertion order.
    std::stable_sort(u.events.begin(), u.events.end(),
                     [](const Event& a, const Event& b) {
                       if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                       return a.ingest_order < b.ingest_order;
                     });
    u.n_a = 0;
    u.n_b = 0;
    for (const Event& ev : u.events) {
      (catalog.item(ev.item).domain == Domain::A ? u.n_a : u.n_b) += 1;
    }
  }
  finalized_ = true;
}

int SequenceStore::index_of(const std::string& user_id) const {
  auto it = by_user_.find(user_id);
  return it == by_user_.end() ? -1 : it->second;
}

// --- ingest -----------------------------------------------------------------

namespace {

std::string field_string(const json& obj, const char* key, bool required,
                         const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw DataError(where + ": missing field '" + key + "'");
    return "";
  }
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<int64_t>());
  if (it->is_number()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", it->get<double>());
    return buf;
  }
  throw DataError(where + ": field '" + key + "' is not a string");
}

json parse_line(const std::string& line, const std::string& where) {
  json obj = json::parse(line, nullptr, false);
  if (obj.is_discarded()) throw DataError(where + ": invalid JSON");
  if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
  return obj;
}

}  // namespace

void read_catalog_jsonl(const std::string& path, Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::unordered_set<std::string> added_here;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + " line " + std::to_string(line_no);
    json obj = parse_line(line, where);
    ItemRecord rec;
    rec.item_id = field_string(obj, "item_id", true, where);
    rec.domain = domain_from_string(field_string(obj, "domain", true, where));
    rec.title = field_string(obj, "title", true, where);
    if (rec.title.empty()) throw DataError(where + ": empty title");
    rec.brand = field_string(obj, "brand", false, where);
    rec.date = field_string(obj, "date", false, where);
    rec.price = field_string(obj, "price", false, where);
    rec.description = field_string(obj, "description", false, where);
    if (auto it = obj.find("categories"); it != obj.end() && !it->is_null()) {
      if (!it->is_array()) throw DataError(where + ": 'categories' is not an array");
      for (const auto& c : *it) {
        if (!c.is_string()) throw DataError(where + ": category is not a string");
        rec.categories.push_back(c.get<std::string>());
      }
    }
    if (auto it = obj.find("synthetic"); it != obj.end() && !it->is_null()) {
      if (!it->is_boolean()) throw DataError(where + ": 'synthetic' is not a bool");
      rec.synthetic = it->get<bool>();
    }
    if (catalog.index_of(rec.item_id) >= 0) {
      // Ids that predate this call are replays; repeats within the file are
      // corrupt data.
      if (added_here.count(rec.item_id)) {
        throw DataError(where + ": duplicate item_id '" + rec.item_id + "'");
      }
      continue;
    }
    added_here.insert(rec.item_id);
    try {
      catalog.add(std::move(rec));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
}

std::pair<Catalog, SequenceStore> ingest(const std::string& catalog_path,
                                         const std::string& interactions_path) {
  Catalog catalog;
  read_catalog_jsonl(catalog_path, catalog);

  SequenceStore store;
  {
    std::ifstream in(interactions_path);
    if (!in) throw DataError("cannot open " + interactions_path);
    std::string line;
    int line_no = 0;
    int order = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::string where = interactions_path + " line " + std::to_string(line_no);
      json obj = parse_line(line, where);
      std::string user_id = field_string(obj, "user_id", true, where);
      std::string item_id = field_string(obj, "item_id", true, where);
      auto ts_it = obj.find("timestamp");
      if (ts_it == obj.end() || !ts_it->is_number()) {
        throw DataError(where + ": missing numeric 'timestamp'");
      }
      int64_t ts = ts_it->is_number_integer()
                       ? ts_it->get<int64_t>()
                       : static_cast<int64_t>(std::llround(ts_it->get<double>()));
      int item = catalog.index_of(item_id);
      if (item < 0) {
        throw DataError(where + ": unknown item_id '" + item_id + "'");
      }
      store.add_event(user_id, Event{item, ts, order++});
    }
  }
  store.finalize(catalog);
  return {std::move(catalog), std::move(store)};
}

void write_catalog_jsonl(const Catalog& catalog, const std::string& path,
                         bool synthetic_only) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int i = 0; i < catalog.size(); ++i) {
    const ItemRecord& rec = catalog.item(i);
    if (synthetic_only && !rec.synthetic) continue;
    json obj;
    obj["item_id"] = rec.item_id;
    obj["domain"] = std::string(1, domain_letter(rec.domain));
    obj["title"] = rec.title;
    obj["brand"] = rec.brand;
    obj["date"] = rec.date;
    obj["price"] = rec.price;
    obj["categories"] = rec.categories;
    obj["description"] = rec.description;
    obj["synthetic"] = rec.synthetic;
    out << obj.dump() << "\n";
  }
}

void write_interactions_jsonl(const SequenceStore& store, const Catalog& catalog,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int i = 0; i < store.size(); ++i) {
    const UserSequence& u = store.user(i);
    for (const Event& ev : u.events) {
      json obj;
      obj["user_id"] = u.user_id;
      obj["item_id"] = catalog.item(ev.item).item_id;
      obj["timestamp"] = ev.timestamp;
      out << obj.dump() << "\n";
    }
  }
}

// --- statistics -------------------------------------------------------------

double domain_ratio(const UserSequence& seq) {
  int total = seq.n_a + seq.n_b;
  if (total == 0) throw DataError("domain ratio of empty sequence for user '" +
                                  seq.user_id + "'");
  return std::abs(seq.n_a - seq.n_b) / static_cast<double>(total);
}

std::vector<int> ratio_histogram(const SequenceStore& store, int bin_count) {
  if (bin_count <= 0) throw UsageError("ratio histogram needs at least one bin");
  std::vector<int> bins(bin_count, 0);
  for (int i = 0; i < store.size(); ++i) {
    double r = domain_ratio(store.user(i));
    int b = std::min(bin_count - 1, static_cast<int>(r * bin_count));
    bins[b] += 1;
  }
  return bins;
}

std::pair<std::vector<Event>, std::vector<Event>> split_by_domain(
    const UserSequence& seq, const Catalog& catalog) {
  std::vector<Event> a, b;
  for (const Event& ev : seq.events) {
    (catalog.item(ev.item).domain == Domain::A ? a : b).push_back(ev);
  }
  return {std::move(a), std::move(b)};
}

SequenceStore store_from_ordered(
    const std::vector<std::pair<std::string, std::vector<Event>>>& sequences,
    const Catalog& catalog) {
  SequenceStore store;
  for (const auto& [user_id, events] : sequences) {
    Event anchor{};
    bool have_anchor = false;
    for (const Event& ev : events) {
      if (!catalog.item(ev.item).synthetic) {
        anchor = ev;
        have_anchor = true;
        break;
      }
    }
    for (const Event& raw : events) {
      Event ev = raw;
      if (catalog.item(ev.item).synthetic) {
        if (have_anchor) {
          ev.timestamp = anchor.timestamp;
          ev.ingest_order = anchor.ingest_order;
        }
      } else {
        anchor = ev;
        have_anchor = true;
      }
      store.add_event(user_id, ev);
    }
  }
  store.finalize(catalog);
  return store;
}

// --- leave-one-out split ----------------------------------------------------

SplitSpec leave_one_out(const SequenceStore& store, const Catalog& catalog,
                        int min_per_domain) {
  if (min_per_domain < 3) {
    throw UsageError("leave-one-out needs min_per_domain >= 3");
  }
  SplitSpec spec;
  spec.min_per_domain = min_per_domain;
  spec.users.resize(store.size());
  for (int i = 0; i < store.size(); ++i) {
    const UserSequence& u = store.user(i);
    std::vector<int> pos_a, pos_b;
    for (int p = 0; p < static_cast<int>(u.events.size()); ++p) {
      Domain d = catalog.item(u.events[p].item).domain;
      (d == Domain::A ? pos_a : pos_b).push_back(p);
    }
    UserSplit& s = spec.users[i];
    if (static_cast<int>(pos_a.size()) >= min_per_domain) {
      s.a.test_pos = pos_a[pos_a.size() - 1];
      s.a.valid_pos = pos_a[pos_a.size() - 2];
    }
    if (static_cast<int>(pos_b.size()) >= min_per_domain) {
      s.b.test_pos = pos_b[pos_b.size() - 1];
      s.b.valid_pos = pos_b[pos_b.size() - 2];
    }
  }
  return spec;
}

std::vector<Event> train_events(const UserSequence& seq, const UserSplit& split) {
  std::vector<Event> out;
  out.reserve(seq.events.size());
  for (int p = 0; p < static_cast<int>(seq.events.size()); ++p) {
    if (!split.is_target(p)) out.push_back(seq.events[p]);
  }
  return out;
}

// --- synthetic corpus -------------------------------------------------------

namespace {

const char* kThemes[] = {"ember",  "tide",   "orchid", "granite",
                         "willow", "cobalt", "saffron", "juniper"};
const char* kNounsA[] = {"jacket", "sneaker", "scarf", "denim",
                         "hoodie", "blouse",  "loafer", "parka"};
const char* kNounsB[] = {"racket", "kettlebell", "paddle", "cleat",
                         "helmet", "wetsuit",    "crampon", "frisbee"};
const char* kAdjectives[] = {"classic", "featherweight", "rugged", "sleek",
                             "insulated", "breathable",  "compact", "vivid"};

std::string pad4(int n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", n);
  return buf;
}

}  // namespace

std::pair<Catalog, SequenceStore> synth_corpus(const SynthConfig& config) {
  if (config.users < 1) throw DataError("synthetic corpus needs at least one user");
  if (config.items_per_domain < 10) {
    throw DataError("synthetic corpus needs at least 10 items per domain");
  }
  if (config.ratio_target < 0.0 || config.ratio_target > 0.95) {
    throw DataError("ratio target must lie in [0, 0.95]: bridge users keep at "
                    "least 3 events in their minority domain");
  }
  int groups = std::min(config.taste_groups,
                        static_cast<int>(std::size(kThemes)));
  if (groups <= 0) throw DataError("need at least one taste group");
  if (config.min_len < 8 || config.max_len < config.min_len) {
    throw DataError("invalid sequence length range");
  }

  Catalog catalog;
  // group_items[domain][group] -> catalog indices
  std::vector<std::vector<std::vector<int>>> group_items(
      2, std::vector<std::vector<int>>(groups));
  for (int d = 0; d < 2; ++d) {
    Domain dom = d == 0 ? Domain::A : Domain::B;
    const char** nouns = d == 0 ? kNounsA : kNounsB;
    for (int j = 0; j < config.items_per_domain; ++j) {
      int g = j % groups;
      const std::string theme = kThemes[g];
      const std::string noun = nouns[j % static_cast<int>(std::size(kNounsA))];
      const std::string adj = kAdjectives[(j / groups) % static_cast<int>(std::size(kAdjectives))];
      ItemRecord rec;
      rec.item_id = std::string(1, domain_letter(dom)) + pad4(j);
      rec.domain = dom;
      rec.title = theme + " " + adj + " " + noun + " " + pad4(j);
      rec.brand = theme + "works";
      rec.date = "2023-" + pad4(1 + j % 12).substr(2) + "-" + pad4(1 + j % 28).substr(2);
      rec.price = std::to_string(10 + (j * 7) % 140) + ".99";
      rec.categories = {d == 0 ? "apparel" : "gear", theme};
      rec.description = "A " + adj + " " + noun + " from the " + theme +
                        " line, made for " + theme + " fans.";
      int index = catalog.add(std::move(rec));
      group_items[d][g].push_back(index);
    }
  }

  // Every tenth user is a bridge: long sequence, at least 3 events in the
  // minority domain, so both domains keep leave-one-out targets. The rest
  // compensate so the mean ratio lands on the target. Minority counts round
  // down, which only pushes ratios upward, never below the drawn value.
  const double bridge_frac = 0.1;
  const double bridge_lo = std::max(0.0, config.ratio_target - 0.20);
  const double bridge_hi = std::max(0.0, config.ratio_target - 0.12);
  const double bridge_mid = 0.5 * (bridge_lo + bridge_hi);
  double rest_mean = (config.ratio_target - bridge_frac * bridge_mid) /
                     (1.0 - bridge_frac);
  rest_mean = std::clamp(rest_mean, 0.0, 0.945);
  const int bridge_min_len = std::min(config.max_len, std::max(config.min_len, 32));

  uint64_t rng = config.seed ^ 0x5e1ec7edULL;
  SequenceStore store;
  int order = 0;
  for (int i = 0; i < config.users; ++i) {
    const std::string user_id = "u" + pad4(i);
    const int group = i % groups;
    const bool bridge = i % 10 == 3;
    const bool a_major = i % 2 == 0;
    double r;
    int len;
    if (bridge) {
      r = bridge_lo + (bridge_hi - bridge_lo) * splitmix_unit(rng);
      len = bridge_min_len +
            static_cast<int>(splitmix_unit(rng) * (config.max_len - bridge_min_len + 1));
    } else {
      r = std::clamp(rest_mean + 0.08 * (splitmix_unit(rng) - 0.5), 0.0, 0.945);
      len = config.min_len +
            static_cast<int>(splitmix_unit(rng) * (config.max_len - config.min_len + 1));
    }
    int minority = static_cast<int>(std::floor(len * (1.0 - r) / 2.0));
    minority = std::clamp(minority, bridge ? 3 : 0, len / 2);

    // minority event slots, chosen without replacement
    std::vector<int> slots(len, 0);
    for (int k = 0; k < minority; ++k) {
      int pick = static_cast<int>(splitmix_unit(rng) * len);
      while (slots[pick % len]) pick += 1;
      slots[pick % len] = 1;
    }

    int64_t ts = 1'600'000'000LL + static_cast<int64_t>(i) * 1'000'000LL;
    for (int k = 0; k < len; ++k) {
      const bool is_minority = slots[k] == 1;
      const bool in_a = a_major != is_minority;
      const int d = in_a ? 0 : 1;
      int g = group;
      if (splitmix_unit(rng) < config.noise_rate) {
        g = static_cast<int>(splitmix_unit(rng) * groups) % groups;
      }
      const std::vector<int>& pool = group_items[d][g];
      int item = pool[static_cast<int>(splitmix_unit(rng) * pool.size()) %
                      static_cast<int>(pool.size())];
      ts += 3600;
      store.add_event(user_id, Event{item, ts, order++});
    }
  }
  store.finalize(catalog);
  return {std::move(catalog), std::move(store)};
}

}  // namespace edt
