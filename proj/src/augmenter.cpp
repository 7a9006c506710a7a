#include "edt/augmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "edt/kmeans.hpp"

namespace edt {

using json = nlohmann::ordered_json;

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw UsageError("cosine of mismatched widths");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

RepresentativeSet select_representatives(const std::vector<int>& interacted_items,
                                         const Catalog& catalog, Gateway& gateway,
                                         int cluster_count, uint64_t seed,
                                         const DomainNames& names) {
  RepresentativeSet set;
  set.cluster_count = cluster_count;
  if (interacted_items.empty()) return set;
  if (cluster_count < 1) throw UsageError("cluster count must be >= 1");

  std::vector<int> distinct(interacted_items);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  set.domain = catalog.item(distinct.front()).domain;

  std::vector<std::vector<float>> embs;
  std::vector<std::vector<double>> points;
  for (int idx : distinct) {
    std::vector<float> e = gateway.embed(item_text(catalog.item(idx), names));
    points.emplace_back(e.begin(), e.end());
    embs.push_back(std::move(e));
  }

  if (static_cast<int>(distinct.size()) <= cluster_count) {
    for (size_t i = 0; i < distinct.size(); ++i) {
      set.items.push_back({distinct[i], embs[i]});
    }
    return set;
  }

  KMeansResult km = kmeans(points, cluster_count, seed);
  for (int c = 0; c < static_cast<int>(km.centroids.size()); ++c) {
    int member = nearest_member(points, km, c);
    if (member < 0) continue;
    set.items.push_back({distinct[member], embs[member]});
  }
  std::sort(set.items.begin(), set.items.end(),
            [](const Representative& x, const Representative& y) {
              return x.item < y.item;
            });
  set.items.erase(std::unique(set.items.begin(), set.items.end(),
                              [](const Representative& x, const Representative& y) {
                                return x.item == y.item;
                              }),
                  set.items.end());
  return set;
}

namespace {

std::string rendered_samples(const RepresentativeSet& reps, const Catalog& catalog,
                             const DomainNames& names) {
  std::vector<std::string> texts;
  for (const Representative& r : reps.items) {
    texts.push_back(item_text(catalog.item(r.item), names));
  }
  return join_samples(texts);
}

}  // namespace

std::vector<ScoredCandidate> generate_candidates(const std::string& user_id,
                                                 const RepresentativeSet& reps_src,
                                                 const RepresentativeSet& reps_tgt,
                                                 Direction direction,
                                                 const AugmenterConfig& config,
                                                 const Catalog& catalog,
                                                 Gateway& gateway) {
  if (reps_src.items.empty()) return {};
  Domain target = direction == Direction::A2B ? Domain::B : Domain::A;
  const std::string& src_name =
      direction == Direction::A2B ? config.names.a : config.names.b;
  const std::string& tgt_name = config.names.of(target);

  std::string prompt =
      render(TemplateId::generation,
             {{"domainA", src_name},
              {"domainB", tgt_name},
              {"id", user_id},
              {"samplesA", rendered_samples(reps_src, catalog, config.names)},
              {"samplesB", rendered_samples(reps_tgt, catalog, config.names)},
              {"num", std::to_string(config.gen_budget)}});

  GenerationRecord rec;
  try {
    rec = gateway.chat_generate(prompt, config.gen_budget);
  } catch (const BackendError& e) {
    throw BackendError("user " + user_id + " " + direction_name(direction) + ": " +
                           e.what(),
                       e.attempts);
  }

  std::vector<ScoredCandidate> out;
  std::set<std::string> seen_titles;
  for (const GeneratedItem& gi : rec.items) {
    std::string norm = normalize_title(gi.title);
    if (norm.empty()) continue;
    if (catalog.find_real_title(norm) >= 0) continue;  // already a real item
    if (!seen_titles.insert(norm).second) continue;
    ScoredCandidate cand;
    cand.direction = direction;
    cand.item.domain = target;
    cand.item.title = gi.title;
    cand.item.brand = gi.brand;
    cand.item.date = gi.date;
    cand.item.price = gi.price;
    cand.item.categories = gi.categories;
    cand.item.description = gi.description;
    cand.item.synthetic = true;
    std::string text = item_text(cand.item, config.names);
    cand.item.item_id = "gen:" + sha256_hex(text).substr(0, 12);
    cand.embedding = gateway.embed(text);
    out.push_back(std::move(cand));
  }
  return out;
}

void score_candidate(ScoredCandidate& candidate, const RepresentativeSet& reps_a,
                     const RepresentativeSet& reps_b, const Catalog& catalog) {
  if (reps_a.items.empty() || reps_b.items.empty()) {
    throw UsageError("scoring needs representatives in both domains");
  }
  auto best_of = [&](const RepresentativeSet& reps, int& anchor, double& score) {
    anchor = -1;
    score = -2.0;
    for (const Representative& r : reps.items) {
      double s = cosine_similarity(candidate.embedding, r.embedding);
      bool better = s > score ||
                    (s == score && anchor >= 0 &&
                     catalog.item(r.item).item_id < catalog.item(anchor).item_id);
      if (better) {
        anchor = r.item;
        score = s;
      }
    }
  };
  best_of(reps_a, candidate.anchor_a, candidate.score_a);
  best_of(reps_b, candidate.anchor_b, candidate.score_b);
}

std::vector<ScoredCandidate> filter(std::vector<ScoredCandidate> candidates,
                                    const AugmenterConfig& config) {
  std::vector<ScoredCandidate> out;
  for (Direction dir : {Direction::A2B, Direction::B2A}) {
    std::vector<ScoredCandidate> bucket;
    for (const ScoredCandidate& c : candidates) {
      if (c.direction == dir) bucket.push_back(c);
    }
    std::sort(bucket.begin(), bucket.end(),
              [](const ScoredCandidate& x, const ScoredCandidate& y) {
                if (x.source_score() != y.source_score()) {
                  return x.source_score() > y.source_score();
                }
                return x.item.item_id < y.item.item_id;
              });
    for (int rank = 1; rank <= static_cast<int>(bucket.size()); ++rank) {
      const ScoredCandidate& c = bucket[rank - 1];
      if (rank > config.rank_cutoff) break;
      if (c.target_score() < config.threshold) continue;
      out.push_back(c);
    }
  }
  return out;
}

namespace {

// Timestamp and order are copied from the predecessor so an augmented list
// stays non-decreasing; position, not time, carries the insertion semantics.
void fill_times(std::vector<Event>& events, const std::vector<bool>& synthetic) {
  for (size_t i = 0; i < events.size(); ++i) {
    if (!synthetic[i]) continue;
    if (i == 0) {
      events[i].timestamp = events.size() > 1 ? events[1].timestamp : 0;
      events[i].ingest_order = 0;
    } else {
      events[i].timestamp = events[i - 1].timestamp;
      events[i].ingest_order = events[i - 1].ingest_order;
    }
  }
}

}  // namespace

AugmentedSequence insert(const std::string& user_id,
                         const std::vector<Event>& events,
                         const std::vector<ScoredCandidate>& survivors,
                         Catalog& catalog, const AugmenterConfig& config) {
  AugmentedSequence aug;
  aug.user_id = user_id;

  struct Placed {
    int catalog_index;
    const ScoredCandidate* cand;
  };
  std::vector<Placed> placed;
  for (const ScoredCandidate& c : survivors) {
    int idx = catalog.index_of(c.item.item_id);
    if (idx < 0) idx = catalog.add(c.item);
    placed.push_back({idx, &c});
  }

  std::vector<Event> out;
  std::vector<bool> synthetic;
  std::vector<const Placed*> out_source;  // aligned with out, null = original

  auto push = [&](const Event& ev, const Placed* src) {
    out.push_back(ev);
    synthetic.push_back(src != nullptr);
    out_source.push_back(src);
  };

  if (config.insert_mode == InsertMode::anchor) {
    // survivors attach after the last occurrence of their anchor
    std::vector<std::vector<const Placed*>> attached(events.size());
    for (const Placed& p : placed) {
      int anchor = p.cand->source_anchor();
      int pos = -1;
      for (int i = 0; i < static_cast<int>(events.size()); ++i) {
        if (events[i].item == anchor) pos = i;
      }
      if (pos < 0) {
        aug.skipped.push_back(p.cand->item.item_id);
        continue;
      }
      attached[pos].push_back(&p);
    }
    for (auto& list : attached) {
      std::sort(list.begin(), list.end(), [](const Placed* x, const Placed* y) {
        if (x->cand->source_score() != y->cand->source_score()) {
          return x->cand->source_score() > y->cand->source_score();
        }
        return x->cand->item.item_id < y->cand->item.item_id;
      });
    }
    for (size_t i = 0; i < events.size(); ++i) {
      push(events[i], nullptr);
      for (const Placed* p : attached[i]) {
        push(Event{p->catalog_index, 0, 0}, p);
      }
    }
  } else if (config.insert_mode == InsertMode::tail) {
    for (const Event& ev : events) push(ev, nullptr);
    for (const Placed& p : placed) push(Event{p.catalog_index, 0, 0}, &p);
  } else {
    for (const Event& ev : events) push(ev, nullptr);
    uint64_t rng = config.insert_seed ^ fnv1a64(user_id);
    for (const Placed& p : placed) {
      int pos = static_cast<int>(splitmix_unit(rng) * (out.size() + 1)) %
                static_cast<int>(out.size() + 1);
      out.insert(out.begin() + pos, Event{p.catalog_index, 0, 0});
      synthetic.insert(synthetic.begin() + pos, true);
      out_source.insert(out_source.begin() + pos, &p);
    }
  }

  fill_times(out, synthetic);
  aug.events = std::move(out);
  for (size_t i = 0; i < aug.events.size(); ++i) {
    const Placed* p = out_source[i];
    if (!p) continue;
    InsertionRecord rec;
    rec.item_id = p->cand->item.item_id;
    rec.direction = p->cand->direction;
    rec.anchor_item_id = p->cand->source_anchor() >= 0
                             ? catalog.item(p->cand->source_anchor()).item_id
                             : "";
    rec.score_src = p->cand->source_score();
    rec.score_tgt = p->cand->target_score();
    rec.position_index = static_cast<int>(i);
    aug.inserted.push_back(std::move(rec));
  }
  return aug;
}

AugmentedSequence augment_user(const std::string& user_id,
                               const std::vector<Event>& events, Catalog& catalog,
                               Gateway& gateway, const AugmenterConfig& config) {
  std::vector<int> items_a, items_b;
  for (const Event& ev : events) {
    (catalog.item(ev.item).domain == Domain::A ? items_a : items_b).push_back(ev.item);
  }

  uint64_t seed_a = config.kmeans_seed ^ fnv1a64(user_id);
  uint64_t seed_b = seed_a ^ 0x8000000000000000ULL;
  RepresentativeSet reps_a = select_representatives(
      items_a, catalog, gateway, config.cluster_count, seed_a, config.names);
  RepresentativeSet reps_b = select_representatives(
      items_b, catalog, gateway, config.cluster_count, seed_b, config.names);

  std::vector<ScoredCandidate> survivors;
  // scoring needs representatives on both sides, so single-domain users pass
  // through unaugmented
  if (!reps_a.items.empty() && !reps_b.items.empty()) {
    std::vector<ScoredCandidate> candidates;
    for (Direction dir : {Direction::A2B, Direction::B2A}) {
      const RepresentativeSet& src = dir == Direction::A2B ? reps_a : reps_b;
      const RepresentativeSet& tgt = dir == Direction::A2B ? reps_b : reps_a;
      auto generated =
          generate_candidates(user_id, src, tgt, dir, config, catalog, gateway);
      for (auto& c : generated) candidates.push_back(std::move(c));
    }
    for (ScoredCandidate& c : candidates) {
      score_candidate(c, reps_a, reps_b, catalog);
    }
    if (config.filter_enabled) {
      survivors = filter(std::move(candidates), config);
    } else {
      survivors = std::move(candidates);
    }
  }
  return insert(user_id, events, survivors, catalog, config);
}

AugmentedSequence passthrough_sequence(const std::string& user_id,
                                       const std::vector<Event>& events) {
  AugmentedSequence aug;
  aug.user_id = user_id;
  aug.events = events;
  return aug;
}

void write_augmented_jsonl(const std::vector<AugmentedSequence>& sequences,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const AugmentedSequence& aug : sequences) {
    json obj;
    obj["user_id"] = aug.user_id;
    json list = json::array();
    for (const InsertionRecord& rec : aug.inserted) {
      json r;
      r["item_id"] = rec.item_id;
      r["direction"] = direction_name(rec.direction);
      r["anchor_item_id"] = rec.anchor_item_id;
      r["score_src"] = rec.score_src;
      r["score_tgt"] = rec.score_tgt;
      r["position_index"] = rec.position_index;
      list.push_back(r);
    }
    obj["inserted"] = list;
    out << obj.dump() << "\n";
  }
}

std::vector<AugmentedSequence> replay_augmented_jsonl(
    const std::string& path, const std::vector<std::string>& user_ids,
    const std::vector<std::vector<Event>>& base_events, const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::map<std::string, std::vector<InsertionRecord>> by_user;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + " line " + std::to_string(line_no);
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      throw DataError(where + ": invalid JSON");
    }
    std::string user = obj.value("user_id", "");
    if (user.empty()) throw DataError(where + ": missing user_id");
    std::vector<InsertionRecord> recs;
    for (const auto& r : obj.value("inserted", json::array())) {
      InsertionRecord rec;
      rec.item_id = r.value("item_id", "");
      rec.direction = r.value("direction", "A2B") == std::string("B2A")
                          ? Direction::B2A
                          : Direction::A2B;
      rec.anchor_item_id = r.value("anchor_item_id", "");
      rec.score_src = r.value("score_src", 0.0);
      rec.score_tgt = r.value("score_tgt", 0.0);
      rec.position_index = r.value("position_index", -1);
      if (rec.item_id.empty() || rec.position_index < 0) {
        throw DataError(where + ": malformed insertion record");
      }
      recs.push_back(std::move(rec));
    }
    by_user[user] = std::move(recs);
  }

  std::vector<AugmentedSequence> out;
  for (size_t i = 0; i < user_ids.size(); ++i) {
    AugmentedSequence aug;
    aug.user_id = user_ids[i];
    aug.events = base_events[i];
    std::vector<bool> synthetic(aug.events.size(), false);
    auto it = by_user.find(user_ids[i]);
    if (it != by_user.end()) {
      std::vector<InsertionRecord> recs = it->second;
      std::sort(recs.begin(), recs.end(),
                [](const InsertionRecord& a, const InsertionRecord& b) {
                  return a.position_index < b.position_index;
                });
      for (const InsertionRecord& rec : recs) {
        int idx = catalog.index_of(rec.item_id);
        if (idx < 0) {
          throw DataError("augmented item '" + rec.item_id + "' missing from catalog");
        }
        if (rec.position_index > static_cast<int>(aug.events.size())) {
          throw DataError("insertion position " + std::to_string(rec.position_index) +
                          " out of range for user " + user_ids[i]);
        }
        aug.events.insert(aug.events.begin() + rec.position_index, Event{idx, 0, 0});
        synthetic.insert(synthetic.begin() + rec.position_index, true);
        aug.inserted.push_back(rec);
      }
    }
    fill_times(aug.events, synthetic);
    out.push_back(std::move(aug));
  }
  return out;
}

namespace {

std::string title_digest(const std::vector<Event>& events, const Catalog& catalog,
                         const std::set<size_t>& drop) {
  std::string text;
  for (size_t i = 0; i < events.size(); ++i) {
    if (drop.count(i)) continue;
    if (!text.empty()) text += "; ";
    text += catalog.item(events[i].item).title;
  }
  return text.empty() ? "nothing" : text;
}

}  // namespace

std::vector<std::pair<double, double>> profile_similarity(
    const std::vector<std::string>& user_ids,
    const std::vector<std::vector<Event>>& base_events,
    const std::vector<AugmentedSequence>& augmented, const Catalog& catalog,
    Gateway& gateway, const std::vector<double>& injection_fractions) {
  if (user_ids.size() != base_events.size() || user_ids.size() != augmented.size()) {
    throw UsageError("profile similarity input sizes disagree");
  }
  std::vector<std::pair<double, double>> table;
  for (double f : injection_fractions) {
    double sum = 0;
    int counted = 0;
    for (size_t u = 0; u < user_ids.size(); ++u) {
      if (base_events[u].empty()) continue;
      const AugmentedSequence& aug = augmented[u];
      std::vector<InsertionRecord> recs = aug.inserted;
      std::sort(recs.begin(), recs.end(),
                [](const InsertionRecord& a, const InsertionRecord& b) {
                  if (a.score_src != b.score_src) return a.score_src > b.score_src;
                  return a.item_id < b.item_id;
                });
      size_t keep = static_cast<size_t>(
          std::llround(f * static_cast<double>(recs.size())));
      std::set<size_t> drop;
      for (size_t k = keep; k < recs.size(); ++k) {
        drop.insert(static_cast<size_t>(recs[k].position_index));
      }
      std::string base_text = title_digest(base_events[u], catalog, {});
      std::string aug_text = title_digest(aug.events, catalog, drop);
      sum += cosine_similarity(gateway.embed(base_text), gateway.embed(aug_text));
      ++counted;
    }
    table.emplace_back(f, counted ? sum / counted : 1.0);
  }
  return table;
}

}  // namespace edt
