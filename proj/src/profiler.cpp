#include "edt/profiler.hpp"

#include <fstream>
#include <set>
#include <utility>

#include "edt/kmeans.hpp"
#include "nlohmann/json.hpp"

namespace edt {

using nlohmann::json;
using nlohmann::ordered_json;

ClusterPartition cluster_domain(const std::vector<Event>& domain_view, Domain domain,
                                const Mat& item_embeddings, int cluster_count,
                                uint64_t seed) {
  if (cluster_count < 1) throw UsageError("cluster count must be at least 1");
  ClusterPartition part;
  part.domain = domain;
  if (domain_view.empty()) return part;

  std::set<int> distinct;
  std::vector<std::vector<double>> points;
  points.reserve(domain_view.size());
  for (const Event& ev : domain_view) {
    if (ev.item < 0 || ev.item >= item_embeddings.cols()) {
      throw DataError("event item " + std::to_string(ev.item) +
                      " has no embedding column");
    }
    distinct.insert(ev.item);
    const auto col = item_embeddings.col(ev.item);
    points.emplace_back(col.data(), col.data() + col.size());
  }

  int k = std::min(cluster_count, static_cast<int>(distinct.size()));
  KMeansResult km = kmeans(points, k, seed);

  // Compact to non-empty groups, keeping cluster id order.
  std::vector<char> seen(static_cast<size_t>(k), 0);
  for (int c : km.assignment) seen[c] = 1;
  std::vector<int> dense(static_cast<size_t>(k), -1);
  int next = 0;
  for (int c = 0; c < k; ++c) {
    if (seen[c]) dense[c] = next++;
  }
  part.assignment.resize(domain_view.size());
  part.groups.resize(static_cast<size_t>(next));
  for (size_t i = 0; i < domain_view.size(); ++i) {
    int g = dense[km.assignment[i]];
    part.assignment[i] = g;
    part.groups[g].push_back(domain_view[i]);
  }
  return part;
}

namespace {

struct ReformOption {
  const char* label;
  const char* text;
};

constexpr ReformOption kReform[5] = {
    {"balanced", "nearly balanced between the two domains"},
    {"mildly dominant", "mildly dominant toward one domain"},
    {"clearly dominant", "clearly dominant toward one domain"},
    {"strongly dominant", "strongly dominant toward one domain"},
    {"extremely dominant", "extremely dominant toward one domain"},
};

void check_bucket(int bucket) {
  if (bucket < 1 || bucket > 5) {
    throw UsageError("reform bucket " + std::to_string(bucket) + " out of range");
  }
}

}  // namespace

int reform_bucket(double ratio) {
  if (ratio < 0.2) return 1;
  if (ratio < 0.4) return 2;
  if (ratio < 0.6) return 3;
  if (ratio < 0.8) return 4;
  return 5;
}

const std::string& reform_label(int bucket) {
  check_bucket(bucket);
  static const std::string labels[5] = {kReform[0].label, kReform[1].label,
                                        kReform[2].label, kReform[3].label,
                                        kReform[4].label};
  return labels[bucket - 1];
}

const std::string& reform_text(int bucket) {
  check_bucket(bucket);
  static const std::string texts[5] = {kReform[0].text, kReform[1].text,
                                       kReform[2].text, kReform[3].text,
                                       kReform[4].text};
  return texts[bucket - 1];
}

ReformInstruction build_reform(double ratio) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw UsageError("domain ratio " + std::to_string(ratio) +
                     " outside [0, 1]");
  }
  ReformInstruction out;
  out.ratio = ratio;
  out.bucket = reform_bucket(ratio);
  out.text = reform_text(out.bucket);
  return out;
}

std::string summarize_cluster(const std::vector<Event>& group, Domain domain,
                              const ReformInstruction& reform, const Catalog& catalog,
                              Gateway& gateway, const DomainNames& names) {
  if (group.empty()) throw UsageError("cannot summarize an empty cluster");
  std::vector<std::string> rendered;
  rendered.reserve(group.size());
  for (const Event& ev : group) {
    rendered.push_back(item_text(catalog.item(ev.item), names));
  }
  std::string prompt = render(TemplateId::summarize_reform,
                              {{"domain", names.of(domain)},
                               {"samples", join_samples(rendered)},
                               {"ManualPrompt", reform.text}});
  return gateway.chat_text(prompt, ChatKind::summarize);
}

std::string analyze_user(const std::vector<std::string>& summaries_a,
                         const std::vector<std::string>& summaries_b,
                         const ReformInstruction& reform, Gateway& gateway,
                         const DomainNames& names) {
  if (summaries_a.empty() && summaries_b.empty()) {
    throw UsageError("cannot analyze a user with no cluster summaries");
  }
  auto block = [](const std::vector<std::string>& summaries) {
    if (summaries.empty()) return std::string("(no interactions in this domain)");
    return join_samples(summaries);
  };
  std::string prompt = render(TemplateId::analyze,
                              {{"domainA", names.a},
                               {"domainB", names.b},
                               {"summariesA", block(summaries_a)},
                               {"summariesB", block(summaries_b)},
                               {"ManualPrompt", reform.text}});
  return gateway.chat_text(prompt, ChatKind::analyze);
}

Vec project_profile(const std::string& analysis, Gateway& gateway,
                    const AdapterParams& profile_adapter) {
  std::vector<float> emb = gateway.embed(analysis);
  if (static_cast<int>(emb.size()) != profile_adapter.d_in()) {
    throw UsageError("profile embedding width " + std::to_string(emb.size()) +
                     " does not match the adapter input " +
                     std::to_string(profile_adapter.d_in()));
  }
  Vec e(emb.size());
  for (size_t i = 0; i < emb.size(); ++i) e[static_cast<int>(i)] = emb[i];
  return adapt(e, profile_adapter);
}

UserProfile profile_user(const UserSequence& seq, const Catalog& catalog,
                         const Mat& item_embeddings, Gateway& gateway,
                         const ProfilerConfig& config) {
  if (seq.events.empty()) {
    throw DataError("user " + seq.user_id + " has no events to profile");
  }
  ReformInstruction reform = build_reform(domain_ratio(seq));
  auto [view_a, view_b] = split_by_domain(seq, catalog);

  UserProfile out;
  out.user_id = seq.user_id;
  out.reform_bucket = reform.bucket;

  uint64_t seed_a = config.kmeans_seed ^ fnv1a64(seq.user_id);
  uint64_t seed_b = seed_a ^ 0x8000000000000000ULL;
  auto summarize_domain = [&](const std::vector<Event>& view, Domain domain,
                              uint64_t seed, std::vector<std::string>& summaries) {
    if (view.empty()) return;
    ClusterPartition part =
        cluster_domain(view, domain, item_embeddings, config.cluster_count, seed);
    for (const std::vector<Event>& group : part.groups) {
      summaries.push_back(
          summarize_cluster(group, domain, reform, catalog, gateway, config.names));
    }
  };
  summarize_domain(view_a, Domain::A, seed_a, out.summaries_a);
  summarize_domain(view_b, Domain::B, seed_b, out.summaries_b);

  out.analysis =
      analyze_user(out.summaries_a, out.summaries_b, reform, gateway, config.names);
  return out;
}

std::vector<UserProfile> profile_users(const SequenceStore& store,
                                       const Catalog& catalog,
                                       const Mat& item_embeddings, Gateway& gateway,
                                       const ProfilerConfig& config) {
  std::vector<UserProfile> out;
  out.reserve(static_cast<size_t>(store.size()));
  for (const UserSequence& seq : store.users()) {
    out.push_back(profile_user(seq, catalog, item_embeddings, gateway, config));
  }
  return out;
}

void write_profiles_jsonl(const std::vector<UserProfile>& profiles,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const UserProfile& p : profiles) {
    ordered_json line;
    line["user_id"] = p.user_id;
    line["summaries_A"] = p.summaries_a;
    line["summaries_B"] = p.summaries_b;
    line["reform_bucket"] = p.reform_bucket;
    line["analysis"] = p.analysis;
    out << line.dump() << "\n";
  }
}

std::vector<UserProfile> read_profiles_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<UserProfile> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("user_id") || !j.contains("summaries_A") ||
        !j.contains("summaries_B") || !j.contains("reform_bucket") ||
        !j.contains("analysis")) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing profile field");
    }
    UserProfile p;
    p.user_id = j["user_id"].get<std::string>();
    p.summaries_a = j["summaries_A"].get<std::vector<std::string>>();
    p.summaries_b = j["summaries_B"].get<std::vector<std::string>>();
    p.reform_bucket = j["reform_bucket"].get<int>();
    p.analysis = j["analysis"].get<std::string>();
    check_bucket(p.reform_bucket);
    out.push_back(std::move(p));
  }
  return out;
}

std::map<std::string, Vec> profile_embeddings(const std::vector<UserProfile>& profiles,
                                              Gateway& gateway) {
  std::map<std::string, Vec> out;
  for (const UserProfile& p : profiles) {
    std::vector<float> emb = gateway.embed(p.analysis);
    Vec e(emb.size());
    for (size_t i = 0; i < emb.size(); ++i) e[static_cast<int>(i)] = emb[i];
    out[p.user_id] = std::move(e);
  }
  return out;
}

}  // namespace edt
