#pragma once

#include <map>
#include <string>
#include <vector>

#include "edt/corpus.hpp"

namespace edt {

enum class TemplateId { generation, item, summarize_reform, analyze };

// Raw template text with <name> placeholders.
const std::string& template_body(TemplateId id);

// Pure substitution of <name> placeholders. Unbound placeholder -> UsageError
// naming it ("<name> unbound"). Substituted values are not re-scanned.
std::string render(TemplateId id, const std::map<std::string, std::string>& bindings);

// Item text fed to the embedding model and spliced into sample lists.
// categories join into the features slot with ", ".
std::string render_item(const ItemRecord& rec, const std::string& domain_name);

// Display names for the two domains, used in every prompt.
struct DomainNames {
  std::string a = "Domain-A";
  std::string b = "Domain-B";
  const std::string& of(Domain d) const { return d == Domain::A ? a : b; }
};

inline std::string item_text(const ItemRecord& rec, const DomainNames& names) {
  return render_item(rec, names.of(rec.domain));
}

// Joins rendered item texts for a <samples*> slot.
std::string join_samples(const std::vector<std::string>& rendered_items);

// Markers the deterministic backend uses to locate prompt sections. Kept next
// to the templates so the two cannot drift apart.
namespace markers {
extern const char* kTargetSamples;    // precedes the target-domain sample list
extern const char* kTargetEnd;        // follows the target-domain sample list
extern const char* kGenerateCount;    // precedes the requested sample count
extern const char* kFormat;           // format instruction line
extern const char* kSummarizeItems;   // precedes the summarize sample list
extern const char* kSummarizeEnd;     // follows the summarize sample list
extern const char* kItemAttributes;   // starts one item text
extern const char* kAnalyzeBlock;     // precedes each domain's summary block
extern const char* kDomainColon;      // separator between domain name and list
extern const char* kDomainAre;        // separator in the analyze template
}  // namespace markers

}  // namespace edt
