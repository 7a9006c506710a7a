#include "edt/prompts.hpp"

#include <cctype>

namespace edt {

namespace {

const std::string kGeneration =
    "The chosen dataset has several aspects: <domainA> and <domainB>, which are "
    "all subcategories of the Amazon Dataset.\n"
    "For user <id>, here are some samples in the <domainA> domain: <samplesA>.\n"
    "And some representative samples in the <domainB> domain: <samplesB>.\n"
    "Please consider the format, distribution, content, and attribute "
    "relationships of the above samples in the <domainA> domain, as well as the "
    "user's interaction sequences and potential preferences, to generate new "
    "data in the <domainB> domain. The newly generated data must not exist in "
    "the given samples and should be highly related to the given information in "
    "the <domainB> domain.\n"
    "Please generate <num> new samples in the <domainB> domain based on the "
    "given samples and interaction sequences. The new samples must not exist in "
    "the given samples.\n"
    "You should generate samples strictly obeying the following JSON format.\n"
    "[{\"title\": \"...\", \"brand\": \"...\", \"date\": \"...\", \"price\": "
    "\"...\", \"categories\": [\"...\"], \"description\": \"...\"}]";

const std::string kItem =
    "The <domain> item has the following attributes:\n"
    "name is <TITLE>; brand is <BRAND>; date is <DATE>; price is <PRICE>.\n"
    "The item has the following features: <FEATURE>.\n"
    "The item has the following descriptions: <DESCRIPTION>.";

const std::string kSummarizeReform =
    "Assume you are a consumer who is shopping online. You have shown interest "
    "in <domain> in the following commodities: <samples>.\n"
    "Please conclude it not beyond 50 words. Do not only evaluate one specific "
    "commodity, but illustrate the interests overall.\n"
    "Please note that your interests in <domain> are <ManualPrompt> in all "
    "domain interactions.\n"
    "You should consider this description to balance the importance of "
    "different domains when you summarize your preferences.";

const std::string kAnalyze =
    "Assume you are a consumer who is shopping online. Your summarized "
    "preferences in the <domainA> domain are: <summariesA>.\n"
    "Your summarized preferences in the <domainB> domain are: <summariesB>.\n"
    "Please note that your interests are <ManualPrompt> in all domain "
    "interactions.\n"
    "Please combine these preferences to analyze your cross-domain preference "
    "without bias, in one short paragraph.";

}  // namespace

namespace markers {
const char* kTargetSamples = "And some representative samples in the ";
const char* kTargetEnd = "\nPlease consider the format";
const char* kGenerateCount = "Please generate ";
const char* kFormat = "strictly obeying the following JSON format";
const char* kSummarizeItems = "in the following commodities: ";
const char* kSummarizeEnd = ".\nPlease conclude it";
const char* kItemAttributes = " item has the following attributes:";
const char* kAnalyzeBlock = "Your summarized preferences in the ";
const char* kDomainColon = " domain: ";
const char* kDomainAre = " domain are: ";
}  // namespace markers

const std::string& template_body(TemplateId id) {
  switch (id) {
    case TemplateId::generation: return kGeneration;
    case TemplateId::item: return kItem;
    case TemplateId::summarize_reform: return kSummarizeReform;
    case TemplateId::analyze: return kAnalyze;
  }
  throw UsageError("unknown template id");
}

std::string render(TemplateId id, const std::map<std::string, std::string>& bindings) {
  const std::string& body = template_body(id);
  std::string out;
  out.reserve(body.size());
  size_t i = 0;
  while (i < body.size()) {
    char c = body[i];
    if (c != '<') {
      out.push_back(c);
      ++i;
      continue;
    }
    size_t close = body.find('>', i + 1);
    bool is_name = close != std::string::npos && close > i + 1;
    for (size_t k = i + 1; is_name && k < close; ++k) {
      if (!std::isalnum(static_cast<unsigned char>(body[k]))) is_name = false;
    }
    if (!is_name) {
      out.push_back(c);
      ++i;
      continue;
    }
    std::string name = body.substr(i + 1, close - i - 1);
    auto it = bindings.find(name);
    if (it == bindings.end()) throw UsageError(name + " unbound");
    out += it->second;
    i = close + 1;
  }
  return out;
}

std::string render_item(const ItemRecord& rec, const std::string& domain_name) {
  std::string features;
  for (size_t i = 0; i < rec.categories.size(); ++i) {
    if (i) features += ", ";
    features += rec.categories[i];
  }
  return render(TemplateId::item, {{"domain", domain_name},
                                   {"TITLE", rec.title},
                                   {"BRAND", rec.brand},
                                   {"DATE", rec.date},
                                   {"PRICE", rec.price},
                                   {"FEATURE", features},
                                   {"DESCRIPTION", rec.description}});
}

std::string join_samples(const std::vector<std::string>& rendered_items) {
  std::string out;
  for (size_t i = 0; i < rendered_items.size(); ++i) {
    if (i) out += "\n";
    out += "[" + std::to_string(i + 1) + "] " + rendered_items[i];
  }
  return out;
}

}  // namespace edt
