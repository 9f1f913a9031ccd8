#include "imagine/forge.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "imagine/math.hpp"
#include "imagine/records.hpp"
#include "imagine/rng.hpp"
#include "imagine/text.hpp"

namespace imagine::forge {

void ForgeConfig::validate() const {
  if (!(band_low >= 0.0 && band_low < band_high && band_high <= 1.0)) {
    throw ConfigError("forge: require 0 <= band_low < band_high <= 1");
  }
  if (plausibility_threshold < 0.0 || plausibility_threshold > 1.0) {
    throw ConfigError("forge: plausibility_threshold must be in [0, 1]");
  }
  if (n_distractors < 1) throw ConfigError("forge: n_distractors must be >= 1");
  if (dev_fraction < 0.0 || dev_fraction >= 1.0) {
    throw ConfigError("forge: dev_fraction must be in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// Providers

TemplateTable::TemplateTable(std::map<std::string, std::string> entries)
    : entries_(std::move(entries)) {}

TemplateTable TemplateTable::load(const std::filesystem::path& path) {
  std::map<std::string, std::string> entries;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected relation<TAB>template");
    }
    entries[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return TemplateTable(std::move(entries));
}

TemplateTable TemplateTable::builtin() {
  // The xWant wording is the canonical one; the rest follow the same pattern
  // and are meant to be overridden by a user-supplied table.
  return TemplateTable({
      {"xWant", "{head}. As a result, PersonX wanted to"},
      {"xNeed", "{head}. Before that, PersonX needed to"},
      {"xIntent", "{head}. Because PersonX wanted to"},
      {"xEffect", "{head}. As a result, PersonX"},
      {"xReact", "{head}. As a result, PersonX felt"},
      {"xAttr", "{head}. PersonX is seen as"},
      {"oWant", "{head}. As a result, others wanted to"},
      {"oEffect", "{head}. As a result, others"},
      {"oReact", "{head}. As a result, others felt"},
  });
}

bool TemplateTable::has(const std::string& relation) const { return entries_.count(relation) > 0; }

std::string TemplateTable::render(const std::string& relation, const std::string& head) const {
  auto it = entries_.find(relation);
  if (it == entries_.end()) throw DataError("no template for relation: " + relation);
  std::string out = it->second;
  const std::string slot = "{head}";
  size_t pos = 0;
  while ((pos = out.find(slot, pos)) != std::string::npos) {
    out.replace(pos, slot.size(), head);
    pos += head.size();
  }
  return out;
}

SentenceEmbeddingProvider::SentenceEmbeddingProvider(
    std::map<std::string, std::vector<float>> entries)
    : entries_(std::move(entries)) {}

SentenceEmbeddingProvider SentenceEmbeddingProvider::load(const std::filesystem::path& bin,
                                                          const std::filesystem::path& ids) {
  const EmbeddingFile f = read_embeddings(bin, ids);
  std::map<std::string, std::vector<float>> entries;
  for (size_t i = 0; i < f.count(); ++i) {
    auto row = f.row(i);
    entries[normalize_text(f.ids[i])] = std::vector<float>(row.begin(), row.end());
  }
  return SentenceEmbeddingProvider(std::move(entries));
}

const std::vector<float>& SentenceEmbeddingProvider::get(const std::string& text) const {
  auto it = entries_.find(normalize_text(text));
  if (it == entries_.end()) {
    throw DataError("no sentence embedding for text: \"" + text + "\"");
  }
  return it->second;
}

bool SentenceEmbeddingProvider::has(const std::string& text) const {
  return entries_.count(normalize_text(text)) > 0;
}

PlausibilityProvider::PlausibilityProvider(
    std::map<std::pair<std::string, std::string>, double> entries)
    : entries_(std::move(entries)) {}

PlausibilityProvider PlausibilityProvider::load(const std::filesystem::path& path) {
  std::map<std::pair<std::string, std::string>, double> entries;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected question<TAB>answer<TAB>score");
    }
    double score = 0.0;
    try {
      score = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    entries[{normalize_text(line.substr(0, t1)), normalize_text(line.substr(t1 + 1, t2 - t1 - 1))}] =
        score;
  }
  return PlausibilityProvider(std::move(entries));
}

double PlausibilityProvider::get(const std::string& question, const std::string& answer) const {
  auto it = entries_.find({normalize_text(question), normalize_text(answer)});
  if (it == entries_.end()) {
    throw DataError("no plausibility score for (\"" + question + "\", \"" + answer + "\")");
  }
  return it->second;
}

namespace {

std::map<std::string, std::string> load_tsv_map(const std::filesystem::path& path,
                                                const char* what) {
  std::map<std::string, std::string> entries;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected key<TAB>" + what);
    }
    entries[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return entries;
}

}  // namespace

CaptionProvider::CaptionProvider(std::map<std::string, std::string> entries)
    : entries_(std::move(entries)) {}

CaptionProvider CaptionProvider::load(const std::filesystem::path& path) {
  return CaptionProvider(load_tsv_map(path, "caption"));
}

const std::string& CaptionProvider::get(const std::string& image_id) const {
  auto it = entries_.find(image_id);
  if (it == entries_.end()) throw DataError("no caption for image id: " + image_id);
  return it->second;
}

bool CaptionProvider::has(const std::string& image_id) const {
  return entries_.count(image_id) > 0;
}

GenerationManifest::GenerationManifest(std::map<std::string, std::string> entries)
    : entries_(std::move(entries)) {}

GenerationManifest GenerationManifest::load(const std::filesystem::path& path) {
  return GenerationManifest(load_tsv_map(path, "image_id"));
}

const std::string& GenerationManifest::get(const std::string& question_id) const {
  auto it = entries_.find(question_id);
  if (it == entries_.end()) {
    throw DataError("no generated image for question id: " + question_id);
  }
  return it->second;
}

bool GenerationManifest::has(const std::string& question_id) const {
  return entries_.count(question_id) > 0;
}

// ---------------------------------------------------------------------------
// Stage primitives

std::string standardize_names(const std::string& text) {
  static const std::string kPerson = "Person";
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
  };
  while (i < text.size()) {
    const bool boundary_before = out.empty() || !is_word(out.back());
    if (boundary_before && text.compare(i, kPerson.size(), kPerson) == 0) {
      const size_t after = i + kPerson.size();
      if (after < text.size() && text[after] >= 'A' && text[after] <= 'Z' &&
          (after + 1 >= text.size() || !is_word(text[after + 1]))) {
        out += kPerson;
        i = after + 1;
        continue;
      }
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}

std::vector<QAPair> dedupe(const std::vector<QAPair>& pairs) {
  std::vector<QAPair> out;
  std::unordered_set<std::string> seen;
  for (const auto& qa : pairs) {
    if (seen.insert(normalize_text(qa.question)).second) out.push_back(qa);
  }
  return out;
}

DistractorDraw sample_distractors(const std::string& gold, const std::vector<std::string>& pool,
                                  const SentenceEmbeddingProvider& embed, const ForgeConfig& cfg) {
  cfg.validate();
  if (pool.empty()) throw DataError("sample_distractors: empty pool");
  const std::vector<float>& gold_emb = embed.get(gold);
  const std::string gold_norm = normalize_text(gold);

  struct Item {
    size_t index;
    double sim;
  };
  std::vector<Item> items;
  std::unordered_set<std::string> seen{gold_norm};
  for (size_t i = 0; i < pool.size(); ++i) {
    if (!seen.insert(normalize_text(pool[i])).second) continue;  // gold or duplicate text
    items.push_back({i, cosine_similarity(embed.get(pool[i]), gold_emb)});
  }

  double lo = cfg.band_low;
  double hi = cfg.band_high;
  int widen_steps = 0;
  auto count_eligible = [&] {
    size_t c = 0;
    for (const auto& it : items)
      if (it.sim >= lo && it.sim <= hi) ++c;
    return c;
  };
  while (count_eligible() < static_cast<size_t>(cfg.n_distractors)) {
    if (lo <= 0.0 && hi >= 1.0) {
      throw DataError("sample_distractors: pool exhausted for gold \"" + gold +
                      "\" after maximal band widening (" + std::to_string(count_eligible()) +
                      " eligible, " + std::to_string(cfg.n_distractors) + " requested)");
    }
    lo = std::max(0.0, lo - 0.05);
    hi = std::min(1.0, hi + 0.05);
    ++widen_steps;
  }

  std::vector<size_t> eligible;
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].sim >= lo && items[i].sim <= hi) eligible.push_back(i);
  }
  Rng rng(mix_seed(mix_seed(cfg.seed, 0xd157ull), fnv1a(gold_norm)));
  const auto picks =
      rng.sample_without_replacement(eligible.size(), static_cast<size_t>(cfg.n_distractors));

  DistractorDraw draw;
  draw.widen_steps = widen_steps;
  draw.band_low = lo;
  draw.band_high = hi;
  for (size_t p : picks) draw.texts.push_back(pool[items[eligible[p]].index]);
  return draw;
}

namespace {

/// Inserts the gold text among distractors at a content-seeded position.
std::pair<std::vector<std::string>, int> place_gold(const std::string& gold,
                                                    const std::vector<std::string>& distractors,
                                                    uint64_t seed, uint64_t content_hash) {
  Rng rng(mix_seed(mix_seed(seed, 0x901dull), content_hash));
  const int n = static_cast<int>(distractors.size()) + 1;
  const int gold_pos = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
  std::vector<std::string> candidates;
  candidates.reserve(n);
  int d = 0;
  for (int i = 0; i < n; ++i) {
    if (i == gold_pos) {
      candidates.push_back(gold);
    } else {
      candidates.push_back(distractors[d++]);
    }
  }
  return {std::move(candidates), gold_pos};
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

uint64_t triple_hash(const KnowledgeTriple& t) {
  return fnv1a(t.head + "\x1f" + t.relation + "\x1f" + t.tail);
}

}  // namespace

QAPair triple_to_qa(const KnowledgeTriple& triple, const TemplateTable& templates,
                    const std::vector<std::string>& answer_pool,
                    const SentenceEmbeddingProvider& embed, const ForgeConfig& cfg) {
  const std::string question = templates.render(triple.relation, triple.head);
  const DistractorDraw draw = sample_distractors(triple.tail, answer_pool, embed, cfg);
  auto [candidates, gold_pos] = place_gold(triple.tail, draw.texts, cfg.seed, triple_hash(triple));
  QAPair qa;
  qa.id = "abs:" + hex64(triple_hash(triple));
  qa.question = question;
  qa.candidates = std::move(candidates);
  qa.gold_index = gold_pos;
  qa.source_tag = SourceTag::AbsAT;
  qa.validate();
  return qa;
}

std::pair<std::vector<QAPair>, std::vector<QAPair>> filter_plausible(
    const std::vector<QAPair>& pairs, const PlausibilityProvider& prov, const ForgeConfig& cfg) {
  std::vector<QAPair> kept, removed;
  for (const auto& qa : pairs) {
    const double score = prov.get(qa.question, qa.candidates[qa.gold_index]);
    if (score >= cfg.plausibility_threshold) {
      kept.push_back(qa);
    } else {
      removed.push_back(qa);
    }
  }
  return {std::move(kept), std::move(removed)};
}

VQAInstance attach_caption(const VQAInstance& inst, const CaptionProvider& prov,
                           const ForgeConfig& cfg) {
  if (inst.caption) {
    throw DataError("attach_caption: instance " + inst.qa.id + " already has a caption");
  }
  if (!inst.image) {
    throw DataError("attach_caption: instance " + inst.qa.id + " has no image");
  }
  const std::string& caption = prov.get(inst.image->id);
  if (caption.empty()) return inst;  // nothing to prefix
  VQAInstance out = inst;
  out.caption = caption + cfg.caption_separator;
  return out;
}

// ---------------------------------------------------------------------------
// Source readers

std::vector<KnowledgeTriple> read_triples_jsonl(const std::filesystem::path& path) {
  std::vector<KnowledgeTriple> out;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("head").get<std::string>(), j.at("relation").get<std::string>(),
                     j.at("tail").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<VcrRecord> read_vcr_jsonl(const std::filesystem::path& path) {
  std::vector<VcrRecord> out;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      VcrRecord r;
      r.id = j.at("id").get<std::string>();
      r.question = j.at("question").get<std::string>();
      r.candidates = j.at("candidates").get<std::vector<std::string>>();
      r.gold_index = j.at("gold_index").get<int>();
      r.image_id = j.at("image_id").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SherlockRecord> read_sherlock_jsonl(const std::filesystem::path& path) {
  std::vector<SherlockRecord> out;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("clue").get<std::string>(),
                     j.at("inference").get<std::string>(), j.at("image_id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct Draft {
  QAPair qa;                  // question + gold-only until the distractor stage
  std::string gold;           // gold candidate text
  std::string image_id;       // empty when unresolved
  bool needs_distractors = false;
};

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(std::string("stage ") + stage + ": " + e.what());
  }
}

}  // namespace

StatsReport::Counts StatsReport::totals() const {
  Counts t;
  for (const auto& [_, c] : per_source) {
    t.train_pairs += c.train_pairs;
    t.dev_pairs += c.dev_pairs;
    t.train_images += c.train_images;
    t.dev_images += c.dev_images;
  }
  return t;
}

std::string StatsReport::render_table() const {
  std::ostringstream os;
  auto row = [&](const std::string& label, int64_t train, int64_t dev) {
    os << label;
    for (size_t i = label.size(); i < 34; ++i) os << ' ';
    os << train << '\t' << dev << '\t' << (train + dev) << '\n';
  };
  os << "                                  Train\tDev\tTotal\n";
  for (const auto& [tag, c] : per_source) {
    const std::string name = to_string(tag);
    const std::string img_label = tag == SourceTag::AbsAT
                                      ? "# Images generated from " + name
                                      : "# Images from " + name;
    row(img_label, c.train_images, c.dev_images);
    row("# QA pairs from " + name, c.train_pairs, c.dev_pairs);
  }
  const Counts t = totals();
  row("# Total Images", t.train_images, t.dev_images);
  row("# Total QA pairs", t.train_pairs, t.dev_pairs);
  return os.str();
}

std::string StatsReport::to_json() const {
  nlohmann::json j;
  for (const auto& [tag, c] : per_source) {
    nlohmann::json s;
    s["train_pairs"] = c.train_pairs;
    s["dev_pairs"] = c.dev_pairs;
    s["train_images"] = c.train_images;
    s["dev_images"] = c.dev_images;
    j["per_source"][to_string(tag)] = s;
  }
  const Counts t = totals();
  j["total_pairs"] = t.pairs();
  j["total_images"] = t.images();
  j["pairs_templated"] = pairs_templated;
  j["duplicates_removed"] = duplicates_removed;
  j["pairs_pre_filter"] = pairs_pre_filter;
  j["filtered_removed"] = filtered_removed;
  j["widen_events"] = widen_events;
  return j.dump();
}

ForgeResult build_dataset(const ForgeSources& sources, const ForgeProviders& providers,
                          const ForgeConfig& cfg) {
  cfg.validate();
  ForgeResult result;
  StatsReport& stats = result.stats;

  // Stage 1: templates. Questions and gold answers only; distractors are
  // drawn after dedupe so widening counters reflect kept records.
  std::vector<Draft> drafts = run_stage("template", [&] {
    std::vector<Draft> out;
    for (const auto& t : sources.triples) {
      if (providers.templates == nullptr) {
        throw DataError("triples given but no template table configured");
      }
      Draft d;
      d.qa.id = "abs:" + hex64(triple_hash(t));
      d.qa.question = providers.templates->render(t.relation, t.head);
      d.qa.source_tag = SourceTag::AbsAT;
      d.gold = t.tail;
      d.needs_distractors = true;
      out.push_back(std::move(d));
    }
    for (const auto& r : sources.vcr) {
      Draft d;
      d.qa.id = r.id;
      d.qa.question = r.question;
      d.qa.candidates = r.candidates;
      d.qa.gold_index = r.gold_index;
      d.qa.source_tag = SourceTag::VCR;
      if (r.gold_index < 0 || r.gold_index >= static_cast<int>(r.candidates.size())) {
        throw DataError("vcr record " + r.id + ": gold_index out of range");
      }
      d.gold = r.candidates[r.gold_index];
      d.image_id = r.image_id;
      out.push_back(std::move(d));
    }
    for (const auto& r : sources.sherlock) {
      Draft d;
      d.qa.id = r.id;
      d.qa.question = cfg.sherlock_question_prefix + r.clue;
      d.qa.source_tag = SourceTag::Sherlock;
      d.gold = r.inference;
      d.image_id = r.image_id;
      d.needs_distractors = true;
      out.push_back(std::move(d));
    }
    return out;
  });
  stats.pairs_templated = static_cast<int64_t>(drafts.size());

  // Stage 2: standardize person names in questions.
  run_stage("standardize", [&] {
    for (auto& d : drafts) d.qa.question = standardize_names(d.qa.question);
    return 0;
  });

  // Stage 3: dedupe by normalized question, keep-first.
  drafts = run_stage("dedupe", [&] {
    std::vector<Draft> out;
    std::unordered_set<std::string> seen;
    for (auto& d : drafts) {
      if (seen.insert(normalize_text(d.qa.question)).second) out.push_back(std::move(d));
    }
    return out;
  });
  stats.duplicates_removed = stats.pairs_templated - static_cast<int64_t>(drafts.size());
  stats.pairs_pre_filter = static_cast<int64_t>(drafts.size());

  // Stage 4: distractor mining. AbsAT draws from the tail pool, Sherlock from
  // the global inference pool; VCR records keep their given candidates.
  run_stage("distractors", [&] {
    std::vector<std::string> tail_pool;
    for (const auto& t : sources.triples) tail_pool.push_back(t.tail);
    std::vector<std::string> inference_pool;
    for (const auto& r : sources.sherlock) inference_pool.push_back(r.inference);

    for (auto& d : drafts) {
      if (!d.needs_distractors) {
        d.qa.validate();
        continue;
      }
      if (providers.embeddings == nullptr) {
        throw DataError("distractor mining requires a sentence embedding provider");
      }
      const auto& pool = d.qa.source_tag == SourceTag::AbsAT ? tail_pool : inference_pool;
      const DistractorDraw draw = sample_distractors(d.gold, pool, *providers.embeddings, cfg);
      if (draw.widen_steps > 0) ++stats.widen_events;
      auto [candidates, gold_pos] =
          place_gold(d.gold, draw.texts, cfg.seed, fnv1a(d.qa.id + "\x1f" + d.gold));
      d.qa.candidates = std::move(candidates);
      d.qa.gold_index = gold_pos;
      d.qa.validate();
    }
    return 0;
  });

  // Assemble instances with image references.
  std::vector<VQAInstance> instances = run_stage("assemble", [&] {
    std::vector<VQAInstance> out;
    for (auto& d : drafts) {
      VQAInstance inst;
      inst.qa = std::move(d.qa);
      std::string image_id = d.image_id;
      if (image_id.empty() && inst.qa.source_tag == SourceTag::AbsAT &&
          providers.generation != nullptr) {
        image_id = providers.generation->get(inst.qa.id);
      }
      if (!image_id.empty()) {
        inst.image = ImageRef{image_id, std::nullopt, std::nullopt};
      }
      out.push_back(std::move(inst));
    }
    return out;
  });

  // Stage 5: captions.
  run_stage("captions", [&] {
    if (providers.captions == nullptr) return 0;
    for (auto& inst : instances) {
      const bool wanted = (inst.qa.source_tag == SourceTag::VCR && cfg.caption_vcr) ||
                          (inst.qa.source_tag == SourceTag::Sherlock && cfg.caption_sherlock);
      if (wanted) inst = attach_caption(inst, *providers.captions, cfg);
    }
    return 0;
  });

  // Stage 6: plausibility filter on (question, gold answer).
  run_stage("filter", [&] {
    if (providers.plausibility == nullptr) return 0;
    std::vector<VQAInstance> kept;
    for (auto& inst : instances) {
      const double score =
          providers.plausibility->get(inst.qa.question, inst.qa.candidates[inst.qa.gold_index]);
      if (score >= cfg.plausibility_threshold) {
        kept.push_back(std::move(inst));
      } else {
        ++stats.filtered_removed;
      }
    }
    instances = std::move(kept);
    return 0;
  });

  // Split assignment and per-source statistics.
  result.is_dev.resize(instances.size(), false);
  std::map<SourceTag, std::set<std::string>> train_images, dev_images;
  for (size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string key = inst.image ? inst.image->id : inst.qa.id;
    Rng split_rng(mix_seed(mix_seed(cfg.seed, 0x5b117ull), fnv1a(key)));
    const bool dev = split_rng.uniform() < cfg.dev_fraction;
    result.is_dev[i] = dev;
    auto& counts = stats.per_source[inst.qa.source_tag];
    (dev ? counts.dev_pairs : counts.train_pairs) += 1;
    if (inst.image) {
      (dev ? dev_images : train_images)[inst.qa.source_tag].insert(inst.image->id);
    }
  }
  for (auto& [tag, c] : stats.per_source) {
    c.train_images = static_cast<int64_t>(train_images[tag].size());
    c.dev_images = static_cast<int64_t>(dev_images[tag].size());
  }

  result.instances = std::move(instances);
  return result;
}

}  // namespace imagine::forge
