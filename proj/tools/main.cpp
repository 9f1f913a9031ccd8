// imagine: batch CLI for the multimodal QA engine.
//
// Verbs: forge, train, eval, index {build,query}, analyze {relevance,impact,mask}.
// Exit codes: 0 success, 2 config error, 3 data/provider error, 4 numerical
// failure. Every command is deterministic given its config file and --seed.

#include <cmath>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "imagine/analysis.hpp"
#include "imagine/backend.hpp"
#include "imagine/config.hpp"
#include "imagine/math.hpp"
#include "imagine/forge.hpp"
#include "imagine/imagination.hpp"
#include "imagine/inference.hpp"
#include "imagine/parallel.hpp"
#include "imagine/records.hpp"
#include "imagine/scoring.hpp"
#include "imagine/training.hpp"

namespace {

using namespace imagine;

struct GlobalOpts {
  std::optional<uint64_t> seed;
  int jobs = 1;
};

backend::EncoderConfig backend_config(const ConfigFile& cfg) {
  backend::EncoderConfig ec;
  const std::string mode = cfg.get_string("backend", "mode", "encoder");
  if (mode == "encoder") {
    ec.mode = backend::Mode::encoder;
  } else if (mode == "decoder") {
    ec.mode = backend::Mode::decoder;
  } else {
    throw ConfigError("backend.mode must be encoder or decoder, got " + mode);
  }
  ec.layers = static_cast<int>(cfg.get_int("backend", "layers", ec.layers));
  ec.hidden_dim = static_cast<int>(cfg.get_int("backend", "hidden_dim", ec.hidden_dim));
  ec.heads = static_cast<int>(cfg.get_int("backend", "heads", ec.heads));
  ec.vocab_size = static_cast<int>(cfg.get_int("backend", "vocab_size", ec.vocab_size));
  ec.max_len = static_cast<int>(cfg.get_int("backend", "max_len", ec.max_len));
  ec.seed = cfg.get_u64("backend", "seed", ec.seed);
  ec.visual_dim = static_cast<int>(cfg.get_int("backend", "visual_dim", ec.visual_dim));
  ec.reduction = static_cast<int>(cfg.get_int("backend", "reduction", ec.reduction));
  ec.validate();
  return ec;
}

training::TrainConfig train_config(const ConfigFile& cfg, const GlobalOpts& g) {
  training::TrainConfig tc;
  tc.margin = cfg.get_double("training", "margin", tc.margin);
  tc.learning_rate = cfg.get_double("training", "learning_rate", tc.learning_rate);
  tc.batch_size = static_cast<int>(cfg.get_int("training", "batch_size", tc.batch_size));
  tc.epochs = static_cast<int>(cfg.get_int("training", "epochs", tc.epochs));
  tc.momentum = cfg.get_double("training", "momentum", tc.momentum);
  tc.seed = cfg.get_u64("training", "seed", tc.seed);
  const std::string routing = cfg.get_string("training", "joint_routing", "both");
  if (routing == "both") {
    tc.joint_routing = training::JointRouting::both;
  } else if (routing == "none") {
    tc.joint_routing = training::JointRouting::none;
  } else {
    throw ConfigError("training.joint_routing must be both or none, got " + routing);
  }
  if (g.seed) tc.seed = *g.seed;
  tc.jobs = g.jobs;
  return tc;
}

forge::ForgeConfig forge_config(const ConfigFile& cfg, const GlobalOpts& g) {
  forge::ForgeConfig fc;
  fc.band_low = cfg.get_double("forge", "band_low", fc.band_low);
  fc.band_high = cfg.get_double("forge", "band_high", fc.band_high);
  fc.plausibility_threshold =
      cfg.get_double("forge", "plausibility_threshold", fc.plausibility_threshold);
  fc.n_distractors = static_cast<int>(cfg.get_int("forge", "n_distractors", fc.n_distractors));
  fc.seed = cfg.get_u64("forge", "seed", fc.seed);
  fc.caption_separator = cfg.get_string("forge", "caption_separator", fc.caption_separator);
  fc.dev_fraction = cfg.get_double("forge", "dev_fraction", fc.dev_fraction);
  fc.sherlock_question_prefix =
      cfg.get_string("forge", "sherlock_question_prefix", fc.sherlock_question_prefix);
  fc.caption_vcr = cfg.get_bool("forge", "caption_vcr", fc.caption_vcr);
  fc.caption_sherlock = cfg.get_bool("forge", "caption_sherlock", fc.caption_sherlock);
  if (g.seed) fc.seed = *g.seed;
  fc.validate();
  return fc;
}

training::ObjectiveFlags parse_objectives(const std::string& list) {
  training::ObjectiveFlags flags{false, false, false};
  std::string cur;
  auto apply = [&](const std::string& name) {
    if (name.empty()) return;
    if (name == "lm") {
      flags.lm = true;
    } else if (name == "itm") {
      flags.itm = true;
    } else if (name == "joint") {
      flags.joint = true;
    } else {
      throw ConfigError("unknown objective: " + name);
    }
  };
  for (char c : list) {
    if (c == ',') {
      apply(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  apply(cur);
  if (!flags.any()) throw ConfigError("no objective enabled");
  return flags;
}

// Providers are loaded lazily so commands only touch the files they need.
struct ProviderCache {
  const ConfigFile* cfg = nullptr;

  std::unique_ptr<forge::TemplateTable> templates;
  std::unique_ptr<forge::SentenceEmbeddingProvider> forge_embeddings;
  std::unique_ptr<forge::PlausibilityProvider> plausibility;
  std::unique_ptr<forge::CaptionProvider> captions;
  std::unique_ptr<forge::GenerationManifest> generation;
  std::unique_ptr<backend::FeatureProvider> features;
  std::unique_ptr<imagination::ImageIndex> index;
  std::unique_ptr<imagination::ConceptExpander> concepts;
  std::unique_ptr<forge::SentenceEmbeddingProvider> query_embeddings;

  const forge::TemplateTable* load_templates() {
    if (templates) return templates.get();
    if (cfg->has("forge", "templates")) {
      templates = std::make_unique<forge::TemplateTable>(
          forge::TemplateTable::load(cfg->require_string("forge", "templates")));
    } else {
      templates = std::make_unique<forge::TemplateTable>(forge::TemplateTable::builtin());
    }
    return templates.get();
  }
  const forge::SentenceEmbeddingProvider* load_forge_embeddings() {
    if (!forge_embeddings && cfg->has("forge", "embeddings")) {
      forge_embeddings =
          std::make_unique<forge::SentenceEmbeddingProvider>(forge::SentenceEmbeddingProvider::load(
              cfg->require_string("forge", "embeddings"),
              cfg->require_string("forge", "embeddings_ids")));
    }
    return forge_embeddings.get();
  }
  const forge::PlausibilityProvider* load_plausibility() {
    if (!plausibility && cfg->has("forge", "plausibility")) {
      plausibility = std::make_unique<forge::PlausibilityProvider>(
          forge::PlausibilityProvider::load(cfg->require_string("forge", "plausibility")));
    }
    return plausibility.get();
  }
  const forge::CaptionProvider* load_captions() {
    if (!captions && cfg->has("forge", "captions")) {
      captions = std::make_unique<forge::CaptionProvider>(
          forge::CaptionProvider::load(cfg->require_string("forge", "captions")));
    }
    return captions.get();
  }
  const forge::GenerationManifest* load_generation() {
    if (!generation && cfg->has("imagination", "generation_manifest")) {
      generation = std::make_unique<forge::GenerationManifest>(
          forge::GenerationManifest::load(cfg->require_string("imagination", "generation_manifest")));
    }
    return generation.get();
  }
  const backend::FeatureProvider* load_features() {
    if (!features && cfg->has("imagination", "features")) {
      features = std::make_unique<backend::FeatureProvider>(backend::FeatureProvider::load(
          cfg->require_string("imagination", "features"),
          cfg->require_string("imagination", "features_manifest")));
    }
    return features.get();
  }
  const imagination::ImageIndex* load_index() {
    if (!index && cfg->has("imagination", "index")) {
      index = std::make_unique<imagination::ImageIndex>(imagination::load_index(
          cfg->require_string("imagination", "index"),
          cfg->require_string("imagination", "index_ids")));
    }
    return index.get();
  }
  const imagination::ConceptExpander* load_concepts() {
    if (!concepts && cfg->has("imagination", "concepts")) {
      concepts = std::make_unique<imagination::ConceptExpander>(
          imagination::ConceptExpander::load(cfg->require_string("imagination", "concepts")));
    }
    return concepts.get();
  }
  const forge::SentenceEmbeddingProvider* load_query_embeddings() {
    if (!query_embeddings && cfg->has("imagination", "embeddings")) {
      query_embeddings =
          std::make_unique<forge::SentenceEmbeddingProvider>(forge::SentenceEmbeddingProvider::load(
              cfg->require_string("imagination", "embeddings"),
              cfg->require_string("imagination", "embeddings_ids")));
    }
    return query_embeddings.get();
  }
};

// ---------------------------------------------------------------------------
// forge

int cmd_forge(const ConfigFile& cfg, const GlobalOpts& g, const std::string& triples_path,
              const std::string& vcr_path, const std::string& sherlock_path,
              const std::string& out_path, const std::string& dev_out_path,
              const std::string& stats_path, bool dry_run) {
  forge::ForgeConfig fc = forge_config(cfg, g);
  if (dev_out_path.empty()) fc.dev_fraction = 0.0;

  forge::ForgeSources sources;
  if (!triples_path.empty()) sources.triples = forge::read_triples_jsonl(triples_path);
  if (!vcr_path.empty()) sources.vcr = forge::read_vcr_jsonl(vcr_path);
  if (!sherlock_path.empty()) sources.sherlock = forge::read_sherlock_jsonl(sherlock_path);

  ProviderCache providers;
  providers.cfg = &cfg;
  forge::ForgeProviders fp;
  fp.templates = providers.load_templates();
  fp.embeddings = providers.load_forge_embeddings();
  fp.plausibility = providers.load_plausibility();
  fp.captions = providers.load_captions();
  fp.generation = providers.load_generation();

  const forge::ForgeResult result = forge::build_dataset(sources, fp, fc);

  if (!dry_run) {
    std::vector<VQAInstance> train_set, dev_set;
    for (size_t i = 0; i < result.instances.size(); ++i) {
      (result.is_dev[i] ? dev_set : train_set).push_back(result.instances[i]);
    }
    write_instances_jsonl(out_path, train_set);
    if (!dev_out_path.empty()) write_instances_jsonl(dev_out_path, dev_set);
  }
  if (!stats_path.empty()) {
    write_lines(stats_path, {result.stats.to_json()});
  }
  std::cout << result.stats.render_table();
  if (dry_run) std::cout << "(dry run: no dataset written)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

/// Attaches patch features to instances that reference an image.
void attach_features(std::vector<VQAInstance>& instances,
                     const backend::FeatureProvider* features) {
  for (auto& inst : instances) {
    if (inst.image && features != nullptr && features->has(inst.image->id)) {
      inst.image->features = features->get(inst.image->id);
    }
  }
}

int cmd_train(const ConfigFile& cfg, const GlobalOpts& g, const std::string& dataset_path,
              const std::string& dev_path, const std::string& out_path,
              const std::string& metrics_path, const std::string& objectives,
              const std::string& init_path) {
  const backend::EncoderConfig ec = backend_config(cfg);
  training::TrainConfig tc = train_config(cfg, g);
  if (!objectives.empty()) tc.objectives = parse_objectives(objectives);

  const backend::Backbone bb(ec);
  backend::AdapterParams initial = init_path.empty()
                                       ? backend::AdapterParams::init(ec)
                                       : training::load_checkpoint(init_path, ec);

  std::vector<VQAInstance> dataset = read_instances_jsonl(dataset_path);
  std::vector<VQAInstance> dev;
  if (!dev_path.empty()) dev = read_instances_jsonl(dev_path);

  ProviderCache providers;
  providers.cfg = &cfg;
  const backend::FeatureProvider* features = providers.load_features();
  if (tc.objectives.need_itm()) {
    attach_features(dataset, features);
    attach_features(dev, features);
  }

  const uint64_t frozen_before = bb.frozen_hash();
  const training::TrainResult result = training::train(dataset, dev, bb, initial, tc);
  if (bb.frozen_hash() != frozen_before) {
    throw NumericError("frozen backbone weights changed during training");
  }

  training::save_checkpoint(out_path, ec, result.params);
  if (!metrics_path.empty()) training::write_metrics(metrics_path, result.metrics);

  for (const auto& m : result.metrics) {
    std::cout << "epoch " << m.epoch << "  l_lm " << m.l_lm << "  l_itm " << m.l_itm
              << "  l_joint " << m.l_joint << "  dev_acc " << m.dev_acc << "\n";
  }
  std::cout << "best epoch: " << result.best_epoch << "\ncheckpoint: " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const ConfigFile& cfg, const GlobalOpts& g, const std::string& checkpoint_path,
             const std::string& dataset_path, const std::string& strategy_name, double lambda,
             bool sweep, int grid_points, const std::string& log_path,
             const std::string& curve_path, const std::string& task) {
  const backend::EncoderConfig ec = backend_config(cfg);
  const backend::Backbone bb(ec);
  const backend::AdapterParams params = training::load_checkpoint(checkpoint_path, ec);

  inference::EnsembleConfig ens;
  ens.lambda = cfg.get_double("inference", "lambda", ens.lambda);
  const std::string source = cfg.get_string("inference", "text_source", "lm");
  if (source == "lm") {
    ens.text_source = inference::TextSource::lm;
  } else if (source == "joint") {
    ens.text_source = inference::TextSource::joint;
  } else {
    throw ConfigError("inference.text_source must be lm or joint, got " + source);
  }
  if (!task.empty() && cfg.has("lambda", task)) {
    ens.per_task[task] = cfg.get_double("lambda", task, ens.lambda);
  }
  if (lambda >= 0.0) ens.lambda = lambda;
  ens.validate();
  const double eff_lambda = task.empty() ? ens.lambda : ens.lambda_for(task);

  std::vector<VQAInstance> instances = read_instances_jsonl(dataset_path);
  if (instances.empty()) throw DataError("empty evaluation set");

  const imagination::Strategy strategy = imagination::strategy_from_string(strategy_name);
  ProviderCache cache;
  cache.cfg = &cfg;
  imagination::ImaginationProviders ip;
  ip.features = cache.load_features();
  if (strategy == imagination::Strategy::generate) {
    ip.manifest = cache.load_generation();
  } else {
    ip.index = cache.load_index();
    ip.embeddings = cache.load_query_embeddings();
    if (strategy == imagination::Strategy::concept_retrieve) ip.expander = cache.load_concepts();
  }

  const bool need_itm = sweep || eff_lambda > 0.0;
  scoring::ScoreFlags flags{true, need_itm};

  if (need_itm) {
    for (auto& inst : instances) {
      inst.image = imagination::imagine(inst.qa.id, inst.effective_question(), strategy, ip);
      if (!inst.image->features) {
        throw DataError("no features available for image " + inst.image->id +
                        " chosen for instance " + inst.qa.id);
      }
    }
  }

  std::vector<inference::ScoredInstance> scored(instances.size());
  parallel_for(instances.size(), g.jobs, [&](size_t i) {
    scored[i] = {instances[i].qa.id, instances[i].qa.gold_index,
                 scoring::score_instance(instances[i], bb, params, flags)};
  });

  if (sweep) {
    std::vector<double> grid;
    if (grid_points < 2) throw ConfigError("--grid needs at least 2 points");
    for (int i = 0; i < grid_points; ++i) {
      grid.push_back(static_cast<double>(i) / (grid_points - 1));
    }
    const inference::SweepResult res = inference::sweep_lambda(scored, grid);
    if (!curve_path.empty()) {
      std::vector<std::string> lines;
      for (const auto& [l, acc] : res.curve) {
        nlohmann::json j;
        j["lambda"] = l;
        j["accuracy"] = acc;
        lines.push_back(j.dump());
      }
      write_lines(curve_path, lines);
    }
    for (const auto& [l, acc] : res.curve) {
      std::cout << "lambda " << l << "  accuracy " << acc << "\n";
    }
    std::cout << "best lambda: " << res.best_lambda << "\n";
    const auto eval = inference::evaluate(scored, res.best_lambda);
    if (!log_path.empty()) inference::write_prediction_log(log_path, eval.log);
    std::cout << "accuracy at best lambda: " << eval.accuracy << "\n";
    return 0;
  }

  // evaluate() uses the LM text source; re-run the ensemble per instance
  // when the config selects the joint variant.
  inference::EvalResult eval;
  if (ens.text_source == inference::TextSource::lm) {
    eval = inference::evaluate(scored, eff_lambda);
  } else {
    long hits = 0;
    for (const auto& inst : scored) {
      const auto pred = inference::ensemble_predict(inst.scores, eff_lambda, ens.text_source);
      inference::PredictionRecord rec;
      rec.id = inst.id;
      rec.gold = inst.gold;
      if (inst.scores.has_lm) rec.pred_lm = argmax_lowest(inst.scores.s_lm);
      if (inst.scores.has_itm) rec.pred_itm = argmax_lowest(inst.scores.s_itm);
      rec.pred_ensemble = pred.predicted_index;
      rec.probs = pred.probs;
      if (rec.pred_ensemble == rec.gold) ++hits;
      eval.log.push_back(std::move(rec));
    }
    eval.accuracy = static_cast<double>(hits) / static_cast<double>(scored.size());
  }
  if (!log_path.empty()) inference::write_prediction_log(log_path, eval.log);
  std::cout << "instances: " << scored.size() << "\nlambda: " << eff_lambda
            << "\naccuracy: " << eval.accuracy << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// index

int cmd_index_build(const std::string& embeddings, const std::string& ids,
                    const std::string& out, const std::string& out_ids) {
  const auto records = to_records(read_embeddings(embeddings, ids));
  const auto index = imagination::build_index(records, embeddings);
  imagination::save_index(index, out, out_ids);
  std::cout << "index: " << index.size() << " images, dim " << index.dim() << "\n";
  return 0;
}

int cmd_index_query(const std::string& index_path, const std::string& ids_path,
                    const std::string& query_path, const std::string& query_ids_path, int k) {
  const auto index = imagination::load_index(index_path, ids_path);
  const auto queries = read_embeddings(query_path, query_ids_path);
  for (size_t qi = 0; qi < queries.count(); ++qi) {
    const auto hits = imagination::retrieve(queries.row(qi), index, k);
    for (size_t r = 0; r < hits.size(); ++r) {
      std::cout << queries.ids[qi] << "\t" << r + 1 << "\t" << hits[r].id << "\t"
                << hits[r].similarity << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

int cmd_analyze_relevance(const std::string& text_bin, const std::string& text_ids,
                          const std::string& image_bin, const std::string& image_ids,
                          const std::string& out_path) {
  const auto text = read_embeddings(text_bin, text_ids);
  const auto image = read_embeddings(image_bin, image_ids);
  if (text.count() != image.count()) {
    throw DataError("relevance: text rows (" + std::to_string(text.count()) +
                    ") and image rows (" + std::to_string(image.count()) + ") differ");
  }
  std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs;
  for (size_t i = 0; i < text.count(); ++i) {
    auto t = text.row(i);
    auto m = image.row(i);
    pairs.push_back({{t.begin(), t.end()}, {m.begin(), m.end()}});
  }
  const auto rep = analysis::relevance(pairs);
  if (!out_path.empty()) {
    std::vector<std::string> lines;
    for (size_t i = 0; i < pairs.size(); ++i) {
      nlohmann::json j;
      j["text_id"] = text.ids[i];
      j["image_id"] = image.ids[i];
      j["relevance"] = rep.per_pair[i];
      lines.push_back(j.dump());
    }
    write_lines(out_path, lines);
  }
  std::cout << "pairs: " << pairs.size() << "\nmean relevance: " << rep.mean << "\n";
  return 0;
}

int cmd_analyze_impact(const std::string& log_path) {
  const auto log = inference::read_prediction_log(log_path);
  const auto rep = analysis::imagination_impact(log);
  std::cout << "instances: " << rep.total << "\nhelpful: " << rep.helpful_pct
            << "%\nharmful: " << rep.harmful_pct << "%\n";
  return 0;
}

int cmd_analyze_mask(const ConfigFile& cfg, const std::string& checkpoint_path,
                     const std::string& image_id, const std::string& text, int k,
                     const std::string& out_bin, const std::string& out_manifest) {
  const backend::EncoderConfig ec = backend_config(cfg);
  const backend::Backbone bb(ec);
  const backend::AdapterParams params = training::load_checkpoint(checkpoint_path, ec);
  ProviderCache cache;
  cache.cfg = &cfg;
  const backend::FeatureProvider* features = cache.load_features();
  if (features == nullptr) {
    throw ConfigError("analyze mask requires imagination.features in the config");
  }
  const VisualFeatureSet vs = features->get(image_id);

  const auto tokens = bb.tokenizer().tokenize(text);
  const auto hs = bb.encode(tokens, backend::Adapter::itm, params);
  const auto cv = scoring::contextualize(hs.context, vs.patches, params.w_p);
  const int count = k >= 0 ? k : analysis::default_mask_count(vs.patch_count());
  const VisualFeatureSet masked = analysis::mask_lowest(vs, cv, count);

  if (!out_bin.empty()) {
    backend::save_features(out_bin, out_manifest.empty() ? out_bin + ".manifest" : out_manifest,
                           {{image_id, masked.patches}});
  }
  const auto order = analysis::rank_patches(cv);
  std::cout << "patches: " << vs.patch_count() << "\nmasked: " << count << "\nzeroed indices:";
  for (int i = 0; i < count; ++i) std::cout << " " << order[i];
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imagine: multimodal QA engine (forge / train / eval / index / analyze)"};
  app.require_subcommand(1);

  GlobalOpts global;
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the stochastic seed");
  app.add_option("--jobs", global.jobs, "Worker thread cap (results are identical)");

  std::string config_path;

  // forge
  auto* forge_cmd = app.add_subcommand("forge", "Build a synthetic VQA dataset");
  std::string triples, vcr, sherlock, out, dev_out, stats;
  bool dry_run = false;
  forge_cmd->add_option("--config", config_path, "Config file")->required();
  forge_cmd->add_option("--triples", triples, "Knowledge triples JSONL");
  forge_cmd->add_option("--vcr", vcr, "VCR-style records JSONL");
  forge_cmd->add_option("--sherlock", sherlock, "Sherlock-style clue/inference JSONL");
  forge_cmd->add_option("--out", out, "Output dataset JSONL (train split)");
  forge_cmd->add_option("--dev-out", dev_out, "Output dataset JSONL (dev split)");
  forge_cmd->add_option("--stats", stats, "Stats JSON path");
  forge_cmd->add_flag("--dry-run", dry_run, "Compute stats only, write no dataset");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the adapters");
  std::string dataset, dev, ckpt_out, metrics, objectives, init_ckpt;
  train_cmd->add_option("--config", config_path, "Config file")->required();
  train_cmd->add_option("--dataset", dataset, "Training dataset JSONL")->required();
  train_cmd->add_option("--dev", dev, "Dev dataset JSONL");
  train_cmd->add_option("--out", ckpt_out, "Checkpoint output path")->required();
  train_cmd->add_option("--metrics", metrics, "Metrics JSONL path");
  train_cmd->add_option("--objectives", objectives, "Comma subset of lm,itm,joint");
  train_cmd->add_option("--init", init_ckpt, "Initial checkpoint (resume)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, eval_dataset, strategy = "retrieve", pred_log, curve, task;
  double lambda = -1.0;
  bool sweep = false;
  int grid_points = 21;
  eval_cmd->add_option("--config", config_path, "Config file")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "Adapter checkpoint")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Evaluation dataset JSONL")->required();
  eval_cmd->add_option("--strategy", strategy, "generate | retrieve | concept_retrieve");
  eval_cmd->add_option("--lambda", lambda, "Ensemble coefficient in [0, 1]");
  eval_cmd->add_flag("--sweep", sweep, "Sweep the lambda grid");
  eval_cmd->add_option("--grid", grid_points, "Sweep grid size (default 21)");
  eval_cmd->add_option("--log", pred_log, "Prediction log JSONL path");
  eval_cmd->add_option("--curve", curve, "Sweep curve JSONL path");
  eval_cmd->add_option("--task", task, "Task name for per-task lambda lookup");

  // index
  auto* index_cmd = app.add_subcommand("index", "Retrieval index management");
  index_cmd->require_subcommand(1);
  auto* index_build = index_cmd->add_subcommand("build", "Build and persist an index");
  std::string idx_embeddings, idx_ids, idx_out, idx_out_ids;
  index_build->add_option("--embeddings", idx_embeddings, "Embedding binary")->required();
  index_build->add_option("--ids", idx_ids, "Id sidecar")->required();
  index_build->add_option("--out", idx_out, "Index binary output")->required();
  index_build->add_option("--out-ids", idx_out_ids, "Index id sidecar output")->required();
  auto* index_query = index_cmd->add_subcommand("query", "Query a persisted index");
  std::string q_index, q_ids, q_embeddings, q_query_ids;
  int topk = 5;
  index_query->add_option("--index", q_index, "Index binary")->required();
  index_query->add_option("--ids", q_ids, "Index id sidecar")->required();
  index_query->add_option("--query-embeddings", q_embeddings, "Query embedding binary")->required();
  index_query->add_option("--query-ids", q_query_ids, "Query id sidecar")->required();
  index_query->add_option("-k,--topk", topk, "Results per query");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Post-hoc analyses");
  analyze_cmd->require_subcommand(1);
  auto* rel_cmd = analyze_cmd->add_subcommand("relevance", "Image-text relevance");
  std::string rel_text, rel_text_ids, rel_image, rel_image_ids, rel_out;
  rel_cmd->add_option("--text-embeddings", rel_text, "Text embedding binary")->required();
  rel_cmd->add_option("--text-ids", rel_text_ids, "Text id sidecar")->required();
  rel_cmd->add_option("--image-embeddings", rel_image, "Image embedding binary")->required();
  rel_cmd->add_option("--image-ids", rel_image_ids, "Image id sidecar")->required();
  rel_cmd->add_option("--out", rel_out, "Per-pair report JSONL");
  auto* impact_cmd = analyze_cmd->add_subcommand("impact", "Helpful/harmful imagination ratios");
  std::string impact_log;
  impact_cmd->add_option("--log", impact_log, "Prediction log JSONL")->required();
  auto* mask_cmd = analyze_cmd->add_subcommand("mask", "Erase lowest-attention patches");
  std::string mask_ckpt, mask_image, mask_text, mask_out, mask_out_manifest;
  int mask_k = -1;
  mask_cmd->add_option("--config", config_path, "Config file")->required();
  mask_cmd->add_option("--checkpoint", mask_ckpt, "Adapter checkpoint")->required();
  mask_cmd->add_option("--image-id", mask_image, "Image id in the feature provider")->required();
  mask_cmd->add_option("--text", mask_text, "Query text")->required();
  mask_cmd->add_option("-k", mask_k, "Patches to erase (default: 100 or P/2)");
  mask_cmd->add_option("--out", mask_out, "Masked feature binary output");
  mask_cmd->add_option("--out-manifest", mask_out_manifest, "Masked feature manifest output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // unified config-error exit code
  }

  try {
    if (seed_opt->count() > 0) global.seed = seed_value;

    if (forge_cmd->parsed()) {
      const auto cfg = ConfigFile::load(config_path);
      return cmd_forge(cfg, global, triples, vcr, sherlock, out, dev_out, stats, dry_run);
    }
    if (train_cmd->parsed()) {
      const auto cfg = ConfigFile::load(config_path);
      return cmd_train(cfg, global, dataset, dev, ckpt_out, metrics, objectives, init_ckpt);
    }
    if (eval_cmd->parsed()) {
      const auto cfg = ConfigFile::load(config_path);
      return cmd_eval(cfg, global, checkpoint, eval_dataset, strategy, lambda, sweep, grid_points,
                      pred_log, curve, task);
    }
    if (index_cmd->parsed()) {
      if (index_build->parsed()) return cmd_index_build(idx_embeddings, idx_ids, idx_out, idx_out_ids);
      if (index_query->parsed()) return cmd_index_query(q_index, q_ids, q_embeddings, q_query_ids, topk);
    }
    if (analyze_cmd->parsed()) {
      if (rel_cmd->parsed()) {
        return cmd_analyze_relevance(rel_text, rel_text_ids, rel_image, rel_image_ids, rel_out);
      }
      if (impact_cmd->parsed()) return cmd_analyze_impact(impact_log);
      if (mask_cmd->parsed()) {
        const auto cfg = ConfigFile::load(config_path);
        return cmd_analyze_mask(cfg, mask_ckpt, mask_image, mask_text, mask_k, mask_out,
                                mask_out_manifest);
      }
    }
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
