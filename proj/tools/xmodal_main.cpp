// Command line front end: synth / train / diagnose / sweep / stats.
//
// Exit codes: 0 success, 2 usage or config error, 3 numerical divergence,
// 4 checkpoint/corpus incompatibility, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/xmodal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw xmodal::ValidationError("cannot open config file: " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw xmodal::ValidationError(path + ": " + std::string(e.what()));
  }
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) {
    throw xmodal::ValidationError(where + ": expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw xmodal::ValidationError(where + ": unknown key \"" + item.key() + "\"");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

xmodal::SynthConfig synth_config_from_json(const json& j) {
  check_keys(j,
             {"num_images", "captions_per_image", "seed", "oov_noun_rate",
              "scene", "noise"},
             "synth config");
  xmodal::SynthConfig cfg;
  read_field(j, "num_images", cfg.num_images);
  read_field(j, "captions_per_image", cfg.captions_per_image);
  read_field(j, "seed", cfg.seed);
  read_field(j, "oov_noun_rate", cfg.oov_noun_rate);
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    check_keys(s,
               {"min_objects", "max_objects", "num_classes",
                "classes_per_category", "feature_dim", "feature_noise", "grid",
                "box_jitter", "overlap"},
               "synth config scene");
    read_field(s, "min_objects", cfg.scene.min_objects);
    read_field(s, "max_objects", cfg.scene.max_objects);
    read_field(s, "num_classes", cfg.scene.num_classes);
    read_field(s, "classes_per_category", cfg.scene.classes_per_category);
    read_field(s, "feature_dim", cfg.scene.feature_dim);
    read_field(s, "feature_noise", cfg.scene.feature_noise);
    read_field(s, "grid", cfg.scene.grid);
    read_field(s, "box_jitter", cfg.scene.box_jitter);
    read_field(s, "overlap", cfg.scene.overlap);
  }
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    check_keys(n, {"kind", "rate", "argmax_mass", "temperature"},
               "synth config noise");
    if (n.contains("kind")) {
      cfg.noise.kind = xmodal::noise_kind_from_string(n.at("kind").get<std::string>());
    }
    read_field(n, "rate", cfg.noise.rate);
    read_field(n, "argmax_mass", cfg.noise.argmax_mass);
    read_field(n, "temperature", cfg.noise.temperature);
  }
  return cfg;
}

ordered_json synth_config_to_json(const xmodal::SynthConfig& cfg) {
  ordered_json j;
  j["num_images"] = cfg.num_images;
  j["captions_per_image"] = cfg.captions_per_image;
  j["seed"] = cfg.seed;
  j["oov_noun_rate"] = cfg.oov_noun_rate;
  ordered_json s;
  s["min_objects"] = cfg.scene.min_objects;
  s["max_objects"] = cfg.scene.max_objects;
  s["num_classes"] = cfg.scene.num_classes;
  s["classes_per_category"] = cfg.scene.classes_per_category;
  s["feature_dim"] = cfg.scene.feature_dim;
  s["feature_noise"] = cfg.scene.feature_noise;
  s["grid"] = cfg.scene.grid;
  s["box_jitter"] = cfg.scene.box_jitter;
  s["overlap"] = cfg.scene.overlap;
  j["scene"] = s;
  ordered_json n;
  n["kind"] = xmodal::to_string(cfg.noise.kind);
  n["rate"] = cfg.noise.rate;
  n["argmax_mass"] = cfg.noise.argmax_mass;
  n["temperature"] = cfg.noise.temperature;
  j["noise"] = n;
  return j;
}

xmodal::TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"seed", "epochs", "vision_epochs", "batch_size", "learning_rate",
              "adam_beta1", "adam_beta2", "adam_eps", "vision_objective",
              "itm_negative_rate", "masking"},
             "train config");
  xmodal::TrainConfig cfg;
  read_field(j, "seed", cfg.seed);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "vision_epochs", cfg.vision_epochs);
  read_field(j, "batch_size", cfg.batch_size);
  read_field(j, "learning_rate", cfg.learning_rate);
  read_field(j, "adam_beta1", cfg.adam_beta1);
  read_field(j, "adam_beta2", cfg.adam_beta2);
  read_field(j, "adam_eps", cfg.adam_eps);
  if (j.contains("vision_objective")) {
    cfg.vision_objective = xmodal::vision_objective_from_string(
        j.at("vision_objective").get<std::string>());
  }
  read_field(j, "itm_negative_rate", cfg.itm_negative_rate);
  if (j.contains("masking")) {
    const json& m = j.at("masking");
    check_keys(m,
               {"token_mask_rate", "mask_prob", "random_prob",
                "region_mask_rate", "region_comask_measure", "region_comask_tau"},
               "train config masking");
    read_field(m, "token_mask_rate", cfg.masking.token_mask_rate);
    read_field(m, "mask_prob", cfg.masking.mask_prob);
    read_field(m, "random_prob", cfg.masking.random_prob);
    read_field(m, "region_mask_rate", cfg.masking.region_mask_rate);
    if (m.contains("region_comask_measure")) {
      cfg.masking.region_comask.measure = xmodal::overlap_measure_from_string(
          m.at("region_comask_measure").get<std::string>());
    }
    read_field(m, "region_comask_tau", cfg.masking.region_comask.tau);
  }
  return cfg;
}

ordered_json train_config_to_json(const xmodal::TrainConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["vision_epochs"] = cfg.vision_epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["vision_objective"] = xmodal::to_string(cfg.vision_objective);
  j["itm_negative_rate"] = cfg.itm_negative_rate;
  ordered_json m;
  m["token_mask_rate"] = cfg.masking.token_mask_rate;
  m["mask_prob"] = cfg.masking.mask_prob;
  m["random_prob"] = cfg.masking.random_prob;
  m["region_mask_rate"] = cfg.masking.region_mask_rate;
  m["region_comask_measure"] = xmodal::to_string(cfg.masking.region_comask.measure);
  m["region_comask_tau"] = cfg.masking.region_comask.tau;
  j["masking"] = m;
  return j;
}

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const ordered_json& config, const ordered_json& inputs,
                        const std::vector<std::string>& outputs) {
  ordered_json m;
  m["tool"] = "xmodal";
  m["version"] = xmodal::kVersionString;
  m["format_version"] = xmodal::kFormatVersion;
  m["command"] = command;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["timestamp_utc"] = utc_timestamp();
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
  }
  out << m.dump(2) << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

// Config files may give any subset of the model keys; the rest keep their
// defaults. Dimensions left at zero are filled in from the corpus later.
xmodal::ModelConfig model_config_from_file_json(const json& j) {
  check_keys(j,
             {"architecture", "text_only_layers", "vision_only_layers",
              "cross_layers", "hidden_dim", "heads", "vocab_size",
              "num_classes", "feature_dim", "max_tokens", "max_regions",
              "use_box_embedding"},
             "model config");
  xmodal::ModelConfig cfg;
  if (j.contains("architecture")) {
    cfg.architecture =
        xmodal::architecture_from_string(j.at("architecture").get<std::string>());
  }
  read_field(j, "text_only_layers", cfg.text_only_layers);
  read_field(j, "vision_only_layers", cfg.vision_only_layers);
  read_field(j, "cross_layers", cfg.cross_layers);
  read_field(j, "hidden_dim", cfg.hidden_dim);
  read_field(j, "heads", cfg.heads);
  read_field(j, "vocab_size", cfg.vocab_size);
  read_field(j, "num_classes", cfg.num_classes);
  read_field(j, "feature_dim", cfg.feature_dim);
  read_field(j, "max_tokens", cfg.max_tokens);
  read_field(j, "max_regions", cfg.max_regions);
  read_field(j, "use_box_embedding", cfg.use_box_embedding);
  return cfg;
}

// Sizes a default model to the corpus at hand. Explicit config files take
// precedence; zeros in them mean "fill in from the corpus".
xmodal::ModelConfig resolve_model_config(const std::optional<json>& file_json,
                                         const xmodal::Corpus& corpus) {
  xmodal::ModelConfig cfg;
  if (file_json) {
    cfg = model_config_from_file_json(*file_json);
  }
  if (cfg.vocab_size == 0) cfg.vocab_size = static_cast<int>(corpus.vocab_size());
  if (cfg.num_classes == 0) cfg.num_classes = corpus.num_classes;
  if (cfg.feature_dim == 0) cfg.feature_dim = corpus.feature_dim;
  int max_tokens = 1;
  int max_regions = 1;
  for (const auto& ex : corpus.examples) {
    max_tokens = std::max(max_tokens, static_cast<int>(ex.sentence.tokens.size()));
    max_regions = std::max(max_regions, static_cast<int>(ex.regions.size()));
  }
  if (!file_json || !file_json->contains("max_tokens")) cfg.max_tokens = max_tokens;
  if (!file_json || !file_json->contains("max_regions")) cfg.max_regions = max_regions;
  xmodal::validate_config(cfg);
  xmodal::check_corpus_compat(cfg, corpus);
  return cfg;
}

int run_synth(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
  xmodal::SynthConfig cfg = synth_config_from_json(load_json_file(config_path));
  if (seed_override) cfg.seed = *seed_override;
  xmodal::validate_config(cfg);

  xmodal::SynthResult result = xmodal::generate_corpus(cfg);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  xmodal::save_corpus(result.corpus, (out / "corpus.jsonl").string());
  xmodal::save_manifest(result.manifest, (out / "labels.jsonl").string());

  std::size_t corrupted = 0;
  for (const auto& row : result.manifest.entries) {
    if (row.corrupted) ++corrupted;
  }
  xmodal::CorpusStats stats = xmodal::corpus_stats(result.corpus);

  ordered_json inputs;
  inputs["config"] = config_path;
  write_run_manifest(out, "synth", synth_config_to_json(cfg), inputs,
                     {"corpus.jsonl", "labels.jsonl"});

  std::cout << "wrote " << (out / "corpus.jsonl").string() << "\n"
            << "  images: " << stats.num_images
            << "  examples: " << result.corpus.examples.size()
            << "  datapoints: " << stats.num_datapoints << "\n"
            << "  regions with corrupted labels: " << corrupted << " / "
            << result.manifest.entries.size() << "\n";
  return 0;
}

int run_train(const std::string& corpus_path, const std::string& out_dir,
              const std::string& regime_name,
              const std::optional<std::string>& model_config_path,
              const std::optional<std::string>& train_config_path,
              const std::optional<std::string>& init_from,
              std::optional<std::uint64_t> seed, std::optional<int> epochs,
              std::optional<int> vision_epochs, std::optional<int> batch_size,
              std::optional<double> lr,
              const std::optional<std::string>& objective) {
  xmodal::Regime regime = xmodal::regime_from_string(regime_name);
  xmodal::Corpus corpus = xmodal::load_corpus(corpus_path);

  std::optional<json> mjson;
  if (model_config_path) mjson = load_json_file(*model_config_path);
  xmodal::ModelConfig mcfg = resolve_model_config(mjson, corpus);

  xmodal::TrainConfig tcfg;
  if (train_config_path) {
    tcfg = train_config_from_json(load_json_file(*train_config_path));
  }
  if (seed) tcfg.seed = *seed;
  if (epochs) tcfg.epochs = *epochs;
  if (vision_epochs) tcfg.vision_epochs = *vision_epochs;
  if (batch_size) tcfg.batch_size = *batch_size;
  if (lr) tcfg.learning_rate = *lr;
  if (objective) {
    tcfg.vision_objective = xmodal::vision_objective_from_string(*objective);
  }
  xmodal::validate_config(tcfg);

  const bool needs_init = regime == xmodal::Regime::TextInit_VL ||
                          regime == xmodal::Regime::TextInit_V_then_VL;
  if (needs_init && !init_from) {
    throw std::invalid_argument("regime " + regime_name +
                                " requires --init-from <text checkpoint>");
  }

  xmodal::MultimodalModel model = [&] {
    if (init_from) {
      xmodal::CheckpointData data = xmodal::read_checkpoint(*init_from);
      return xmodal::init_model_from(mcfg, tcfg.seed, data);
    }
    return xmodal::init_model(mcfg, tcfg.seed);
  }();

  xmodal::TrainResult result = xmodal::train(model, corpus, regime, tcfg);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  xmodal::save_checkpoint(model, (out / "checkpoint.bin").string());
  if (regime == xmodal::Regime::TextOnly_MLM) {
    xmodal::save_checkpoint(model, (out / "text_checkpoint.bin").string(), true);
  }
  xmodal::write_loss_log(result.log, (out / "loss_log.csv").string());

  ordered_json config;
  config["regime"] = regime_name;
  config["model"] = xmodal::to_json(mcfg);
  config["train"] = train_config_to_json(tcfg);
  ordered_json inputs;
  inputs["corpus"] = corpus_path;
  if (model_config_path) inputs["model_config"] = *model_config_path;
  if (train_config_path) inputs["train_config"] = *train_config_path;
  if (init_from) inputs["init_from"] = *init_from;
  std::vector<std::string> outputs = {"checkpoint.bin", "loss_log.csv"};
  if (regime == xmodal::Regime::TextOnly_MLM) {
    outputs.insert(outputs.begin() + 1, "text_checkpoint.bin");
  }
  write_run_manifest(out, "train", config, inputs, outputs);

  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << "trained " << regime_name << " for " << result.log.size()
              << " steps; final " << last.phase
              << " loss: " << xmodal::fmt_g17(last.total) << " bits\n";
  }
  std::cout << "wrote " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

void print_aggregate_table(const std::vector<xmodal::AggregateRecord>& aggs) {
  std::printf("%-6s %-8s %8s %12s %12s %10s %10s\n", "diag", "setup", "tau",
              "mean_bits", "rel_change%", "t", "p");
  for (const auto& a : aggs) {
    char tau_buf[16];
    if (a.tau < 0) {
      std::snprintf(tau_buf, sizeof(tau_buf), "-");
    } else {
      std::snprintf(tau_buf, sizeof(tau_buf), "%.2f", a.tau);
    }
    std::printf("%-6s %-8s %8s %12.4f %12.2f %10.3f %10.4f\n",
                a.diagnostic.c_str(), a.setup.c_str(), tau_buf, a.mean_bits,
                a.rel_change_pct, a.t_vs_none, a.p_vs_none);
  }
}

int run_diagnose(const std::string& checkpoint_path,
                 const std::string& corpus_path, const std::string& out_dir,
                 const std::string& diagnostics_arg,
                 const std::string& setups_arg, const std::string& target_arg,
                 double tau, const std::string& measure_arg,
                 const std::string& all_text_arg, bool label_match,
                 int threads) {
  xmodal::MultimodalModel model = xmodal::load_checkpoint(checkpoint_path);
  xmodal::Corpus corpus = xmodal::load_corpus(corpus_path);
  if (label_match) corpus = xmodal::label_match_subset(corpus);
  xmodal::check_corpus_compat(model.cfg, corpus);

  std::vector<std::string> diagnostics = split_list(diagnostics_arg);
  if (diagnostics.empty()) {
    throw std::invalid_argument("--diagnostics must name at least one of v4l,l4v");
  }
  for (const auto& d : diagnostics) {
    if (d != "v4l" && d != "l4v") {
      throw std::invalid_argument("unknown diagnostic \"" + d + "\"");
    }
  }
  std::vector<std::string> setups = split_list(setups_arg);
  auto wants = [&](const std::string& name) {
    return setups.empty() ||
           std::find(setups.begin(), setups.end(), name) != setups.end();
  };

  xmodal::OverlapPolicy object_policy{
      xmodal::overlap_measure_from_string(measure_arg), tau};
  xmodal::require_valid(object_policy);

  xmodal::L4VTargetMode target;
  if (target_arg == "silver") {
    target = xmodal::L4VTargetMode::SilverKl;
  } else if (target_arg == "gold") {
    target = xmodal::L4VTargetMode::GoldXe;
  } else {
    throw std::invalid_argument("--target must be silver or gold, got \"" +
                                target_arg + "\"");
  }
  xmodal::AllTextMode all_text;
  if (all_text_arg == "mask_each") {
    all_text = xmodal::AllTextMode::MaskEach;
  } else if (all_text_arg == "single_mask") {
    all_text = xmodal::AllTextMode::SingleMask;
  } else {
    throw std::invalid_argument("--all-text must be mask_each or single_mask, got \"" +
                                all_text_arg + "\"");
  }

  xmodal::DiagnosticResult combined;
  if (std::find(diagnostics.begin(), diagnostics.end(), "v4l") !=
      diagnostics.end()) {
    std::vector<xmodal::V4LSetup> v4l_setups;
    if (wants("none")) v4l_setups.push_back({xmodal::V4LMode::None, object_policy});
    if (wants("object")) v4l_setups.push_back({xmodal::V4LMode::Object, object_policy});
    if (wants("all")) v4l_setups.push_back({xmodal::V4LMode::All, object_policy});
    if (!v4l_setups.empty()) {
      xmodal::DiagnosticResult r =
          xmodal::evaluate_v4l(model, corpus, v4l_setups, threads);
      combined.records.insert(combined.records.end(), r.records.begin(),
                              r.records.end());
    }
  }
  if (std::find(diagnostics.begin(), diagnostics.end(), "l4v") !=
      diagnostics.end()) {
    std::vector<xmodal::L4VSetup> l4v_setups;
    if (wants("none")) l4v_setups.push_back({xmodal::L4VMode::None, all_text});
    if (wants("phrase")) l4v_setups.push_back({xmodal::L4VMode::Phrase, all_text});
    if (wants("all")) l4v_setups.push_back({xmodal::L4VMode::All, all_text});
    if (!l4v_setups.empty()) {
      xmodal::DiagnosticResult r =
          xmodal::evaluate_l4v(model, corpus, l4v_setups, target, threads);
      combined.records.insert(combined.records.end(), r.records.begin(),
                              r.records.end());
    }
  }

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  xmodal::write_result_csv(combined, (out / "results.csv").string());
  std::vector<std::string> outputs = {"results.csv"};

  bool have_none = false;
  for (const auto& rec : combined.records) {
    if (rec.setup == "none") {
      have_none = true;
      break;
    }
  }
  if (have_none) {
    std::vector<xmodal::AggregateRecord> aggs = xmodal::aggregate(combined);
    xmodal::write_aggregate_csv(aggs, (out / "aggregate.csv").string());
    xmodal::write_aggregate_svg(aggs, (out / "aggregate.svg").string());
    outputs.push_back("aggregate.csv");
    outputs.push_back("aggregate.svg");
    print_aggregate_table(aggs);
  } else {
    std::cerr << "note: no intact baseline in the requested setups; "
                 "skipping aggregate outputs\n";
  }

  ordered_json config;
  config["diagnostics"] = diagnostics;
  config["setups"] = setups.empty() ? ordered_json::array({"none", "object",
                                                           "phrase", "all"})
                                    : ordered_json(setups);
  config["target"] = target_arg;
  config["tau"] = tau;
  config["measure"] = measure_arg;
  config["all_text"] = all_text_arg;
  config["label_match"] = label_match;
  config["threads"] = threads;
  ordered_json inputs;
  inputs["checkpoint"] = checkpoint_path;
  inputs["corpus"] = corpus_path;
  write_run_manifest(out, "diagnose", config, inputs, outputs);
  std::cout << "wrote " << (out / "results.csv").string() << " ("
            << combined.records.size() << " rows)\n";
  return 0;
}

int run_sweep(const std::string& checkpoint_path, const std::string& corpus_path,
              const std::string& out_dir, const std::string& taus_arg,
              const std::string& measure_arg, bool label_match, int threads) {
  xmodal::MultimodalModel model = xmodal::load_checkpoint(checkpoint_path);
  xmodal::Corpus corpus = xmodal::load_corpus(corpus_path);
  if (label_match) corpus = xmodal::label_match_subset(corpus);
  xmodal::check_corpus_compat(model.cfg, corpus);

  std::vector<double> taus;
  for (const auto& part : split_list(taus_arg)) {
    try {
      std::size_t pos = 0;
      double v = std::stod(part, &pos);
      if (pos != part.size()) throw std::invalid_argument(part);
      taus.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("--taus: cannot parse \"" + part +
                                  "\" as a number");
    }
  }

  xmodal::OverlapMeasure measure = xmodal::overlap_measure_from_string(measure_arg);
  xmodal::SweepResult sweep =
      xmodal::threshold_sweep(model, corpus, taus, measure, threads);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  xmodal::write_sweep_csv(sweep, (out / "sweep.csv").string());
  xmodal::write_sweep_svg(sweep, (out / "sweep.svg").string());
  xmodal::write_result_csv(sweep.records, (out / "results.csv").string());

  ordered_json config;
  config["taus"] = taus;
  config["measure"] = measure_arg;
  config["label_match"] = label_match;
  config["threads"] = threads;
  ordered_json inputs;
  inputs["checkpoint"] = checkpoint_path;
  inputs["corpus"] = corpus_path;
  write_run_manifest(out, "sweep", config, inputs,
                     {"sweep.csv", "sweep.svg", "results.csv"});

  std::printf("%8s %12s\n", "tau", "mean_bits");
  std::printf("%8s %12.4f  (intact)\n", "-", sweep.none_mean);
  for (const auto& pt : sweep.object_means) {
    std::printf("%8.2f %12.4f\n", pt.tau, pt.mean_bits);
  }
  std::printf("%8s %12.4f  (all ablated)\n", "-", sweep.all_mean);
  return 0;
}

int run_stats(const std::string& corpus_path, const std::string& out_dir,
              bool agreement, const std::string& ks_arg, bool confusion,
              bool label_match) {
  xmodal::Corpus corpus = xmodal::load_corpus(corpus_path);
  const std::size_t total_examples = corpus.examples.size();
  if (label_match) corpus = xmodal::label_match_subset(corpus);

  xmodal::CorpusStats stats = xmodal::corpus_stats(corpus);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  ordered_json sj;
  sj["num_images"] = stats.num_images;
  sj["num_examples"] = corpus.examples.size();
  sj["sentences_per_image"] = stats.sentences_per_image;
  sj["mean_phrases_per_sentence"] = stats.mean_phrases_per_sentence;
  sj["mean_objects_per_phrase"] = stats.mean_objects_per_phrase;
  sj["fraction_single_object_phrases"] = stats.fraction_single_object_phrases;
  sj["num_datapoints"] = stats.num_datapoints;
  if (label_match) {
    sj["label_match_kept_examples"] = corpus.examples.size();
    sj["label_match_total_examples"] = total_examples;
  }
  {
    std::ofstream js(out / "stats.json", std::ios::binary);
    js << sj.dump(2) << "\n";
  }
  std::vector<std::string> outputs = {"stats.json"};

  if (agreement) {
    std::vector<int> ks;
    for (const auto& part : split_list(ks_arg)) {
      ks.push_back(std::stoi(part));
    }
    std::vector<double> vals = xmodal::agreement_stats(corpus, ks);
    xmodal::write_agreement_csv(ks, vals, (out / "agreement.csv").string());
    outputs.push_back("agreement.csv");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::printf("silver top-%d contains gold: %.4f\n", ks[i], vals[i]);
    }
  }
  if (confusion) {
    xmodal::ConfusionMatrix cm = xmodal::confusion_matrix(corpus);
    xmodal::write_confusion_csv(cm, (out / "confusion.csv").string());
    xmodal::write_confusion_svg(cm, (out / "confusion.svg").string());
    outputs.push_back("confusion.csv");
    outputs.push_back("confusion.svg");
  }

  ordered_json config;
  config["agreement"] = agreement;
  if (agreement) config["ks"] = split_list(ks_arg);
  config["confusion"] = confusion;
  config["label_match"] = label_match;
  ordered_json inputs;
  inputs["corpus"] = corpus_path;
  write_run_manifest(out, "stats", config, inputs, outputs);

  std::cout << sj.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ablation diagnostics for a small multimodal transformer"};
  app.set_version_flag("--version", xmodal::kVersionString);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic grounded corpus");
  std::string synth_config, synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--config", synth_config, "synth config JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  auto* synth_seed_opt =
      synth->add_option("--seed", synth_seed, "override the config seed");

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string train_corpus, train_out, train_regime = "rnd-vl";
  std::string train_model_config, train_train_config, train_init_from;
  std::string train_objective;
  std::uint64_t train_seed = 0;
  int train_epochs = 0, train_vision_epochs = 0, train_batch = 0;
  double train_lr = 0.0;
  train->add_option("--corpus", train_corpus, "corpus JSONL")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--regime", train_regime,
                    "textinit-vl | rnd-vl | rnd-v-then-vl | "
                    "textinit-v-then-vl | textonly-mlm");
  auto* train_mc = train->add_option("--model-config", train_model_config,
                                     "model config JSON");
  auto* train_tc = train->add_option("--train-config", train_train_config,
                                     "train config JSON");
  auto* train_if = train->add_option("--init-from", train_init_from,
                                     "checkpoint to initialize matching tensors from");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "training seed");
  auto* train_ep = train->add_option("--epochs", train_epochs, "joint epochs");
  auto* train_vep = train->add_option("--vision-epochs", train_vision_epochs,
                                      "vision-only epochs before the joint phase");
  auto* train_bs = train->add_option("--batch-size", train_batch, "batch size");
  auto* train_lr_opt = train->add_option("--lr", train_lr, "learning rate");
  auto* train_obj = train->add_option("--objective", train_objective,
                                      "mrc_kl | mrc_xe");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "run input ablation diagnostics");
  std::string diag_ckpt, diag_corpus, diag_out;
  std::string diag_diagnostics = "v4l,l4v";
  std::string diag_setups;
  std::string diag_target = "silver";
  std::string diag_measure = "iot";
  std::string diag_all_text = "mask_each";
  double diag_tau = 0.5;
  bool diag_label_match = false;
  int diag_threads = 1;
  diag->add_option("--checkpoint", diag_ckpt, "model checkpoint")->required();
  diag->add_option("--corpus", diag_corpus, "corpus JSONL")->required();
  diag->add_option("--out", diag_out, "output directory")->required();
  diag->add_option("--diagnostics", diag_diagnostics,
                   "comma list from {v4l,l4v}");
  diag->add_option("--setups", diag_setups,
                   "comma list from {none,object,phrase,all}; default all");
  diag->add_option("--target", diag_target, "region target: silver | gold");
  diag->add_option("--tau", diag_tau, "object ablation overlap threshold");
  diag->add_option("--measure", diag_measure,
                   "object ablation overlap measure: iot | iou");
  diag->add_option("--all-text", diag_all_text,
                   "all-text ablation style: mask_each | single_mask");
  diag->add_flag("--label-match", diag_label_match,
                 "restrict to phrases whose head noun matches a class label");
  diag->add_option("--threads", diag_threads, "worker threads");

  // sweep
  auto* sweep = app.add_subcommand("sweep",
                                   "sweep the object ablation threshold");
  std::string sweep_ckpt, sweep_corpus, sweep_out, sweep_taus;
  std::string sweep_measure = "iot";
  bool sweep_label_match = false;
  int sweep_threads = 1;
  sweep->add_option("--checkpoint", sweep_ckpt, "model checkpoint")->required();
  sweep->add_option("--corpus", sweep_corpus, "corpus JSONL")->required();
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--taus", sweep_taus, "comma list of thresholds")->required();
  sweep->add_option("--measure", sweep_measure, "iot | iou");
  sweep->add_flag("--label-match", sweep_label_match,
                  "restrict to phrases whose head noun matches a class label");
  sweep->add_option("--threads", sweep_threads, "worker threads");

  // stats
  auto* stats = app.add_subcommand("stats", "corpus statistics and label quality");
  std::string stats_corpus, stats_out, stats_ks = "1,5";
  bool stats_agreement = false, stats_confusion = false, stats_label_match = false;
  stats->add_option("--corpus", stats_corpus, "corpus JSONL")->required();
  stats->add_option("--out", stats_out, "output directory")->required();
  stats->add_flag("--agreement", stats_agreement,
                  "silver/gold top-k agreement over datapoints");
  stats->add_option("--ks", stats_ks, "comma list of k for --agreement");
  stats->add_flag("--confusion", stats_confusion,
                  "category confusion matrix of silver argmax vs gold");
  stats->add_flag("--label-match", stats_label_match,
                  "restrict to phrases whose head noun matches a class label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help / --version
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      std::optional<std::uint64_t> seed;
      if (synth_seed_opt->count() > 0) seed = synth_seed;
      return run_synth(synth_config, synth_out, seed);
    }
    if (train->parsed()) {
      auto opt_str = [](CLI::Option* o, const std::string& v) {
        return o->count() > 0 ? std::optional<std::string>(v) : std::nullopt;
      };
      return run_train(
          train_corpus, train_out, train_regime,
          opt_str(train_mc, train_model_config),
          opt_str(train_tc, train_train_config),
          opt_str(train_if, train_init_from),
          train_seed_opt->count() > 0 ? std::optional<std::uint64_t>(train_seed)
                                      : std::nullopt,
          train_ep->count() > 0 ? std::optional<int>(train_epochs) : std::nullopt,
          train_vep->count() > 0 ? std::optional<int>(train_vision_epochs)
                                 : std::nullopt,
          train_bs->count() > 0 ? std::optional<int>(train_batch) : std::nullopt,
          train_lr_opt->count() > 0 ? std::optional<double>(train_lr)
                                    : std::nullopt,
          opt_str(train_obj, train_objective));
    }
    if (diag->parsed()) {
      return run_diagnose(diag_ckpt, diag_corpus, diag_out, diag_diagnostics,
                          diag_setups, diag_target, diag_tau, diag_measure,
                          diag_all_text, diag_label_match, diag_threads);
    }
    if (sweep->parsed()) {
      return run_sweep(sweep_ckpt, sweep_corpus, sweep_out, sweep_taus,
                       sweep_measure, sweep_label_match, sweep_threads);
    }
    if (stats->parsed()) {
      return run_stats(stats_corpus, stats_out, stats_agreement, stats_ks,
                       stats_confusion, stats_label_match);
    }
    std::cerr << "error: no subcommand given\n";
    return 2;
  } catch (const xmodal::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const xmodal::CompatibilityError& e) {
    std::cerr << "incompatible: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const xmodal::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
