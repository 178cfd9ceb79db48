// cpt: command-line driver for prompt-pool generation, encoding, training,
// evaluation, fusion and continual extension.
//
// Every command writes a run manifest next to its output. `cpt replay
// <manifest>` re-runs the recorded argv from the recorded working directory
// and fails unless every output digest matches.

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cpt/binary_io.hpp"
#include "cpt/datagen.hpp"
#include "cpt/embedding_io.hpp"
#include "cpt/error.hpp"
#include "cpt/eval.hpp"
#include "cpt/label_space.hpp"
#include "cpt/objectives.hpp"
#include "cpt/prompt_pool.hpp"
#include "cpt/trainer.hpp"
#include "cpt/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cpt;

namespace {

// --- run manifests ----------------------------------------------------------------

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::object();

  void input(const fs::path& p) { inputs[p.string()] = io::file_digest(p); }

  void output_file(const fs::path& p) { outputs[p.string()] = io::file_digest(p); }

  void output_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) output_file(f);
  }

  void write(const fs::path& path) const {
    json j;
    j["tool"] = std::string("cpt ") + kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["cwd"] = fs::current_path().string();
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    io::write_text_file(path, j.dump(2) + "\n");
  }
};

fs::path file_manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// --- small parsers ------------------------------------------------------------------

json load_json_file(const fs::path& path) {
  try {
    return json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    fail("{}: {}", path.string(), e.what());
  }
}

/// "name=value" pairs.
std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) fail("{} expects name=value, got '{}'", flag, text);
  return {text.substr(0, eq), text.substr(eq + 1)};
}

template <typename T>
T parse_number(const std::string& text, const char* flag) {
  try {
    std::size_t used = 0;
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else {
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    fail("{}: '{}' is not a valid number", flag, text);
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    out.push_back(text.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) fail("{} not found: {}", what, p.string());
}

LabelSpace load_labels(const fs::path& p, Manifest& m) {
  require_file(p, "label manifest");
  m.input(p);
  return LabelSpace::load_manifest(p);
}

/// Labels present in `target` but not in `current`, per modality, in target
/// order. The old labels of each block must form a prefix of the new block.
std::vector<LabelAddition> additions_between(const LabelSpace& current, const LabelSpace& target) {
  std::vector<LabelAddition> out;
  for (auto m : current.modalities()) {
    if (!target.find_modality(current.modality_name(m))) {
      fail("new label manifest drops modality '{}'", current.modality_name(m));
    }
  }
  for (auto t : target.modalities()) {
    const std::string& name = target.modality_name(t);
    const auto& wanted = target.labels_of(t);
    LabelAddition add{name, {}};
    if (auto m = current.find_modality(name)) {
      const auto& have = current.labels_of(*m);
      if (have.size() > wanted.size() || !std::equal(have.begin(), have.end(), wanted.begin())) {
        fail("labels of '{}' in the new manifest do not extend the current ones", name);
      }
      add.labels.assign(wanted.begin() + static_cast<std::ptrdiff_t>(have.size()), wanted.end());
      if (add.labels.empty()) continue;
    } else {
      add.labels = wanted;
    }
    out.push_back(std::move(add));
  }
  return out;
}

// --- gen --------------------------------------------------------------------------

struct GenArgs {
  std::string labels;
  std::string out;
  std::string config;
  std::vector<std::string> per_modality;
  std::vector<std::string> k_max;
  std::uint64_t seed = 0;
  bool single_label = false;
};

void cmd_gen(const GenArgs& a, const CLI::App& sub, Manifest& man) {
  const LabelSpace space = load_labels(a.labels, man);
  GenConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    man.input(a.config);
    const json j = load_json_file(a.config);
    try {
      if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
      if (j.contains("per_modality_count")) {
        for (const auto& [name, v] : j["per_modality_count"].items()) cfg.per_modality_count[space.modality(name)] = v.get<std::size_t>();
      }
      if (j.contains("k_max")) {
        for (const auto& [name, v] : j["k_max"].items()) cfg.k_max[space.modality(name)] = v.get<int>();
      }
      if (j.contains("phrase_bank")) cfg.phrase_bank = j["phrase_bank"].get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail("{}: {}", a.config, e.what());
    }
  }
  if (sub.count("--seed")) cfg.seed = a.seed;
  for (const auto& pm : a.per_modality) {
    const auto [name, count] = split_assignment(pm, "--per-modality");
    cfg.per_modality_count[space.modality(name)] = parse_number<std::size_t>(count, "--per-modality");
  }
  for (const auto& km : a.k_max) {
    const auto [name, k] = split_assignment(km, "--k-max");
    cfg.k_max[space.modality(name)] = static_cast<int>(parse_number<std::uint64_t>(k, "--k-max"));
  }
  if (a.single_label) {
    for (auto m : space.modalities()) cfg.k_max[m] = 1;
  }

  const auto corpus = generate_corpus(space, cfg);
  write_corpus(corpus, space, a.out);

  json counts = json::object();
  for (const auto& [m, n] : cfg.per_modality_count) counts[space.modality_name(m)] = n;
  json kmax = json::object();
  for (auto m : space.modalities()) kmax[space.modality_name(m)] = cfg.k_max_for(space, m);
  man.config = {{"per_modality_count", counts}, {"k_max", kmax}, {"phrase_bank", cfg.phrase_bank}};
  man.seeds["caption"] = cfg.seed;
  man.output_file(a.out);
  man.write(file_manifest_path(a.out));
  std::cout << fmt::format("wrote {} captions to {}\n", corpus.size(), a.out);
}

// --- encode -----------------------------------------------------------------------

struct EncodeArgs {
  std::string labels;
  std::string corpus;
  std::string out;
  std::string config;
  std::string anchors;
  std::vector<std::string> noise;
  std::uint64_t seed = 0;
  std::size_t dim = 64;
  double delta_sigma = 0.05;
  bool test = false;
  bool class_prompts = false;
};

void cmd_encode(const EncodeArgs& a, const CLI::App& sub, Manifest& man) {
  const LabelSpace space = load_labels(a.labels, man);
  SyntheticEncoderConfig cfg;
  cfg.noise_sigma = SyntheticEncoderConfig::uniform_noise(space, 0.1);
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    man.input(a.config);
    const json j = load_json_file(a.config);
    try {
      if (j.contains("anchor_seed")) cfg.anchor_seed = j["anchor_seed"].get<std::uint64_t>();
      if (j.contains("dim")) cfg.dim = j["dim"].get<std::size_t>();
      if (j.contains("delta_sigma")) cfg.delta_sigma = j["delta_sigma"].get<double>();
      if (j.contains("noise_sigma")) {
        for (const auto& [name, v] : j["noise_sigma"].items()) cfg.noise_sigma[space.modality(name)] = v.get<double>();
      }
    } catch (const json::exception& e) {
      fail("{}: {}", a.config, e.what());
    }
  }
  if (sub.count("--seed")) cfg.anchor_seed = a.seed;
  if (sub.count("--dim")) cfg.dim = a.dim;
  if (sub.count("--delta-sigma")) cfg.delta_sigma = a.delta_sigma;
  for (const auto& n : a.noise) {
    if (n.find('=') == std::string::npos) {
      cfg.noise_sigma = SyntheticEncoderConfig::uniform_noise(space, parse_number<double>(n, "--noise"));
    } else {
      const auto [name, sigma] = split_assignment(n, "--noise");
      cfg.noise_sigma[space.modality(name)] = parse_number<double>(sigma, "--noise");
    }
  }

  // The anchors file pins the shared geometry across encode invocations.
  if (!a.anchors.empty()) {
    if (fs::exists(a.anchors)) {
      man.input(a.anchors);
      const json j = load_json_file(a.anchors);
      const auto seed = j.at("anchor_seed").get<std::uint64_t>();
      const auto dim = j.at("dim").get<std::size_t>();
      const auto delta = j.at("delta_sigma").get<double>();
      if (sub.count("--dim") && a.dim != dim) fail("--dim {} does not match d={} in anchors file {}", a.dim, dim, a.anchors);
      if (sub.count("--seed") && a.seed != seed) fail("--seed {} does not match anchor seed {} in {}", a.seed, seed, a.anchors);
      if (sub.count("--delta-sigma") && a.delta_sigma != delta) fail("--delta-sigma does not match {}", a.anchors);
      cfg.anchor_seed = seed;
      cfg.dim = dim;
      cfg.delta_sigma = delta;
    } else {
      json j{{"anchor_seed", cfg.anchor_seed}, {"dim", cfg.dim}, {"delta_sigma", cfg.delta_sigma}};
      io::write_text_file(a.anchors, j.dump(2) + "\n");
    }
  }

  const Anchors anchors = make_anchors(space, cfg);
  std::vector<EmbeddingRecord> records;
  if (a.class_prompts) {
    if (!a.corpus.empty()) fail("--class-prompts takes no --corpus");
    for (auto m : space.modalities()) {
      const MatrixF p = encode_class_prompts(space, m, anchors, cfg);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        records.push_back({r, m, std::vector<float>(p.row(r).begin(), p.row(r).end())});
      }
    }
  } else {
    if (a.corpus.empty()) fail("encode needs --corpus (or --class-prompts)");
    require_file(a.corpus, "corpus");
    man.input(a.corpus);
    const auto corpus = read_corpus(a.corpus, space);
    for (const auto& rec : corpus) {
      records.push_back(a.test ? encode_test_item(space, rec.positives(), rec.modality, rec.id, anchors, cfg)
                               : encode_caption(rec, anchors, cfg));
    }
  }
  write_embeddings(records, a.out, cfg.dim);

  json sigma = json::object();
  for (const auto& [m, s] : cfg.noise_sigma) sigma[space.modality_name(m)] = s;
  man.config = {{"dim", cfg.dim},
                {"delta_sigma", cfg.delta_sigma},
                {"noise_sigma", sigma},
                {"mode", a.class_prompts ? "class-prompts" : a.test ? "test" : "caption"}};
  man.seeds["anchor"] = cfg.anchor_seed;
  man.output_file(a.out);
  man.write(file_manifest_path(a.out));
  std::cout << fmt::format("wrote {} embeddings (d={}) to {}\n", records.size(), cfg.dim, a.out);
}

// --- train ------------------------------------------------------------------------

struct TrainArgs {
  std::string labels;
  std::string corpus;
  std::string embeddings;
  std::string out;
  std::string config;
  std::string resume;
  std::string val_truth;
  std::string val_embeddings;
  std::string init_from;
  std::uint64_t steps = 0;
  std::size_t batch_size = 0;
  double lr = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  double margin = 0;
  double tau = 0;
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 0;
  std::uint64_t log_every = 100;
  std::string weak;
  std::string direction;
  std::string similarity;
  std::string optimizer;
  std::vector<std::string> train_modalities;
  bool freeze_old = false;
};

MatrixF class_prompt_matrix(const std::vector<EmbeddingRecord>& records, const LabelSpace& space, ModalityId m,
                            std::size_t dim, const std::string& origin) {
  MatrixF out(space.size(), dim, 0.0f);
  std::vector<std::uint8_t> seen(space.size(), 0);
  for (const auto& r : records) {
    if (r.modality != m) continue;
    if (r.ref_id >= space.size()) fail("{}: class prompt id {} outside the label space", origin, r.ref_id);
    std::copy(r.vector.begin(), r.vector.end(), out.row(r.ref_id).begin());
    seen[r.ref_id] = 1;
  }
  for (std::size_t c = 0; c < space.size(); ++c) {
    if (!seen[c]) fail("{}: no class prompt for label {} of modality '{}'", origin, c, space.modality_name(m));
  }
  return out;
}

void cmd_train(const TrainArgs& a, const CLI::App& sub, Manifest& man) {
  const LabelSpace space = load_labels(a.labels, man);
  require_file(a.corpus, "corpus");
  require_file(a.embeddings, "embedding file");
  man.input(a.corpus);
  man.input(a.embeddings);
  const auto corpus = read_corpus(a.corpus, space);
  std::size_t dim = 0;
  const auto embeddings = read_embeddings(a.embeddings, &dim);
  const TrainingSet data = build_training_set(space, corpus, embeddings);

  std::optional<Checkpoint> resumed;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    require_file(fs::path(a.resume) / "run.json", "checkpoint");
    man.input(fs::path(a.resume) / "run.json");
    resumed = load_checkpoint(a.resume);
    if (resumed->manifest.contains("config")) update_from_json(cfg, resumed->manifest["config"], resumed->space);
  }
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    man.input(a.config);
    update_from_json(cfg, nlohmann::json::parse(io::read_text_file(a.config)), space);
  }
  // Names are resolved against the training label space.
  if (resumed && cfg.weak.kind == WeakSelection::Kind::kFixed) {
    cfg.weak.fixed = space.modality(resumed->space.modality_name(cfg.weak.fixed));
  }
  json flags = json::object();
  if (sub.count("--steps")) flags["steps"] = a.steps;
  if (sub.count("--batch-size")) flags["batch_size"] = a.batch_size;
  if (sub.count("--lr")) flags["lr"] = a.lr;
  if (sub.count("--lambda1")) flags["lambda1"] = a.lambda1;
  if (sub.count("--lambda2")) flags["lambda2"] = a.lambda2;
  if (sub.count("--margin")) flags["margin"] = a.margin;
  if (sub.count("--tau")) flags["tau"] = a.tau;
  if (sub.count("--seed")) flags["seed"] = a.seed;
  if (sub.count("--eval-every")) flags["eval_every"] = a.eval_every;
  if (sub.count("--weak")) flags["weak"] = a.weak;
  if (sub.count("--direction")) flags["direction"] = a.direction;
  if (sub.count("--similarity")) flags["similarity"] = a.similarity;
  if (sub.count("--optimizer")) flags["optimizer"] = a.optimizer;
  if (sub.count("--train-modalities")) flags["train_modalities"] = a.train_modalities;
  update_from_json(cfg, nlohmann::json::parse(flags.dump()), space);
  cfg.validate(space);

  PoolInitConfig init;
  init.seed = cfg.seed;
  TrainState state;
  if (resumed) {
    state = std::move(resumed->state);
    if (!(resumed->space == space)) {
      LabelSpace grown = resumed->space;
      continual_extend(state, grown, additions_between(resumed->space, space),
                       a.freeze_old ? ExtendMode::kFreezeOld : ExtendMode::kContinue, init);
      if (!(grown == space)) fail("resumed label space cannot be extended to {}", a.labels);
    } else if (a.freeze_old) {
      fail("--freeze-old needs a label manifest that extends the resumed one");
    }
    if (!state.pools.empty() && state.pools.front().dim() != dim) {
      fail("checkpoint pools have d={} but embeddings have d={}", state.pools.front().dim(), dim);
    }
  } else {
    if (a.freeze_old) fail("--freeze-old only applies with --resume");
    state = init_state(space, init, dim);
    if (!a.init_from.empty()) {
      require_file(a.init_from, "class prompt file");
      man.input(a.init_from);
      std::size_t prompt_dim = 0;
      const auto prompts = read_embeddings(a.init_from, &prompt_dim);
      if (prompt_dim != dim) fail("{} has d={} but embeddings have d={}", a.init_from, prompt_dim, dim);
      for (auto m : space.modalities()) {
        state.pools[m.value] = init_pool_from_embeddings(space, m, class_prompt_matrix(prompts, space, m, dim, a.init_from));
      }
    }
  }

  std::optional<EvalSet> val;
  if (!a.val_truth.empty() || !a.val_embeddings.empty()) {
    if (a.val_truth.empty() || a.val_embeddings.empty()) fail("--val-truth and --val-embeddings go together");
    require_file(a.val_truth, "validation truth");
    require_file(a.val_embeddings, "validation embeddings");
    man.input(a.val_truth);
    man.input(a.val_embeddings);
    val = build_eval_set(space, read_corpus(a.val_truth, space), read_embeddings(a.val_embeddings));
  }

  RunOptions opts;
  opts.validation = val ? &*val : nullptr;
  opts.checkpoint_dir = fs::path(a.out);
  opts.on_step = [&](const StepMetrics& m) {
    if (a.log_every == 0 || (m.step + 1) % a.log_every != 0) return;
    std::cout << fmt::format("step {} L_total {:.6f} L_intra {:.6f} L_inter {:.6f}\n", m.step + 1, m.l_total, m.l_intra,
                             m.l_inter);
  };
  fs::create_directories(a.out);
  run(state, space, data, cfg, opts);

  man.config = to_json(cfg, space);
  man.seeds["init"] = init.seed;
  man.seeds["shuffle"] = cfg.seed;
  man.output_dir(a.out);
  man.write(fs::path(a.out) / "manifest.json");
  std::cout << fmt::format("trained to step {}; checkpoint in {}\n", state.step, a.out);
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string labels;
  std::string baseline;
  std::string items;
  std::string truth;
  std::string out;
  std::string predictions_out;
  std::vector<std::string> modalities;
  double softmax_tau = 0.07;
  bool unrestricted = false;
};

json report_json(const EvalReport& r, const LabelSpace& space) {
  json per = json::object();
  for (const auto& c : r.per_class_ap) per[space.label_name(c.label)] = c.ap;
  json excluded = json::array();
  for (auto c : r.excluded_classes) excluded.push_back(space.label_name(c));
  return {{"count", r.count}, {"top1", r.top1}, {"top5", r.top5}, {"map", r.map}, {"per_class_ap", per}, {"excluded", excluded}};
}

void cmd_eval(const EvalArgs& a, Manifest& man) {
  LabelSpace space;
  std::vector<PromptPool> pools;
  if (!a.checkpoint.empty()) {
    require_file(fs::path(a.checkpoint) / "run.json", "checkpoint");
    man.input(fs::path(a.checkpoint) / "run.json");
    Checkpoint ck = load_checkpoint(a.checkpoint);
    space = std::move(ck.space);
    pools = std::move(ck.state.pools);
    if (!a.labels.empty() && !(load_labels(a.labels, man) == space)) fail("{} does not match the checkpoint labels", a.labels);
  } else {
    if (a.labels.empty() || a.baseline.empty()) fail("eval needs --checkpoint, or --labels with --baseline");
    space = load_labels(a.labels, man);
  }
  require_file(a.items, "item embeddings");
  require_file(a.truth, "truth file");
  man.input(a.items);
  man.input(a.truth);
  std::size_t dim = 0;
  const EvalSet set = build_eval_set(space, read_corpus(a.truth, space), read_embeddings(a.items, &dim));

  if (!a.baseline.empty()) {
    require_file(a.baseline, "class prompt file");
    man.input(a.baseline);
    std::size_t prompt_dim = 0;
    const auto prompts = read_embeddings(a.baseline, &prompt_dim);
    if (prompt_dim != dim) fail("{} has d={} but items have d={}", a.baseline, prompt_dim, dim);
    pools.clear();
    for (auto m : space.modalities()) {
      pools.push_back(init_pool_from_embeddings(space, m, class_prompt_matrix(prompts, space, m, dim, a.baseline)));
    }
  }

  std::vector<ModalityId> wanted;
  for (const auto& name : a.modalities) wanted.push_back(space.modality(name));
  if (wanted.empty()) {
    for (auto m : space.modalities()) {
      if (!set.items[m.value].empty()) wanted.push_back(m);
    }
  }

  json report = json::object();
  std::vector<PredictionVector> all_preds;
  for (auto m : wanted) {
    const auto& items = set.items[m.value];
    if (items.empty()) fail("no test items for modality '{}'", space.modality_name(m));
    const auto preds = classify_all(items, pools[m.value], space, !a.unrestricted);
    report[space.modality_name(m)] = report_json(evaluate(preds, set.positives[m.value], space.size()), space);
    for (const auto& p : preds) all_preds.push_back(softmax(p, a.softmax_tau));
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::write_text_file(a.out, text);
    man.output_file(a.out);
  }
  if (!a.predictions_out.empty()) {
    io::write_text_file(a.predictions_out, predictions_to_jsonl(all_preds));
    man.output_file(a.predictions_out);
  }
  man.config = {{"restrict_to_block", !a.unrestricted}, {"softmax_tau", a.softmax_tau}, {"baseline", !a.baseline.empty()}};
  if (!a.out.empty()) man.write(file_manifest_path(a.out));
  else if (!a.predictions_out.empty()) man.write(file_manifest_path(a.predictions_out));
}

// --- fuse -------------------------------------------------------------------------

struct FuseArgs {
  std::string labels;
  std::string modality;
  std::string supervised;
  std::string ours;
  std::string truth;
  std::string out;
  std::string fused_out;
};

std::vector<PredictionVector> load_predictions(const fs::path& p, const LabelSpace& space, ModalityId m, Manifest& man) {
  require_file(p, "prediction file");
  man.input(p);
  auto preds = predictions_from_jsonl(io::read_text_file(p), p.string());
  const Block b = space.block(m);
  for (auto& pr : preds) {
    pr.modality = m;
    if (pr.scores.size() == b.count && b.count != space.size()) {
      std::vector<double> full(space.size(), 0.0);
      std::copy(pr.scores.begin(), pr.scores.end(), full.begin() + static_cast<std::ptrdiff_t>(b.start));
      pr.scores = std::move(full);
    } else if (pr.scores.size() != space.size()) {
      fail("{}: item {} has {} scores; expected {} (block) or {} (all labels)", p.string(), pr.item_id, pr.scores.size(),
           b.count, space.size());
    }
    pr.scope = b;
  }
  std::sort(preds.begin(), preds.end(), [](const auto& x, const auto& y) { return x.item_id < y.item_id; });
  return preds;
}

void cmd_fuse(const FuseArgs& a, Manifest& man) {
  const LabelSpace space = load_labels(a.labels, man);
  const ModalityId m = space.modality(a.modality);
  const auto sup = load_predictions(a.supervised, space, m, man);
  const auto ours = load_predictions(a.ours, space, m, man);
  if (sup.size() != ours.size()) fail("prediction files hold {} and {} items", sup.size(), ours.size());

  std::vector<PredictionVector> fused;
  for (std::size_t i = 0; i < sup.size(); ++i) {
    if (sup[i].item_id != ours[i].item_id) fail("prediction files disagree on item ids ({} vs {})", sup[i].item_id, ours[i].item_id);
    fused.push_back(fuse(sup[i], ours[i]));
  }

  if (!a.fused_out.empty()) {
    io::write_text_file(a.fused_out, predictions_to_jsonl(fused));
    man.output_file(a.fused_out);
  }
  json report = json::object();
  if (!a.truth.empty()) {
    require_file(a.truth, "truth file");
    man.input(a.truth);
    std::map<std::uint64_t, std::vector<std::size_t>> truth;
    for (const auto& rec : read_corpus(a.truth, space)) truth[rec.id] = rec.positives();
    std::vector<std::vector<std::size_t>> positives;
    for (const auto& p : fused) {
      auto it = truth.find(p.item_id);
      if (it == truth.end()) fail("{}: no truth for item {}", a.truth, p.item_id);
      positives.push_back(it->second);
    }
    report[a.modality] = {{"fused", report_json(evaluate(fused, positives, space.size()), space)},
                          {"supervised", report_json(evaluate(sup, positives, space.size()), space)},
                          {"ours", report_json(evaluate(ours, positives, space.size()), space)}};
  } else {
    report["count"] = fused.size();
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::write_text_file(a.out, text);
    man.output_file(a.out);
  }
  const std::string anchor = !a.out.empty() ? a.out : a.fused_out;
  if (!anchor.empty()) man.write(file_manifest_path(anchor));
}

// --- extend -----------------------------------------------------------------------

struct ExtendArgs {
  std::string checkpoint;
  std::string out;
  std::string labels;
  std::vector<std::string> add;
  std::string mode = "continue";
  std::uint64_t seed = 0;
};

void cmd_extend(const ExtendArgs& a, const CLI::App& sub, Manifest& man) {
  require_file(fs::path(a.checkpoint) / "run.json", "checkpoint");
  man.input(fs::path(a.checkpoint) / "run.json");
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (a.mode != "continue" && a.mode != "freeze-old") fail("--mode must be 'continue' or 'freeze-old', got '{}'", a.mode);

  std::vector<LabelAddition> additions;
  if (!a.labels.empty()) additions = additions_between(ck.space, load_labels(a.labels, man));
  for (const auto& entry : a.add) {
    const auto [name, list] = split_assignment(entry, "--add");
    additions.push_back({name, split_list(list)});
  }
  if (additions.empty()) fail("extend needs --labels or --add");

  TrainConfig cfg;
  if (ck.manifest.contains("config")) update_from_json(cfg, ck.manifest["config"], ck.space);
  PoolInitConfig init;
  init.seed = sub.count("--seed") ? a.seed : cfg.seed;
  LabelSpace space = ck.space;
  continual_extend(ck.state, space, additions, a.mode == "freeze-old" ? ExtendMode::kFreezeOld : ExtendMode::kContinue,
                   init);
  if (cfg.weak.kind == WeakSelection::Kind::kFixed) cfg.weak.fixed = space.modality(ck.space.modality_name(cfg.weak.fixed));
  save_checkpoint(a.out, ck.state, space, cfg);

  man.config = {{"mode", a.mode}};
  man.seeds["init"] = init.seed;
  man.output_dir(a.out);
  man.write(fs::path(a.out) / "manifest.json");
  std::cout << fmt::format("extended to {} labels over {} modalities in {}\n", space.size(), space.modality_count(), a.out);
}

// --- check-grad -------------------------------------------------------------------

struct CheckGradArgs {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  double tolerance = 1e-4;
};

int cmd_check_grad(const CheckGradArgs& a) {
  Rng rng({0x67726164, a.seed});
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  bool ok = true;
  for (std::size_t inst = 0; inst < a.instances; ++inst) {
    LabelSpace space;
    const std::size_t n_mod = 2 + rng.below(2);
    for (std::size_t m = 0; m < n_mod; ++m) {
      const ModalityId id = space.register_modality(fmt::format("m{}", m));
      std::vector<std::string> labels;
      const std::size_t count = 1 + rng.below(4);
      for (std::size_t k = 0; k < count; ++k) labels.push_back(fmt::format("l{}", k));
      space.add_labels(id, labels);
    }
    const std::size_t d = 2 + rng.below(15);
    const std::size_t batch = 1 + rng.below(8);
    const SimilarityMode mode = inst % 2 == 0 ? SimilarityMode::kCosine : SimilarityMode::kDot;
    PoolParams pools;
    for (std::size_t m = 0; m < n_mod; ++m) {
      MatrixD p(space.size(), d);
      for (auto& x : p.flat()) x = 0.5 * rng.normal();
      pools.push_back(std::move(p));
    }
    std::vector<IntraBatch> batches;
    for (auto m : space.modalities()) {
      IntraBatch b;
      b.modality = m;
      const Block block = space.block(m);
      for (std::size_t k = 0; k < batch; ++k) {
        std::vector<double> h(d);
        for (auto& x : h) x = rng.normal();
        const double n = norm2(std::span<const double>(h));
        for (auto& x : h) x /= n;
        b.embeddings.push_row(h);
        b.positives.push_back({block.start + rng.below(block.count)});
      }
      batches.push_back(std::move(b));
    }
    InterConfig icfg;
    icfg.weak = ModalityId{0};
    for (std::size_t m = 1; m < n_mod; ++m) icfg.strong.push_back(ModalityId{static_cast<std::uint32_t>(m)});
    icfg.direction = Direction::kBi;
    icfg.tau = 0.5;

    const IntraResult intra = intra_loss(space, batches, pools, 0.2, mode);
    const InterResult inter = inter_loss(space, pools, icfg);
    const GradientBundle total = total_loss(intra, inter, 1.0, 1.0, {});
    FdOptions opt;
    opt.tolerance = a.tolerance;
    const FdReport report = finite_difference_check(
        [&](const PoolParams& p) {
          const IntraResult r = intra_loss(space, batches, p, 0.2, mode);
          return LossProbe{r.total + inter_loss(space, p, icfg).total, r.slacks};
        },
        pools, total.grads, opt);
    worst = std::max(worst, report.max_rel_error);
    checked += report.checked;
    excluded += report.excluded;
    ok = ok && report.passed(a.tolerance);
  }
  json out{{"instances", a.instances}, {"checked", checked}, {"excluded", excluded}, {"max_rel_error", worst},
           {"tolerance", a.tolerance}, {"passed", ok}};
  std::cout << out.dump(2) << "\n";
  return ok ? 0 : 1;
}

// --- dump-sims --------------------------------------------------------------------

struct DumpArgs {
  std::string checkpoint;
  std::string modality;
  std::string items;
  std::string out;
};

void cmd_dump_sims(const DumpArgs& a, Manifest& man) {
  require_file(fs::path(a.checkpoint) / "run.json", "checkpoint");
  man.input(fs::path(a.checkpoint) / "run.json");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ModalityId m = ck.space.modality(a.modality);
  const PromptPool& pool = ck.state.pools.at(m.value);
  MatrixD rows;
  std::vector<std::string> names;
  if (a.items.empty()) {
    rows = pool.params.cast<double>();
    for (std::size_t r = 0; r < pool.rows(); ++r) names.push_back(ck.space.label_name(r));
  } else {
    require_file(a.items, "item embeddings");
    man.input(a.items);
    for (const auto& rec : read_embeddings(a.items)) {
      if (rec.modality != m) continue;
      rows.push_row(std::vector<double>(rec.vector.begin(), rec.vector.end()));
      names.push_back(std::to_string(rec.ref_id));
    }
  }
  dump_similarity_matrices(rows, names, pool, ck.space, static_cast<std::int64_t>(ck.state.step), a.out);
  man.config = {{"modality", a.modality}, {"kind", a.items.empty() ? "prompt-prompt" : "item-prompt"}};
  man.output_file(a.out);
  man.write(file_manifest_path(a.out));
}

// --- dispatch ---------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path) {
  require_file(manifest_path, "manifest");
  const json j = load_json_file(manifest_path);
  const auto argv = j.at("argv").get<std::vector<std::string>>();
  const fs::path cwd = j.at("cwd").get<std::string>();
  const fs::path here = fs::current_path();
  fs::current_path(cwd);
  int code = dispatch(argv);
  if (code == 0) {
    for (const auto& [path, digest] : j.at("outputs").items()) {
      const std::string now = fs::exists(path) ? io::file_digest(path) : "missing";
      if (now != digest.get<std::string>()) {
        fs::current_path(here);
        fail("replay of {}: {} is {} but the manifest records {}", manifest_path, path, now, digest.get<std::string>());
      }
    }
    std::cout << fmt::format("replay reproduced {} outputs\n", j.at("outputs").size());
  }
  fs::current_path(here);
  return code;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Text-only prompt-pool tuning for multi-modality zero-shot classification", "cpt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cpt ") + kVersion);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic caption corpus");
  g->add_option("--labels", gen.labels, "Label manifest JSON")->required();
  g->add_option("--out", gen.out, "Output corpus JSONL")->required();
  g->add_option("--per-modality", gen.per_modality, "Captions per modality, name=count (repeatable)");
  g->add_option("--k-max", gen.k_max, "Largest label-subset size, name=k (repeatable)");
  g->add_option("--seed", gen.seed, "Caption seed");
  g->add_option("--config", gen.config, "JSON config (flags win)");
  g->add_flag("--single-label", gen.single_label, "One label per record (test/validation truth)");

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Embed a corpus with the synthetic encoder");
  e->add_option("--labels", enc.labels, "Label manifest JSON")->required();
  e->add_option("--out", enc.out, "Output CPTE file")->required();
  e->add_option("--corpus", enc.corpus, "Corpus or truth JSONL");
  e->add_option("--seed", enc.seed, "Anchor seed");
  e->add_option("--dim", enc.dim, "Embedding dimension");
  e->add_option("--delta-sigma", enc.delta_sigma, "Per-modality anchor perturbation");
  e->add_option("--noise", enc.noise, "Noise sigma: a number for all modalities or name=sigma (repeatable)");
  e->add_option("--anchors", enc.anchors, "Anchor geometry file; created if missing, enforced if present");
  e->add_option("--config", enc.config, "JSON config (flags win)");
  e->add_flag("--test", enc.test, "Encode records as test items (media-encoder stand-in)");
  e->add_flag("--class-prompts", enc.class_prompts, "Encode one class-name template per label and modality");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train prompt pools");
  t->add_option("--labels", tr.labels, "Label manifest JSON")->required();
  t->add_option("--corpus", tr.corpus, "Caption corpus JSONL")->required();
  t->add_option("--embeddings", tr.embeddings, "Caption embeddings (CPTE)")->required();
  t->add_option("--out", tr.out, "Checkpoint directory")->required();
  t->add_option("--config", tr.config, "JSON config (flags win)");
  t->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
  t->add_option("--val-truth", tr.val_truth, "Validation truth JSONL");
  t->add_option("--val-embeddings", tr.val_embeddings, "Validation item embeddings (CPTE)");
  t->add_option("--init-from", tr.init_from, "Initialize pools from class-prompt embeddings (CPTE)");
  t->add_option("--steps", tr.steps, "Total optimizer steps");
  t->add_option("--batch-size", tr.batch_size, "Captions per modality per step");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--lambda1", tr.lambda1, "Intra-modal loss weight");
  t->add_option("--lambda2", tr.lambda2, "Inter-modal loss weight");
  t->add_option("--margin", tr.margin, "Ranking margin");
  t->add_option("--tau", tr.tau, "Inter-modal softmax temperature");
  t->add_option("--seed", tr.seed, "Pool-init and shuffle seed");
  t->add_option("--eval-every", tr.eval_every, "Validation/checkpoint cadence in steps");
  t->add_option("--log-every", tr.log_every, "Print the loss every n steps (0 = quiet)");
  t->add_option("--weak", tr.weak, "fixed:<modality> or adaptive");
  t->add_option("--direction", tr.direction, "uni or bi");
  t->add_option("--similarity", tr.similarity, "cosine or dot");
  t->add_option("--optimizer", tr.optimizer, "adam or sgd");
  t->add_option("--train-modalities", tr.train_modalities, "Only train these pools");
  t->add_flag("--freeze-old", tr.freeze_old, "With --resume onto a larger label set, freeze pre-existing rows");

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Zero-shot evaluation of pools or of the class-prompt baseline");
  v->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
  v->add_option("--labels", ev.labels, "Label manifest JSON (required with --baseline)");
  v->add_option("--baseline", ev.baseline, "Class-prompt embeddings (CPTE) used as pools");
  v->add_option("--items", ev.items, "Test item embeddings (CPTE)")->required();
  v->add_option("--truth", ev.truth, "Test truth JSONL")->required();
  v->add_option("--modality", ev.modalities, "Restrict to these modalities");
  v->add_option("--out", ev.out, "Report JSON (default stdout)");
  v->add_option("--predictions-out", ev.predictions_out, "Softmax predictions JSONL");
  v->add_option("--softmax-tau", ev.softmax_tau, "Temperature for --predictions-out");
  v->add_flag("--unrestricted", ev.unrestricted, "Score every label, not only the modality's block");

  FuseArgs fu;
  auto* f = app.add_subcommand("fuse", "Fuse two softmax prediction files");
  f->add_option("--labels", fu.labels, "Label manifest JSON")->required();
  f->add_option("--modality", fu.modality, "Modality of the items")->required();
  f->add_option("--supervised", fu.supervised, "External predictions JSONL")->required();
  f->add_option("--ours", fu.ours, "Pool predictions JSONL")->required();
  f->add_option("--truth", fu.truth, "Truth JSONL for a report");
  f->add_option("--out", fu.out, "Report JSON (default stdout)");
  f->add_option("--fused-out", fu.fused_out, "Fused predictions JSONL");

  ExtendArgs ex;
  auto* x = app.add_subcommand("extend", "Add labels or modalities to a checkpoint");
  x->add_option("--checkpoint", ex.checkpoint, "Checkpoint directory")->required();
  x->add_option("--out", ex.out, "New checkpoint directory")->required();
  x->add_option("--labels", ex.labels, "Label manifest extending the checkpoint's");
  x->add_option("--add", ex.add, "modality=label1,label2 (repeatable)");
  x->add_option("--mode", ex.mode, "continue or freeze-old");
  x->add_option("--seed", ex.seed, "Seed for new rows (default: the run seed)");

  CheckGradArgs cg;
  auto* c = app.add_subcommand("check-grad", "Finite-difference check of the analytic gradients");
  c->add_option("--seed", cg.seed, "Instance seed");
  c->add_option("--instances", cg.instances, "Random instances");
  c->add_option("--tolerance", cg.tolerance, "Relative error bound");

  DumpArgs du;
  auto* d = app.add_subcommand("dump-sims", "Write a cosine-similarity CSV for external plotting");
  d->add_option("--checkpoint", du.checkpoint, "Checkpoint directory")->required();
  d->add_option("--modality", du.modality, "Pool to dump")->required();
  d->add_option("--items", du.items, "Item embeddings (CPTE); default is prompt x prompt");
  d->add_option("--out", du.out, "Output CSV")->required();

  std::string replay_manifest;
  auto* r = app.add_subcommand("replay", "Re-run a command from its manifest and verify the outputs");
  r->add_option("manifest", replay_manifest, "Manifest JSON")->required();

  std::vector<std::string> owned{"cpt"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : owned) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "cpt-error: " << e.what() << "\n";
    return 2;
  }

  Manifest man;
  man.argv = args;
  if (*g) {
    man.command = "gen";
    cmd_gen(gen, *g, man);
  } else if (*e) {
    man.command = "encode";
    cmd_encode(enc, *e, man);
  } else if (*t) {
    man.command = "train";
    cmd_train(tr, *t, man);
  } else if (*v) {
    man.command = "eval";
    cmd_eval(ev, man);
  } else if (*f) {
    man.command = "fuse";
    cmd_fuse(fu, man);
  } else if (*x) {
    man.command = "extend";
    cmd_extend(ex, *x, man);
  } else if (*c) {
    return cmd_check_grad(cg);
  } else if (*d) {
    man.command = "dump-sims";
    cmd_dump_sims(du, man);
  } else if (*r) {
    return cmd_replay(replay_manifest);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const std::exception& e) {
    std::cerr << "cpt-error: " << e.what() << "\n";
    return 1;
  }
}
