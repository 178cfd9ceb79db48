#include "cpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "cpt/binary_io.hpp"
#include "cpt/error.hpp"
#include "cpt/eval.hpp"
#include "cpt/rng.hpp"
#include "cpt/version.hpp"

namespace cpt {

namespace {

constexpr std::uint32_t kOptimizerVersion = 1;

const char* direction_name(Direction d) { return d == Direction::kUni ? "uni" : "bi"; }

std::optional<ModalityId> resolve_weak(const TrainState& state, const TrainConfig& cfg) {
  if (cfg.weak.kind == WeakSelection::Kind::kFixed) return cfg.weak.fixed;
  return state.weak;
}

bool contains(const std::vector<ModalityId>& v, ModalityId m) { return std::find(v.begin(), v.end(), m) != v.end(); }

std::string pool_file_name(const LabelSpace& space, ModalityId m) {
  return "pool_" + space.modality_name(m) + ".cptp";
}

}  // namespace

void TrainConfig::validate(const LabelSpace& space) const {
  if (batch_size < 1) fail("train: batch size must be >= 1");
  if (!(lr > 0.0)) fail("train: learning rate must be positive, got {}", lr);
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("train: loss weights must be non-negative");
  if (!(margin > 0.0)) fail("train: margin must be positive, got {}", margin);
  if (!(tau > 0.0)) fail("train: tau must be positive, got {}", tau);
  if (optimizer.kind == OptimizerConfig::Kind::kAdam &&
      !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
        optimizer.eps > 0.0)) {
    fail("train: invalid Adam hyper-parameters");
  }
  if (weak.kind == WeakSelection::Kind::kFixed) space.modality_name(weak.fixed);
  if (weak.kind == WeakSelection::Kind::kAdaptive && eval_every == 0) {
    fail("train: adaptive weak selection needs eval_every > 0");
  }
  for (auto m : train_modalities) space.modality_name(m);
}

std::vector<ModalityId> TrainConfig::active(const LabelSpace& space) const {
  return train_modalities.empty() ? space.modalities() : train_modalities;
}

nlohmann::ordered_json to_json(const TrainConfig& cfg, const LabelSpace& space) {
  nlohmann::ordered_json j;
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["optimizer"] = cfg.optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd";
  j["beta1"] = cfg.optimizer.beta1;
  j["beta2"] = cfg.optimizer.beta2;
  j["eps"] = cfg.optimizer.eps;
  j["lr"] = cfg.lr;
  j["lambda1"] = cfg.lambda1;
  j["lambda2"] = cfg.lambda2;
  j["margin"] = cfg.margin;
  j["tau"] = cfg.tau;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  j["weak"] = cfg.weak.kind == WeakSelection::Kind::kAdaptive
                  ? std::string("adaptive")
                  : "fixed:" + space.modality_name(cfg.weak.fixed);
  j["direction"] = direction_name(cfg.direction);
  j["similarity"] = cfg.similarity == SimilarityMode::kCosine ? "cosine" : "dot";
  auto mods = nlohmann::ordered_json::array();
  for (auto m : cfg.train_modalities) mods.push_back(space.modality_name(m));
  j["train_modalities"] = std::move(mods);
  return j;
}

void update_from_json(TrainConfig& cfg, const nlohmann::json& j, const LabelSpace& space) {
  try {
    if (j.contains("steps")) cfg.steps = j["steps"].get<std::uint64_t>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("optimizer")) {
      const auto name = j["optimizer"].get<std::string>();
      if (name == "adam") {
        cfg.optimizer.kind = OptimizerConfig::Kind::kAdam;
      } else if (name == "sgd") {
        cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
      } else {
        fail("unknown optimizer '{}'", name);
      }
    }
    if (j.contains("beta1")) cfg.optimizer.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.optimizer.beta2 = j["beta2"].get<double>();
    if (j.contains("eps")) cfg.optimizer.eps = j["eps"].get<double>();
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("lambda1")) cfg.lambda1 = j["lambda1"].get<double>();
    if (j.contains("lambda2")) cfg.lambda2 = j["lambda2"].get<double>();
    if (j.contains("margin")) cfg.margin = j["margin"].get<double>();
    if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<std::uint64_t>();
    if (j.contains("weak")) {
      const auto w = j["weak"].get<std::string>();
      if (w == "adaptive") {
        cfg.weak.kind = WeakSelection::Kind::kAdaptive;
      } else if (w.rfind("fixed:", 0) == 0) {
        cfg.weak.kind = WeakSelection::Kind::kFixed;
        cfg.weak.fixed = space.modality(w.substr(6));
      } else {
        fail("weak must be 'adaptive' or 'fixed:<modality>', got '{}'", w);
      }
    }
    if (j.contains("direction")) {
      const auto d = j["direction"].get<std::string>();
      if (d != "uni" && d != "bi") fail("direction must be 'uni' or 'bi', got '{}'", d);
      cfg.direction = d == "uni" ? Direction::kUni : Direction::kBi;
    }
    if (j.contains("similarity")) {
      const auto s = j["similarity"].get<std::string>();
      if (s != "cosine" && s != "dot") fail("similarity must be 'cosine' or 'dot', got '{}'", s);
      cfg.similarity = s == "cosine" ? SimilarityMode::kCosine : SimilarityMode::kDot;
    }
    if (j.contains("train_modalities")) {
      cfg.train_modalities.clear();
      for (const auto& m : j["train_modalities"]) cfg.train_modalities.push_back(space.modality(m.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    fail("train config: {}", e.what());
  }
}

TrainingSet build_training_set(const LabelSpace& space, const std::vector<CaptionRecord>& corpus,
                               const std::vector<EmbeddingRecord>& embeddings) {
  if (corpus.size() != embeddings.size()) {
    fail("training set: {} captions but {} embeddings", corpus.size(), embeddings.size());
  }
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (!by_id.emplace(embeddings[i].ref_id, i).second) fail("training set: duplicate embedding id {}", embeddings[i].ref_id);
  }
  TrainingSet data(space.modality_count());
  for (const auto& rec : corpus) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end()) fail("training set: caption {} has no embedding", rec.id);
    const auto& emb = embeddings[it->second];
    if (emb.modality != rec.modality) fail("training set: caption {} modality mismatch", rec.id);
    auto& slot = data.at(rec.modality.value);
    if (slot.size() > 0 && slot.embeddings.cols() != emb.vector.size()) fail("training set: mixed embedding dimensions");
    slot.embeddings.push_row(std::vector<double>(emb.vector.begin(), emb.vector.end()));
    slot.positives.push_back(rec.positives());
    slot.ids.push_back(rec.id);
  }
  return data;
}

EvalSet build_eval_set(const LabelSpace& space, const std::vector<CaptionRecord>& truth,
                       const std::vector<EmbeddingRecord>& embeddings) {
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!by_id.emplace(truth[i].id, i).second) fail("eval set: duplicate truth id {}", truth[i].id);
  }
  EvalSet set;
  set.items.resize(space.modality_count());
  set.positives.resize(space.modality_count());
  for (const auto& emb : embeddings) {
    auto it = by_id.find(emb.ref_id);
    if (it == by_id.end()) fail("eval set: item {} has no truth record", emb.ref_id);
    const auto& rec = truth[it->second];
    if (rec.modality != emb.modality) fail("eval set: item {} modality mismatch", emb.ref_id);
    set.items.at(emb.modality.value).push_back(emb);
    set.positives.at(emb.modality.value).push_back(rec.positives());
  }
  return set;
}

std::string metrics_to_jsonl(const std::vector<StepMetrics>& log, const LabelSpace& space) {
  std::string out;
  for (const auto& m : log) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["L_total"] = m.l_total;
    j["L_intra"] = m.l_intra;
    j["L_inter"] = m.l_inter;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < m.intra_per_modality.size(); ++i) {
      per[space.modality_name(ModalityId{static_cast<std::uint32_t>(i)})] = m.intra_per_modality[i];
    }
    j["per_modality"] = std::move(per);
    nlohmann::ordered_json inter = nlohmann::ordered_json::object();
    for (const auto& [t, v] : m.inter_per_strong) inter[space.modality_name(t)] = v;
    j["inter"] = std::move(inter);
    if (m.weak) j["weak"] = space.modality_name(*m.weak);
    if (m.val_top1) {
      nlohmann::ordered_json val = nlohmann::ordered_json::object();
      for (std::size_t i = 0; i < m.val_top1->size(); ++i) {
        const double v = (*m.val_top1)[i];
        if (!std::isnan(v)) val[space.modality_name(ModalityId{static_cast<std::uint32_t>(i)})] = v;
      }
      j["val"] = std::move(val);
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<StepMetrics> metrics_from_jsonl(const std::string& text, const LabelSpace& space,
                                            const std::string& origin) {
  std::vector<StepMetrics> log;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      StepMetrics m;
      m.step = j.at("step").get<std::uint64_t>();
      m.l_total = j.at("L_total").get<double>();
      m.l_intra = j.at("L_intra").get<double>();
      m.l_inter = j.at("L_inter").get<double>();
      m.intra_per_modality.assign(space.modality_count(), 0.0);
      for (const auto& [name, v] : j.at("per_modality").items()) m.intra_per_modality.at(space.modality(name).value) = v.get<double>();
      for (const auto& [name, v] : j.at("inter").items()) m.inter_per_strong.emplace_back(space.modality(name), v.get<double>());
      if (j.contains("weak")) m.weak = space.modality(j["weak"].get<std::string>());
      if (j.contains("val")) {
        std::vector<double> val(space.modality_count(), std::nan(""));
        for (const auto& [name, v] : j["val"].items()) val.at(space.modality(name).value) = v.get<double>();
        m.val_top1 = std::move(val);
      }
      log.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    } catch (const Error& e) {
      fail("{}:{}: {}", origin, line_no, e.what());
    }
  }
  return log;
}

TrainState init_state(const LabelSpace& space, const PoolInitConfig& init, std::size_t dim) {
  TrainState state;
  for (auto m : space.modalities()) {
    state.pools.push_back(init_pool(space, m, init, dim));
    state.first_moment.emplace_back(space.size(), dim, 0.0f);
    state.second_moment.emplace_back(space.size(), dim, 0.0f);
  }
  return state;
}

std::vector<IntraBatch> make_batches(const TrainingSet& data, const std::vector<ModalityId>& modalities,
                                     std::size_t batch_size, std::uint64_t seed, std::uint64_t step) {
  if (batch_size < 1) fail("make_batches: batch size must be >= 1");
  std::vector<IntraBatch> batches;
  for (auto m : modalities) {
    if (m.value >= data.size() || data[m.value].size() == 0) fail("make_batches: modality id {} has no captions", m.value);
    const ModalityData& md = data[m.value];
    const std::size_t total = md.size();
    const std::size_t per_epoch = (total + batch_size - 1) / batch_size;
    const std::uint64_t epoch = step / per_epoch;
    const std::size_t slot = static_cast<std::size_t>(step % per_epoch);

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng({stream::kShuffle, seed, m.value, epoch});
    for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    IntraBatch batch;
    batch.modality = m;
    const std::size_t begin = slot * batch_size;
    const std::size_t end = std::min(total, begin + batch_size);
    for (std::size_t i = begin; i < end; ++i) {
      batch.embeddings.push_row(md.embeddings.row(order[i]));
      batch.positives.push_back(md.positives[order[i]]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

bool all_finite(const MatrixD& m) {
  return std::all_of(m.flat().begin(), m.flat().end(), [](double v) { return std::isfinite(v); });
}

void apply_update(TrainState& state, ModalityId m, const MatrixD& grad, const TrainConfig& cfg, std::uint64_t t) {
  PromptPool& pool = state.pools[m.value];
  MatrixF& m1 = state.first_moment[m.value];
  MatrixF& m2 = state.second_moment[m.value];
  const auto& opt = cfg.optimizer;
  const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t r = 0; r < pool.rows(); ++r) {
    if (pool.frozen[r]) continue;
    for (std::size_t c = 0; c < pool.dim(); ++c) {
      const double g = grad(r, c);
      double p = pool.params(r, c);
      if (opt.kind == OptimizerConfig::Kind::kSgd) {
        p -= cfg.lr * g;
      } else {
        const double mean = opt.beta1 * m1(r, c) + (1.0 - opt.beta1) * g;
        const double var = opt.beta2 * m2(r, c) + (1.0 - opt.beta2) * g * g;
        m1(r, c) = static_cast<float>(mean);
        m2(r, c) = static_cast<float>(var);
        const double m_hat = static_cast<double>(m1(r, c)) / bias1;
        const double v_hat = static_cast<double>(m2(r, c)) / bias2;
        p -= cfg.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
      }
      pool.params(r, c) = static_cast<float>(p);
    }
  }
}

}  // namespace

void train_step(TrainState& state, const LabelSpace& space, const std::vector<IntraBatch>& batches,
                const TrainConfig& cfg) {
  if (state.pools.size() != space.modality_count()) fail("train_step: state has {} pools for {} modalities", state.pools.size(), space.modality_count());
  PoolParams params;
  std::vector<std::vector<std::uint8_t>> frozen;
  for (const auto& pool : state.pools) {
    if (pool.rows() != space.size()) fail("train_step: pool '{}' has {} rows, label space {}", space.modality_name(pool.modality), pool.rows(), space.size());
    params.push_back(pool.params.cast<double>());
    frozen.push_back(pool.frozen);
  }

  const std::vector<ModalityId> active = cfg.active(space);
  IntraResult intra = intra_loss(space, batches, params, cfg.margin, cfg.similarity);

  std::optional<InterResult> inter;
  const std::optional<ModalityId> weak = resolve_weak(state, cfg);
  if (cfg.lambda2 > 0.0 && weak && active.size() >= 2 && contains(active, *weak)) {
    InterConfig icfg;
    icfg.weak = *weak;
    icfg.tau = cfg.tau;
    icfg.direction = cfg.direction;
    for (auto m : active) {
      if (m != *weak) icfg.strong.push_back(m);
    }
    inter = inter_loss(space, params, icfg);
  }

  GradientBundle bundle = total_loss(std::move(intra), std::move(inter), cfg.lambda1, cfg.lambda2, frozen);
  if (!std::isfinite(bundle.l_total)) fail("train_step {}: non-finite loss {}", state.step, bundle.l_total);
  for (auto m : active) {
    if (!all_finite(bundle.grads[m.value])) {
      fail("train_step {}: non-finite gradient in pool '{}'", state.step, space.modality_name(m));
    }
  }

  const std::uint64_t t = state.step + 1;
  for (auto m : active) apply_update(state, m, bundle.grads[m.value], cfg, t);

  StepMetrics metrics;
  metrics.step = state.step;
  metrics.l_total = bundle.l_total;
  metrics.l_intra = bundle.l_intra;
  metrics.l_inter = bundle.l_inter;
  metrics.intra_per_modality = bundle.intra_per_modality;
  metrics.inter_per_strong = bundle.inter_per_strong;
  metrics.weak = weak;
  state.log.push_back(std::move(metrics));
  state.step = t;
}

ModalityId select_weak_modality(const std::map<ModalityId, double>& val_top1) {
  if (val_top1.empty()) fail("select_weak_modality: no validation metrics");
  std::optional<ModalityId> best;
  double best_value = 0.0;
  for (const auto& [m, v] : val_top1) {
    if (std::isnan(v)) fail("select_weak_modality: missing metric for modality id {}", m.value);
    if (!best || v < best_value) {
      best = m;
      best_value = v;
    }
  }
  return *best;
}

std::vector<double> validation_top1(const TrainState& state, const LabelSpace& space, const EvalSet& val) {
  std::vector<double> out(space.modality_count(), std::nan(""));
  for (auto m : space.modalities()) {
    if (m.value >= val.items.size() || val.items[m.value].empty()) continue;
    out[m.value] = evaluate_pool(state.pools[m.value], space, val.items[m.value], val.positives[m.value], true).top1;
  }
  return out;
}

void run(TrainState& state, const LabelSpace& space, const TrainingSet& data, const TrainConfig& cfg,
         const RunOptions& options) {
  cfg.validate(space);
  const std::vector<ModalityId> active = cfg.active(space);
  if (cfg.weak.kind == WeakSelection::Kind::kAdaptive && !options.validation) {
    fail("train: adaptive weak selection needs a validation set");
  }
  if (cfg.weak.kind == WeakSelection::Kind::kFixed) state.weak = cfg.weak.fixed;

  while (state.step < cfg.steps) {
    std::optional<std::vector<double>> val;
    if (cfg.eval_every > 0 && state.step % cfg.eval_every == 0) {
      if (options.checkpoint_dir && state.step > 0) {
        save_checkpoint(intermediate_checkpoint(*options.checkpoint_dir, state.step), state, space, cfg,
                        options.extra_manifest);
      }
      if (options.validation) {
        val = validation_top1(state, space, *options.validation);
        if (cfg.weak.kind == WeakSelection::Kind::kAdaptive) {
          std::map<ModalityId, double> scores;
          for (auto m : active) scores[m] = (*val)[m.value];
          state.weak = select_weak_modality(scores);
        }
      }
    }
    const auto batches = make_batches(data, active, cfg.batch_size, cfg.seed, state.step);
    train_step(state, space, batches, cfg);
    if (val) state.log.back().val_top1 = std::move(val);
    if (options.on_step) options.on_step(state.log.back());
  }
  if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir, state, space, cfg, options.extra_manifest);
}

std::filesystem::path intermediate_checkpoint(const std::filesystem::path& dir, std::uint64_t step) {
  return dir / fmt::format("step_{:06d}", step);
}

std::string encode_optimizer_state(const TrainState& state) {
  io::ByteWriter w;
  w.magic("CPTO");
  w.u32(kOptimizerVersion);
  w.u64(state.step);
  w.u32(static_cast<std::uint32_t>(state.pools.size()));
  for (std::size_t p = 0; p < state.pools.size(); ++p) {
    w.u32(state.pools[p].modality.value);
    w.u32(static_cast<std::uint32_t>(state.first_moment[p].rows()));
    w.u32(static_cast<std::uint32_t>(state.first_moment[p].cols()));
    w.f32s(state.first_moment[p].flat());
    w.f32s(state.second_moment[p].flat());
  }
  return w.bytes();
}

void decode_optimizer_state(std::string bytes, TrainState& state, const std::string& origin) {
  io::ByteReader r(std::move(bytes), origin);
  r.expect_magic("CPTO");
  const std::uint32_t version = r.u32();
  if (version != kOptimizerVersion) fail("{}: unsupported optimizer-state version {}", origin, version);
  state.step = r.u64();
  const std::uint32_t count = r.u32();
  state.first_moment.clear();
  state.second_moment.clear();
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::uint32_t modality = r.u32();
    if (modality != p) fail("{}: optimizer entries out of modality order", origin);
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    MatrixF m1(n, d);
    MatrixF m2(n, d);
    r.f32s(m1.flat());
    r.f32s(m2.flat());
    state.first_moment.push_back(std::move(m1));
    state.second_moment.push_back(std::move(m2));
  }
  r.expect_end();
}

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const LabelSpace& space,
                     const TrainConfig& cfg, const nlohmann::ordered_json& extra) {
  std::filesystem::create_directories(dir);
  space.save_manifest(dir / "labels.json");
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["tool"] = std::string("cpt ") + kVersion;
  manifest["step"] = state.step;
  manifest["weak"] = state.weak ? nlohmann::ordered_json(space.modality_name(*state.weak)) : nlohmann::ordered_json();
  manifest["config"] = to_json(cfg, space);
  auto files = nlohmann::ordered_json::array();
  for (const auto& pool : state.pools) {
    const std::string name = pool_file_name(space, pool.modality);
    write_pool(pool, dir / name);
    files.push_back(name);
  }
  manifest["pools"] = std::move(files);
  manifest["optimizer_state"] = "optimizer.cpto";
  if (!extra.is_null()) manifest["extra"] = extra;
  io::write_text_file(dir / "optimizer.cpto", encode_optimizer_state(state));
  io::write_text_file(dir / "metrics.jsonl", metrics_to_jsonl(state.log, space));
  io::write_text_file(dir / "run.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ck{LabelSpace::load_manifest(dir / "labels.json"), {}, {}};
  try {
    ck.manifest = nlohmann::json::parse(io::read_text_file(dir / "run.json"));
  } catch (const nlohmann::json::exception& e) {
    fail("{}: {}", (dir / "run.json").string(), e.what());
  }
  for (auto m : ck.space.modalities()) {
    PromptPool pool = read_pool(dir / pool_file_name(ck.space, m));
    if (pool.modality != m) fail("{}: pool file for '{}' carries modality id {}", dir.string(), ck.space.modality_name(m), pool.modality.value);
    if (pool.rows() != ck.space.size()) fail("{}: pool '{}' has {} rows for {} labels", dir.string(), ck.space.modality_name(m), pool.rows(), ck.space.size());
    ck.state.pools.push_back(std::move(pool));
  }
  decode_optimizer_state(io::read_text_file(dir / "optimizer.cpto"), ck.state, (dir / "optimizer.cpto").string());
  if (ck.state.first_moment.size() != ck.state.pools.size()) fail("{}: optimizer state does not match pools", dir.string());
  const auto metrics = dir / "metrics.jsonl";
  if (std::filesystem::exists(metrics)) ck.state.log = metrics_from_jsonl(io::read_text_file(metrics), ck.space, metrics.string());
  if (ck.manifest.contains("weak") && ck.manifest["weak"].is_string()) {
    ck.state.weak = ck.space.modality(ck.manifest["weak"].get<std::string>());
  }
  return ck;
}

void continual_extend(TrainState& state, LabelSpace& space, const std::vector<LabelAddition>& additions,
                      ExtendMode mode, const PoolInitConfig& init) {
  if (state.pools.empty()) fail("extend: state has no pools");
  const std::size_t dim = state.pools.front().dim();
  const std::size_t old_pool_count = state.pools.size();
  std::vector<std::size_t> original(space.size());
  std::iota(original.begin(), original.end(), 0);

  LabelSpace next = space;
  TrainState grown = state;
  for (const auto& add : additions) {
    auto id = next.find_modality(add.modality);
    const bool is_new = !id;
    if (is_new) {
      if (add.labels.empty()) fail("extend: new modality '{}' has no labels", add.modality);
      id = next.register_modality(add.modality);
    }
    if (add.labels.empty()) continue;
    const LabelExtension ext = next.add_labels(*id, add.labels);
    for (std::size_t p = 0; p < grown.pools.size(); ++p) {
      grown.pools[p] = extend_pool(grown.pools[p], ext.remap, add.labels.size(), init, false);
      for (auto* moments : {&grown.first_moment[p], &grown.second_moment[p]}) {
        MatrixF moved(next.size(), dim, 0.0f);
        for (std::size_t r = 0; r < ext.remap.size(); ++r) {
          std::copy(moments->row(r).begin(), moments->row(r).end(), moved.row(ext.remap[r]).begin());
        }
        *moments = std::move(moved);
      }
    }
    for (auto& o : original) o = ext.remap[o];
    if (is_new) {
      grown.pools.push_back(init_pool(next, *id, init, dim));
      grown.first_moment.emplace_back(next.size(), dim, 0.0f);
      grown.second_moment.emplace_back(next.size(), dim, 0.0f);
    }
  }

  if (mode == ExtendMode::kFreezeOld) {
    for (std::size_t p = 0; p < old_pool_count; ++p) {
      for (std::size_t r : original) {
        grown.pools[p].frozen[r] = 1;
        std::fill(grown.first_moment[p].row(r).begin(), grown.first_moment[p].row(r).end(), 0.0f);
        std::fill(grown.second_moment[p].row(r).begin(), grown.second_moment[p].row(r).end(), 0.0f);
      }
    }
  }
  space = std::move(next);
  state = std::move(grown);
}

}  // namespace cpt
