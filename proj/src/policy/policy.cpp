#include "escrl/policy.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <optional>
#include <fstream>
#include <numeric>
#include <sstream>

#include "escrl/binio.hpp"
#include "escrl/error.hpp"
#include "escrl/hash.hpp"
#include "escrl/text.hpp"

namespace escrl::policy {
namespace {

std::size_t context_index(DiseaseStatus s) { return static_cast<std::size_t>(s); }

std::vector<double> log_softmax(std::span<const double> z, double temperature) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp((v - m) / temperature);
  const double lse = std::log(sum);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - m) / temperature - lse;
  return out;
}

std::optional<ActionKind> target_kind(DiseaseStatus gt) {
  switch (gt) {
    case DiseaseStatus::kPositive:
      return ActionKind::kPositive;
    case DiseaseStatus::kNegative:
      return ActionKind::kNegative;
    case DiseaseStatus::kBlank:
      return ActionKind::kOmit;
    case DiseaseStatus::kUncertain:
      return std::nullopt;
  }
  return std::nullopt;
}

void check_context(const ToyPolicy& policy, const StatusVector& context) {
  if (context.size() != policy.num_diseases()) {
    throw ArityError("policy context has " + std::to_string(context.size()) + " entries, policy covers " +
                     std::to_string(policy.num_diseases()) + " diseases");
  }
}

}  // namespace

ToyPolicy::ToyPolicy(std::size_t num_diseases, std::size_t templates_per_disease, double temperature)
    : num_diseases_(num_diseases), templates_(templates_per_disease), temperature_(temperature) {
  if (num_diseases_ == 0 || templates_ == 0) throw ConfigError("policy needs at least one disease and template");
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_)) throw ConfigError("policy temperature must be > 0");
  logits_.assign(num_diseases_ * kContexts * num_actions(), 0.0);
}

std::size_t ToyPolicy::row_offset(std::size_t disease, DiseaseStatus context) const {
  if (disease >= num_diseases_) throw ArityError("policy: disease index out of range");
  return (disease * kContexts + context_index(context)) * num_actions();
}

std::span<double> ToyPolicy::logits(std::size_t disease, DiseaseStatus context) {
  return {logits_.data() + row_offset(disease, context), num_actions()};
}

std::span<const double> ToyPolicy::logits(std::size_t disease, DiseaseStatus context) const {
  return {logits_.data() + row_offset(disease, context), num_actions()};
}

std::vector<double> ToyPolicy::log_probabilities(std::size_t disease, DiseaseStatus context) const {
  return log_softmax(logits(disease, context), temperature_);
}

std::vector<double> ToyPolicy::probabilities(std::size_t disease, DiseaseStatus context) const {
  auto lp = log_probabilities(disease, context);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

void ToyPolicy::add_kind_bias(ActionKind kind, double bias) {
  for (std::size_t row = 0; row < num_diseases_ * kContexts; ++row) {
    for (std::size_t t = 0; t < templates_; ++t) logits_[row * num_actions() + action(kind, t)] += bias;
  }
}

SampledObservation sample_observation(const ToyPolicy& policy, const labeler::Lexicon& lexicon,
                                      const StatusVector& context, Rng& rng) {
  check_context(policy, context);
  if (lexicon.size() != policy.num_diseases()) throw ArityError("policy and lexicon disagree on disease count");
  SampledObservation out;
  out.actions.reserve(policy.num_diseases());
  out.logprobs.reserve(policy.num_diseases());
  std::vector<std::string> sentences;
  for (std::size_t k = 0; k < policy.num_diseases(); ++k) {
    auto lp = policy.log_probabilities(k, context[k]);
    std::vector<double> p(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
    std::size_t a = sample_categorical(p, rng);
    out.actions.push_back(a);
    out.logprobs.push_back(lp[a]);
    out.logprob += lp[a];
    switch (policy.kind(a)) {
      case ActionKind::kPositive:
        sentences.push_back(lexicon.sentence(k, DiseaseStatus::kPositive, policy.template_index(a)));
        break;
      case ActionKind::kNegative:
        sentences.push_back(lexicon.sentence(k, DiseaseStatus::kNegative, policy.template_index(a)));
        break;
      case ActionKind::kOmit:
        break;
    }
  }
  out.text = text::join(sentences);
  return out;
}

std::vector<SampledObservation> sample_observations(const ToyPolicy& policy, const labeler::Lexicon& lexicon,
                                                    const StatusVector& context, std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("sample_observations needs n >= 1");
  std::vector<SampledObservation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_observation(policy, lexicon, context, rng));
  return out;
}

void accumulate_logprob_gradient(const ToyPolicy& policy, const StatusVector& context,
                                 const SampledObservation& sample, double scale, std::vector<double>& grad) {
  check_context(policy, context);
  if (grad.size() != policy.parameters().size()) throw ArityError("gradient buffer size mismatch");
  if (sample.actions.size() != policy.num_diseases()) throw ArityError("sample covers the wrong number of diseases");
  const double inv_t = 1.0 / policy.temperature();
  for (std::size_t k = 0; k < policy.num_diseases(); ++k) {
    auto p = policy.probabilities(k, context[k]);
    const std::size_t off = policy.row_offset(k, context[k]);
    for (std::size_t j = 0; j < p.size(); ++j) {
      double indicator = j == sample.actions[k] ? 1.0 : 0.0;
      grad[off + j] += scale * (indicator - p[j]) * inv_t;
    }
  }
}

double task_loss(const ToyPolicy& policy, const StatusVector& ground_truth, std::vector<double>* grad, double scale) {
  check_context(policy, ground_truth);
  if (grad && grad->size() != policy.parameters().size()) throw ArityError("gradient buffer size mismatch");
  const double inv_t = 1.0 / policy.temperature();
  double loss = 0.0;
  for (std::size_t k = 0; k < policy.num_diseases(); ++k) {
    auto target = target_kind(ground_truth[k]);
    if (!target) continue;
    auto lp = policy.log_probabilities(k, ground_truth[k]);
    // log P(group) via log-sum-exp over the target kind's actions.
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < policy.templates(); ++t) m = std::max(m, lp[policy.action(*target, t)]);
    double s = 0.0;
    for (std::size_t t = 0; t < policy.templates(); ++t) s += std::exp(lp[policy.action(*target, t)] - m);
    const double log_pg = m + std::log(s);
    loss -= log_pg;
    if (!grad) continue;
    const std::size_t off = policy.row_offset(k, ground_truth[k]);
    for (std::size_t j = 0; j < lp.size(); ++j) {
      double pj = std::exp(lp[j]);
      double in_group = policy.kind(j) == *target ? std::exp(lp[j] - log_pg) : 0.0;
      (*grad)[off + j] += scale * (pj - in_group) * inv_t;
    }
  }
  return loss;
}

void TrainConfig::validate() const {
  if (num_samples == 0) throw ConfigError("N (num_samples) must be >= 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (!(baseline_momentum >= 0.0 && baseline_momentum < 1.0)) throw ConfigError("baseline_momentum must be in [0,1)");
  if (!std::isfinite(init_positive_bias)) throw ConfigError("init_positive_bias must be finite");
  if (retrain_every == 0) throw ConfigError("retrain_every must be >= 1");
  if (!(predictor_online_lr >= 0.0)) throw ConfigError("predictor_online_lr must be >= 0");
  schedule.validate();
  gear.validate();
}

std::string canonical_config(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["num_samples"] = cfg.num_samples;
  j["learning_rate"] = cfg.learning_rate;
  j["gamma"] = cfg.gamma;
  j["temperature"] = cfg.temperature;
  j["baseline_momentum"] = cfg.baseline_momentum;
  j["init_positive_bias"] = cfg.init_positive_bias;
  j["seed"] = cfg.seed;
  j["retrain_every"] = cfg.retrain_every;
  j["predictor_online_lr"] = cfg.predictor_online_lr;
  j["predictor"] = {{"epochs", cfg.predictor.epochs},
                    {"learning_rate", cfg.predictor.learning_rate},
                    {"l2", cfg.predictor.l2},
                    {"batch_size", cfg.predictor.batch_size},
                    {"seed", cfg.predictor.seed}};
  const auto& s = cfg.schedule;
  nlohmann::ordered_json sched;
  sched["tau_lower_initial"] = std::isfinite(s.tau_lower_initial) ? nlohmann::json(s.tau_lower_initial)
                                                                  : nlohmann::json(s.tau_lower_initial > 0 ? "inf" : "-inf");
  sched["decay_rate"] = s.decay_rate;
  sched["upper_c"] = s.upper_c;
  sched["upper_delta"] = s.upper_delta;
  if (s.fixed_upper) {
    sched["fixed_upper"] = std::isfinite(*s.fixed_upper) ? nlohmann::json(*s.fixed_upper)
                                                         : nlohmann::json(*s.fixed_upper > 0 ? "inf" : "-inf");
  } else {
    sched["fixed_upper"] = nullptr;
  }
  sched["mode"] = s.mode == spl::FilterMode::kBand ? "band" : "below-lower";
  j["schedule"] = std::move(sched);
  j["gear"] = {{"epsilon", cfg.gear.epsilon},
               {"tp_variant", cfg.gear.tp_variant == gear::OverlapVariant::kDice ? "dice" : "mse"},
               {"fn_variant", cfg.gear.fn_variant == gear::OverlapVariant::kDice ? "dice" : "mse"},
               {"fn_sign", cfg.gear.fn_sign == gear::FnSign::kPositive ? "positive" : "literal"}};
  return j.dump();
}

std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(canonical_config(cfg)); }

void PipelineBackends::validate() const {
  if (!labeler || !grounder || !judge || !refiner || !lexicon) {
    throw ConfigError("training needs labeler, grounder, judge, refiner and lexicon");
  }
  if (lexicon->size() != labeler->vocabulary().size()) throw ArityError("lexicon and labeler disagree on K");
}

namespace {

// Feature table covering every template sentence pair of each disease, plus
// the pairs already present in the corpus.
spl::PreferencePredictor make_loop_predictor(const labeler::Lexicon& lexicon,
                                             std::span<const spl::PreferenceTriplet> seed_triplets) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t k = 0; k < lexicon.size(); ++k) {
    std::vector<std::string> texts{""};
    for (auto st : {DiseaseStatus::kPositive, DiseaseStatus::kNegative, DiseaseStatus::kUncertain}) {
      for (std::size_t t = 0; t < labeler::Lexicon::kTemplatesPerStatus; ++t) texts.push_back(lexicon.sentence(k, st, t));
    }
    for (const auto& a : texts) {
      for (const auto& b : texts) pairs.emplace_back(a, b);
    }
  }
  for (const auto& t : seed_triplets) pairs.emplace_back(t.candidate, t.reference);
  return spl::PreferencePredictor(spl::FeatureVocab::build(pairs));
}

}  // namespace

TrainState initial_state(std::span<const corpus::StudyRecord> corpus, const TrainConfig& cfg,
                         const PipelineBackends& backends) {
  cfg.validate();
  backends.validate();
  const auto& vocab = backends.labeler->vocabulary();
  const auto& lexicon = *backends.lexicon;

  TrainState st;
  st.policy = ToyPolicy(vocab.size(), labeler::Lexicon::kTemplatesPerStatus, cfg.temperature);
  if (cfg.init_positive_bias != 0.0) st.policy.add_kind_bias(ActionKind::kPositive, cfg.init_positive_bias);
  auto seed_triplets = spl::build_preference_dataset(corpus, *backends.judge, lexicon);
  st.predictor = make_loop_predictor(lexicon, seed_triplets);
  if (!seed_triplets.empty()) {
    auto examples = spl::to_examples(st.predictor, seed_triplets);
    spl::train_predictor(st.predictor, examples, cfg.predictor);
  }
  st.schedule = cfg.schedule;
  st.gamma = cfg.gamma;
  st.rng = Rng(mix64(Fnv1a{}.add(cfg.seed).add("train").value()));
  st.config_hash = config_hash(cfg);
  return st;
}

PipelineResult run_pipeline(const TrainState& state, const corpus::StudyRecord& study, const StatusVector& context,
                            const PipelineBackends& backends, const TrainConfig& cfg, Rng& rng) {
  const auto& lexicon = *backends.lexicon;
  PipelineResult r;
  r.samples = sample_observations(state.policy, lexicon, context, cfg.num_samples, rng);
  corpus::StudyRecord sampled = study;
  sampled.candidate_observations.clear();
  for (const auto& s : r.samples) sampled.candidate_observations.push_back(s.text);
  r.triplets = spl::build_study_triplets(sampled, *backends.judge, lexicon);
  r.filtered = spl::filter_trustworthy(r.triplets, state.predictor, state.schedule, state.epoch);
  r.evidence = refine::derive_trusted_evidence(r.filtered.kept, state.predictor, *backends.labeler);
  r.refined = backends.refiner->refine(r.evidence, sampled.candidate_observations);
  r.reward = gear::gear_reward(r.refined, study.ground_truth_report, study.study_id, study.image_ref.value_or(""),
                               gear::GearBackends{backends.labeler, backends.grounder}, cfg.gear);
  return r;
}

StepReport reinforce_step(TrainState& state, const corpus::StudyRecord& study, const StatusVector& context,
                          const PipelineBackends& backends, const TrainConfig& cfg) {
  StepReport rep;
  rep.pipeline = run_pipeline(state, study, context, backends, cfg, state.rng);
  rep.reward = -rep.pipeline.reward.l_r;
  if (!state.baseline_ready) {
    state.baseline = rep.reward;
    state.baseline_ready = true;
  }
  rep.advantage = rep.reward - state.baseline;

  auto params = state.policy.parameters();
  std::vector<double> ascent(params.size(), 0.0);
  const double rl_scale = state.gamma * rep.advantage;
  if (rl_scale != 0.0) {
    for (const auto& s : rep.pipeline.samples) accumulate_logprob_gradient(state.policy, context, s, rl_scale, ascent);
  }
  // Descent on L_task enters the ascent direction with a minus sign.
  rep.task_loss = task_loss(state.policy, context, &ascent, -1.0);

  double norm_sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double delta = cfg.learning_rate * ascent[i];
    if (!std::isfinite(delta)) {
      throw TrainingError("non-finite policy gradient on study " + study.study_id, static_cast<long long>(state.step));
    }
    params[i] += delta;
    norm_sq += delta * delta;
  }
  rep.update_norm = std::sqrt(norm_sq);

  if (!rep.pipeline.triplets.empty() && cfg.predictor_online_lr > 0.0) {
    auto examples = spl::to_examples(state.predictor, rep.pipeline.triplets);
    rep.predictor_loss = spl::sgd_step(state.predictor, examples, cfg.predictor_online_lr, cfg.predictor.l2);
  }

  state.baseline = cfg.baseline_momentum * state.baseline + (1.0 - cfg.baseline_momentum) * rep.reward;
  ++state.step;
  return rep;
}

std::vector<StatusVector> ground_truth_statuses(std::span<const corpus::StudyRecord> corpus,
                                                const labeler::LabelerBackend& labeler) {
  std::vector<StatusVector> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back(labeler.extract(r.ground_truth_report));
  return out;
}

EpochMetrics evaluate(const TrainState& state, std::span<const corpus::StudyRecord> corpus,
                      std::span<const StatusVector> contexts, const PipelineBackends& backends,
                      const TrainConfig& cfg) {
  if (contexts.size() != corpus.size()) throw ArityError("evaluate: one context per study required");
  Rng rng(mix64(Fnv1a{}.add(cfg.seed).add("eval").add(static_cast<std::uint64_t>(state.epoch)).value()));
  EpochMetrics m;
  m.epoch = state.epoch;
  std::vector<StatusVector> refined_status;
  refined_status.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto r = run_pipeline(state, corpus[i], contexts[i], backends, cfg, rng);
    m.mean_l_r += r.reward.l_r;
    m.mean_l_tp += r.reward.l_tp;
    m.mean_l_fn += r.reward.l_fn;
    m.mean_l_fp += r.reward.l_fp;
    refined_status.push_back(backends.labeler->extract(r.refined));
  }
  if (!corpus.empty()) {
    const double n = static_cast<double>(corpus.size());
    m.mean_l_r /= n;
    m.mean_l_tp /= n;
    m.mean_l_fn /= n;
    m.mean_l_fp /= n;
  }
  m.ce = metrics::ce_from_statuses(refined_status, contexts, backends.labeler->vocabulary()).micro;
  return m;
}

std::vector<EpochMetrics> train(TrainState& state, std::span<const corpus::StudyRecord> corpus,
                                const TrainConfig& cfg, const PipelineBackends& backends,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  backends.validate();
  if (state.config_hash != config_hash(cfg)) {
    throw ConfigError("training state was created under a different configuration");
  }
  std::vector<EpochMetrics> history;
  if (state.epoch >= cfg.epochs || corpus.empty()) return history;
  const auto contexts = ground_truth_statuses(corpus, *backends.labeler);
  std::vector<std::size_t> order(corpus.size());
  while (state.epoch < cfg.epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), state.rng);
    std::vector<spl::PreferenceTriplet> epoch_triplets;
    for (auto i : order) {
      auto rep = reinforce_step(state, corpus[i], contexts[i], backends, cfg);
      epoch_triplets.insert(epoch_triplets.end(), std::make_move_iterator(rep.pipeline.triplets.begin()),
                            std::make_move_iterator(rep.pipeline.triplets.end()));
    }
    ++state.epoch;
    if (state.epoch % cfg.retrain_every == 0 && !epoch_triplets.empty()) {
      auto examples = spl::to_examples(state.predictor, epoch_triplets);
      spl::train_predictor(state.predictor, examples, cfg.predictor);
    }
    auto m = evaluate(state, corpus, contexts, backends, cfg);
    history.push_back(m);
    if (on_epoch) on_epoch(state, m);
  }
  return history;
}

std::string metrics_csv_header() { return "epoch,mean_l_r,mean_l_tp,mean_l_fn,mean_l_fp,ce_precision,ce_recall,ce_f1"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f", m.epoch, m.mean_l_r, m.mean_l_tp,
                m.mean_l_fn, m.mean_l_fp, m.ce.precision, m.ce.recall, m.ce.f1);
  return buf;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'S', 'C', 'R', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  using namespace binio;
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, state.config_hash);
  put_u64(out, state.epoch);
  put_u64(out, state.step);
  put_f64(out, state.gamma);
  put_f64(out, state.baseline);
  put_u32(out, state.baseline_ready ? 1 : 0);
  put_string(out, serialize_rng(state.rng));

  put_u32(out, static_cast<std::uint32_t>(state.policy.num_diseases()));
  put_u32(out, static_cast<std::uint32_t>(state.policy.templates()));
  put_f64(out, state.policy.temperature());
  for (double v : state.policy.parameters()) put_f64(out, v);

  const auto& s = state.schedule;
  put_f64(out, s.tau_lower_initial);
  put_f64(out, s.decay_rate);
  put_f64(out, s.upper_c);
  put_f64(out, s.upper_delta);
  put_u32(out, s.fixed_upper ? 1 : 0);
  put_f64(out, s.fixed_upper.value_or(0.0));
  put_u32(out, s.mode == spl::FilterMode::kBand ? 0 : 1);

  state.predictor.write_exact(out);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint: " + path.string());
    const auto bytes = out.str();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  using namespace binio;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ValidationError("not a checkpoint file: " + path.string());
  }
  if (auto v = get_u32(in); v != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(v));
  }
  TrainState st;
  st.config_hash = get_u64(in);
  st.epoch = get_u64(in);
  st.step = get_u64(in);
  st.gamma = get_f64(in);
  st.baseline = get_f64(in);
  st.baseline_ready = get_u32(in) != 0;
  st.rng = deserialize_rng(get_string(in));

  auto k = get_u32(in);
  auto t = get_u32(in);
  auto temperature = get_f64(in);
  st.policy = ToyPolicy(k, t, temperature);
  for (auto& v : st.policy.parameters()) v = get_f64(in);

  auto& s = st.schedule;
  s.tau_lower_initial = get_f64(in);
  s.decay_rate = get_f64(in);
  s.upper_c = get_f64(in);
  s.upper_delta = get_f64(in);
  bool has_fixed = get_u32(in) != 0;
  double fixed = get_f64(in);
  if (has_fixed) s.fixed_upper = fixed;
  s.mode = get_u32(in) == 0 ? spl::FilterMode::kBand : spl::FilterMode::kBelowLower;

  st.predictor = spl::PreferencePredictor::read_exact(in);
  return st;
}

PipelineBackends default_backends(const DiseaseVocabulary& vocab, const grounding::SyntheticGrounderConfig& grounder) {
  auto lab = std::make_shared<labeler::RuleLabeler>(vocab);
  PipelineBackends b;
  b.labeler = lab;
  b.grounder = std::make_shared<grounding::SyntheticGrounder>(grounder, lab);
  b.judge = std::make_shared<spl::RuleJudge>(lab);
  b.refiner = std::make_shared<refine::RulesRefiner>(lab->lexicon());
  b.lexicon = std::make_shared<labeler::Lexicon>(lab->lexicon());
  return b;
}

}  // namespace escrl::policy
