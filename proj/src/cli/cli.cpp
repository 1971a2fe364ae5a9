#include "escrl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "escrl/error.hpp"
#include "escrl/hash.hpp"
#include "escrl/labeler.hpp"
#include "escrl/metrics.hpp"
#include "escrl/refine.hpp"
#include "escrl/simd/kernels.hpp"
#include "escrl/text.hpp"

namespace escrl::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Reads one JSON object, remembering which keys were consumed so leftovers can
// be reported.
class Section {
 public:
  Section(const json& obj, std::string name) : obj_(obj), name_(std::move(name)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_[key].is_null()) return;
    try {
      dst = obj_[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path(key) + "' has the wrong type");
    }
  }

  // Numbers, or the strings "inf" / "-inf".
  void get_extended(const char* key, double& dst) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_[key].is_null()) return;
    dst = extended(obj_[key], key);
  }

  void get_extended(const char* key, std::optional<double>& dst) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_[key].is_null()) return;
    dst = extended(obj_[key], key);
  }

  void get_path(const char* key, std::optional<fs::path>& dst) {
    std::optional<std::string> s;
    seen_.insert(key);
    if (!obj_.contains(key) || obj_[key].is_null()) return;
    if (!obj_[key].is_string()) throw ConfigError("config key '" + path(key) + "' must be a string");
    dst = fs::path(obj_[key].get<std::string>());
  }

  template <class E>
  void get_enum(const char* key, E& dst, const std::map<std::string, E>& names) {
    std::string s;
    get(key, s);
    if (s.empty()) return;
    auto it = names.find(s);
    if (it == names.end()) throw ConfigError("config key '" + path(key) + "' has unknown value '" + s + "'");
    dst = it->second;
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_[key].is_null()) return std::nullopt;
    return Section(obj_[key], path(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path(it.key()) + "'");
    }
  }

 private:
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  double extended(const json& v, const char* key) const {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw ConfigError("config key '" + path(key) + "' must be a number, \"inf\" or \"-inf\"");
  }

  const json& obj_;
  std::string name_;
  std::set<std::string> seen_;
};

const std::map<std::string, gear::OverlapVariant> kVariants = {{"dice", gear::OverlapVariant::kDice},
                                                                {"mse", gear::OverlapVariant::kMse}};
const std::map<std::string, gear::FnSign> kFnSigns = {{"positive", gear::FnSign::kPositive},
                                                       {"literal", gear::FnSign::kLiteral}};
const std::map<std::string, spl::FilterMode> kModes = {{"band", spl::FilterMode::kBand},
                                                        {"below-lower", spl::FilterMode::kBelowLower}};
const std::map<std::string, grounding::StatusSource> kSources = {
    {"positive", grounding::StatusSource::kPositiveOnly},
    {"positive-or-uncertain", grounding::StatusSource::kPositiveOrUncertain}};
const std::map<std::string, spl::JudgeFailurePolicy> kFailure = {{"error", spl::JudgeFailurePolicy::kError},
                                                                  {"skip", spl::JudgeFailurePolicy::kSkip}};

template <class E>
std::string enum_name(E v, const std::map<std::string, E>& names) {
  for (const auto& [k, e] : names) {
    if (e == v) return k;
  }
  return "?";
}

json extended_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get_path("corpus", c.corpus);
  top.get_path("vocab", c.vocab);
  std::optional<fs::path> out;
  top.get_path("out", out);
  if (out) c.out = *out;
  top.get("seed", c.seed);

  if (auto s = top.child("backends")) {
    s->get("labeler", c.labeler);
    s->get("grounder", c.grounder);
    s->get("judge", c.judge);
    s->get("refiner", c.refiner);
    s->get("refine_fallback", c.refine_fallback);
    s->get("labeler_url", c.labeler_url);
    s->get("grounder_url", c.grounder_url);
    s->get("timeout_seconds", c.remote_timeout_seconds);
    s->get("retries", c.remote_retries);
    s->get_path("map_cache", c.map_cache);
    s->get_enum("judge_failure", c.judge_failure, kFailure);
    s->finish();
  }
  if (auto s = top.child("llm")) {
    s->get("endpoint", c.llm.endpoint);
    s->get("model", c.llm.model);
    s->get("token_env", c.llm.token_env);
    s->get("timeout_seconds", c.llm.timeout_seconds);
    s->get("retries", c.llm.retries);
    std::optional<fs::path> audit;
    s->get_path("audit_log", audit);
    c.llm.audit_log = audit;
    s->finish();
  }
  if (auto s = top.child("synth")) {
    s->get("num_studies", c.synth.num_studies);
    s->get("num_candidates", c.synth.num_candidates);
    s->get("positive_rate", c.synth.positive_rate);
    s->get("negative_mention_rate", c.synth.negative_mention_rate);
    s->get("uncertain_rate", c.synth.uncertain_rate);
    s->get("noise_rate", c.synth.noise_rate);
    s->get("templates_per_disease", c.synth.templates_per_disease);
    s->finish();
  }
  if (auto s = top.child("grounding")) {
    s->get("h", c.grounding.height);
    s->get("w", c.grounding.width);
    s->get("blob_sigma", c.grounding.blob_sigma);
    s->get("seed_salt", c.grounding.seed_salt);
    s->get_enum("status_source", c.grounding.status_source, kSources);
    s->finish();
  }
  if (auto s = top.child("gear")) {
    s->get("epsilon", c.gear.epsilon);
    s->get_enum("tp_variant", c.gear.tp_variant, kVariants);
    s->get_enum("fn_variant", c.gear.fn_variant, kVariants);
    s->get_enum("fn_sign", c.gear.fn_sign, kFnSigns);
    s->finish();
  }
  if (auto s = top.child("filter")) {
    s->get_extended("tau_lower_initial", c.filter.tau_lower_initial);
    s->get("decay_rate", c.filter.decay_rate);
    s->get("upper_c", c.filter.upper_c);
    s->get("upper_delta", c.filter.upper_delta);
    s->get_extended("fixed_upper", c.filter.fixed_upper);
    s->get_enum("mode", c.filter.mode, kModes);
    s->get("epoch", c.filter_epoch);
    s->finish();
  }
  if (auto s = top.child("predictor")) {
    s->get("epochs", c.predictor.epochs);
    s->get("learning_rate", c.predictor.learning_rate);
    s->get("l2", c.predictor.l2);
    s->get("batch_size", c.predictor.batch_size);
    s->finish();
  }
  if (auto s = top.child("train")) {
    s->get("epochs", c.train.epochs);
    s->get("num_samples", c.train.num_samples);
    s->get("learning_rate", c.train.learning_rate);
    s->get("gamma", c.train.gamma);
    s->get("temperature", c.train.temperature);
    s->get("baseline_momentum", c.train.baseline_momentum);
    s->get("init_positive_bias", c.train.init_positive_bias);
    s->get("retrain_every", c.train.retrain_every);
    s->get("predictor_online_lr", c.train.predictor_online_lr);
    s->finish();
  }
  if (auto s = top.child("metrics")) {
    s->get("uncertain_positive", c.uncertain_positive);
    s->finish();
  }
  top.finish();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void RunConfig::validate() const {
  auto one_of = [](const std::string& v, std::initializer_list<const char*> allowed, const char* what) {
    for (auto a : allowed) {
      if (v == a) return;
    }
    throw ConfigError(std::string("unknown ") + what + " backend '" + v + "'");
  };
  one_of(labeler, {"rules", "remote"}, "labeler");
  one_of(grounder, {"synthetic", "remote"}, "grounder");
  one_of(judge, {"rules", "llm"}, "judge");
  one_of(refiner, {"rules", "llm"}, "refiner");
  if (labeler == "remote" && labeler_url.empty()) throw ConfigError("remote labeler needs backends.labeler_url");
  if (grounder == "remote" && grounder_url.empty()) throw ConfigError("remote grounder needs backends.grounder_url");
  if (vocab && !fs::exists(*vocab)) throw ConfigError("vocabulary not found: " + vocab->string());
  synth.validate();
  grounding.validate();
  gear.validate();
  filter.validate();
  train.validate();
}

namespace {

// Seed and shared sections are copied into the per-module configs once flags
// have been applied.
void resolve(RunConfig& c) {
  c.synth.seed = c.seed;
  c.predictor.seed = c.seed;
  c.train.seed = c.seed;
  c.train.predictor = c.predictor;
  c.train.schedule = c.filter;
  c.train.gear = c.gear;
}

ordered_json effective_config(const RunConfig& c) {
  ordered_json j;
  j["corpus"] = c.corpus ? json(c.corpus->string()) : json(nullptr);
  j["vocab"] = c.vocab ? json(c.vocab->string()) : json(nullptr);
  j["out"] = c.out.string();
  j["seed"] = c.seed;
  j["backends"] = {{"labeler", c.labeler},
                   {"grounder", c.grounder},
                   {"judge", c.judge},
                   {"refiner", c.refiner},
                   {"refine_fallback", c.refine_fallback},
                   {"labeler_url", c.labeler_url},
                   {"grounder_url", c.grounder_url},
                   {"timeout_seconds", c.remote_timeout_seconds},
                   {"retries", c.remote_retries},
                   {"map_cache", c.map_cache ? json(c.map_cache->string()) : json(nullptr)},
                   {"judge_failure", enum_name(c.judge_failure, kFailure)}};
  j["llm"] = {{"endpoint", c.llm.endpoint},
              {"model", c.llm.model},
              {"token_env", c.llm.token_env},
              {"timeout_seconds", c.llm.timeout_seconds},
              {"retries", c.llm.retries},
              {"audit_log", c.llm.audit_log ? json(c.llm.audit_log->string()) : json(nullptr)}};
  j["synth"] = {{"num_studies", c.synth.num_studies},
                {"num_candidates", c.synth.num_candidates},
                {"positive_rate", c.synth.positive_rate},
                {"negative_mention_rate", c.synth.negative_mention_rate},
                {"uncertain_rate", c.synth.uncertain_rate},
                {"noise_rate", c.synth.noise_rate},
                {"templates_per_disease", c.synth.templates_per_disease}};
  j["grounding"] = {{"h", c.grounding.height},
                    {"w", c.grounding.width},
                    {"blob_sigma", c.grounding.blob_sigma},
                    {"seed_salt", c.grounding.seed_salt},
                    {"status_source", enum_name(c.grounding.status_source, kSources)}};
  j["gear"] = {{"epsilon", c.gear.epsilon},
               {"tp_variant", enum_name(c.gear.tp_variant, kVariants)},
               {"fn_variant", enum_name(c.gear.fn_variant, kVariants)},
               {"fn_sign", enum_name(c.gear.fn_sign, kFnSigns)}};
  j["filter"] = {{"tau_lower_initial", extended_json(c.filter.tau_lower_initial)},
                 {"decay_rate", c.filter.decay_rate},
                 {"upper_c", c.filter.upper_c},
                 {"upper_delta", c.filter.upper_delta},
                 {"fixed_upper", c.filter.fixed_upper ? extended_json(*c.filter.fixed_upper) : json(nullptr)},
                 {"mode", enum_name(c.filter.mode, kModes)},
                 {"epoch", c.filter_epoch}};
  j["predictor"] = {{"epochs", c.predictor.epochs},
                    {"learning_rate", c.predictor.learning_rate},
                    {"l2", c.predictor.l2},
                    {"batch_size", c.predictor.batch_size}};
  j["train"] = {{"epochs", c.train.epochs},
                {"num_samples", c.train.num_samples},
                {"learning_rate", c.train.learning_rate},
                {"gamma", c.train.gamma},
                {"temperature", c.train.temperature},
                {"baseline_momentum", c.train.baseline_momentum},
                {"init_positive_bias", c.train.init_positive_bias},
                {"retrain_every", c.train.retrain_every},
                {"predictor_online_lr", c.train.predictor_online_lr}};
  j["metrics"] = {{"uncertain_positive", c.uncertain_positive}};
  return j;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

struct Context {
  Context(RunConfig c, std::string cmd, std::ostream& o, std::ostream& e)
      : cfg(std::move(c)), command(std::move(cmd)), out(o), err(e) {}

  RunConfig cfg;
  std::string command;
  std::ostream& out;
  std::ostream& err;

  DiseaseVocabulary vocab = DiseaseVocabulary::chexbert14();
  policy::PipelineBackends backends;

  void prepare() {
    resolve(cfg);
    cfg.validate();
    if (cfg.vocab) vocab = DiseaseVocabulary::load(*cfg.vocab);
    fs::create_directories(cfg.out);
  }

  void build_backends() {
    std::shared_ptr<const labeler::LabelerBackend> lab;
    auto rules = std::make_shared<labeler::RuleLabeler>(vocab);
    if (cfg.labeler == "remote") {
      lab = std::make_shared<labeler::RemoteLabeler>(
          vocab, net::Endpoint{cfg.labeler_url, cfg.remote_timeout_seconds, cfg.remote_retries, {}});
    } else {
      lab = rules;
    }
    std::shared_ptr<const grounding::GroundingBackend> grounder;
    if (cfg.grounder == "remote") {
      grounder = std::make_shared<grounding::RemoteGrounder>(
          vocab, cfg.grounding.height, cfg.grounding.width,
          net::Endpoint{cfg.grounder_url, cfg.remote_timeout_seconds, cfg.remote_retries, {}});
    } else {
      grounder = std::make_shared<grounding::SyntheticGrounder>(cfg.grounding, lab);
    }
    if (cfg.map_cache) {
      fs::create_directories(*cfg.map_cache);
      grounder = std::make_shared<grounding::CachingGrounder>(grounder, *cfg.map_cache);
    }
    std::shared_ptr<const spl::JudgeBackend> judge;
    if (cfg.judge == "llm") {
      judge = std::make_shared<spl::LlmJudge>(cfg.llm, vocab);
    } else {
      judge = std::make_shared<spl::RuleJudge>(lab);
    }
    auto rules_refiner = std::make_shared<refine::RulesRefiner>(rules->lexicon());
    std::shared_ptr<const refine::Refiner> refiner = rules_refiner;
    if (cfg.refiner == "llm") {
      refiner = std::make_shared<refine::LlmRefiner>(cfg.llm, vocab, lab,
                                                     cfg.refine_fallback ? rules_refiner : nullptr);
    }
    backends = {lab, grounder, judge, refiner, std::make_shared<labeler::Lexicon>(rules->lexicon())};
  }

  std::vector<corpus::StudyRecord> load_corpus() const {
    if (!cfg.corpus) throw ConfigError("this command needs a corpus (config key \"corpus\" or --corpus)");
    if (!fs::exists(*cfg.corpus)) throw ConfigError("corpus not found: " + cfg.corpus->string());
    return corpus::load_corpus(*cfg.corpus, vocab);
  }

  fs::path out_path(const std::string& name) const { return cfg.out / name; }

  void write_manifest(const ordered_json& extra = ordered_json::object()) const {
    auto eff = effective_config(cfg);
    ordered_json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["seed"] = cfg.seed;
    m["config_hash"] = hex64(fnv1a(eff.dump()));
    m["simd"] = std::string(simd::isa_name(simd::active_isa()));
    m["config"] = eff;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_text_atomic(out_path("manifest.json"), m.dump(2) + "\n");
  }
};

std::vector<const corpus::StudyRecord*> select_studies(const std::vector<corpus::StudyRecord>& records,
                                                       const std::vector<std::string>& ids, bool all) {
  std::vector<const corpus::StudyRecord*> out;
  if (all) {
    for (const auto& r : records) out.push_back(&r);
    return out;
  }
  if (ids.empty()) throw ConfigError("select studies with --study ID or --all");
  for (const auto& id : ids) {
    auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.study_id == id; });
    if (it == records.end()) throw ConfigError("unknown study id: " + id);
    out.push_back(&*it);
  }
  return out;
}

double study_f1(const std::string& report, const StatusVector& gt, const labeler::LabelerBackend& lab) {
  std::vector<StatusVector> p{lab.extract(report)};
  std::vector<StatusVector> g{gt};
  return metrics::ce_from_statuses(p, g, lab.vocabulary()).micro.f1;
}

int cmd_synth(Context& ctx) {
  auto records = corpus::generate_synthetic_corpus(ctx.cfg.synth, ctx.vocab);
  auto path = ctx.out_path("corpus.jsonl");
  corpus::write_corpus(path, records);
  ctx.write_manifest({{"outputs", {path.string()}}});
  ctx.out << "wrote " << records.size() << " studies to " << path.string() << "\n";
  return kOk;
}

std::map<std::string, std::string> load_refined(const fs::path& path) {
  std::map<std::string, std::string> out;
  if (!fs::exists(path)) return out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      out[j.at("study_id").get<std::string>()] = j.at("report").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("refined reports: ") + e.what(), line_no);
    }
  }
  return out;
}

int cmd_reward(Context& ctx, const std::vector<std::string>& ids, bool all, const std::optional<fs::path>& refined) {
  auto records = ctx.load_corpus();
  auto selected = select_studies(records, ids, all);
  ctx.build_backends();
  auto refined_reports = load_refined(refined.value_or(ctx.out_path("refined.jsonl")));
  gear::GearBackends gb{ctx.backends.labeler, ctx.backends.grounder};
  std::string lines;
  for (const auto* r : selected) {
    std::string pred;
    if (auto it = refined_reports.find(r->study_id); it != refined_reports.end()) {
      pred = it->second;
    } else if (!r->candidate_observations.empty()) {
      pred = r->candidate_observations.front();
    } else {
      throw Error("study " + r->study_id + " has neither a refined report nor candidate observations");
    }
    auto b = gear::gear_reward(pred, r->ground_truth_report, r->study_id, r->image_ref.value_or(""), gb, ctx.cfg.gear);
    auto j = ordered_json::parse(gear::to_json(b));
    ordered_json line;
    line["study_id"] = r->study_id;
    for (auto it = j.begin(); it != j.end(); ++it) line[it.key()] = it.value();
    lines += line.dump() + "\n";
  }
  ctx.out << lines;
  write_text_atomic(ctx.out_path("rewards.jsonl"), lines);
  ctx.write_manifest({{"outputs", {ctx.out_path("rewards.jsonl").string()}}});
  return kOk;
}

spl::PreferencePredictor fit_predictor(const std::vector<spl::PreferenceTriplet>& dataset,
                                       const spl::PredictorHyperparams& hp) {
  auto model = spl::make_predictor(dataset);
  auto examples = spl::to_examples(model, dataset);
  spl::train_predictor(model, examples, hp);
  return model;
}

int cmd_spl(Context& ctx) {
  auto records = ctx.load_corpus();
  ctx.build_backends();
  spl::DatasetBuildStats stats;
  auto dataset =
      spl::build_preference_dataset(records, *ctx.backends.judge, *ctx.backends.lexicon, ctx.cfg.judge_failure, &stats);
  if (dataset.empty()) throw Error("preference dataset is empty (no study has candidate observations)");
  auto model = fit_predictor(dataset, ctx.cfg.predictor);
  auto filtered = spl::filter_trustworthy(dataset, model, ctx.cfg.filter, ctx.cfg.filter_epoch);

  spl::write_dataset(ctx.out_path("preferences.jsonl"), dataset);
  model.save(ctx.out_path("predictor.bin"));
  spl::write_dataset(ctx.out_path("trusted.jsonl"), filtered.kept);

  std::map<spl::PreferenceLabel, std::pair<std::size_t, std::size_t>> per_label;
  for (const auto& t : dataset) ++per_label[t.label].second;
  for (const auto& t : filtered.kept) ++per_label[t.label].first;
  ordered_json s;
  s["triplets"] = dataset.size();
  s["skipped"] = stats.skipped;
  s["kept"] = filtered.kept.size();
  s["mode"] = enum_name(ctx.cfg.filter.mode, kModes);
  s["epoch"] = ctx.cfg.filter_epoch;
  s["tau_lower"] = extended_json(filtered.tau_lower);
  s["tau_upper"] = extended_json(filtered.tau_upper);
  ordered_json labels = ordered_json::object();
  for (auto label : {spl::PreferenceLabel::kConsistent, spl::PreferenceLabel::kInconsistent,
                     spl::PreferenceLabel::kIndistinguishable}) {
    labels[std::string(spl::label_name(label))] = {{"kept", per_label[label].first},
                                                    {"total", per_label[label].second}};
  }
  s["per_label"] = labels;
  write_text_atomic(ctx.out_path("spl_stats.json"), s.dump(2) + "\n");
  ctx.write_manifest({{"outputs",
                       {ctx.out_path("preferences.jsonl").string(), ctx.out_path("predictor.bin").string(),
                        ctx.out_path("trusted.jsonl").string(), ctx.out_path("spl_stats.json").string()}}});
  ctx.out << s.dump() << "\n";
  return kOk;
}

int cmd_refine(Context& ctx, const std::vector<std::string>& ids, bool all) {
  auto records = ctx.load_corpus();
  auto selected = select_studies(records, ids, all);
  ctx.build_backends();
  const auto& lab = *ctx.backends.labeler;

  spl::PreferencePredictor model;
  if (fs::exists(ctx.out_path("predictor.bin"))) {
    model = spl::PreferencePredictor::load(ctx.out_path("predictor.bin"));
  } else {
    auto dataset = spl::build_preference_dataset(records, *ctx.backends.judge, *ctx.backends.lexicon,
                                                 ctx.cfg.judge_failure);
    if (dataset.empty()) throw Error("preference dataset is empty (no study has candidate observations)");
    model = fit_predictor(dataset, ctx.cfg.predictor);
  }

  std::string lines;
  for (const auto* r : selected) {
    if (r->candidate_observations.empty()) throw Error("study " + r->study_id + " has no candidate observations");
    auto triplets = spl::build_study_triplets(*r, *ctx.backends.judge, *ctx.backends.lexicon, ctx.cfg.judge_failure);
    auto filtered = spl::filter_trustworthy(triplets, model, ctx.cfg.filter, ctx.cfg.filter_epoch);
    auto evidence = refine::derive_trusted_evidence(filtered.kept, model, lab);
    auto report = ctx.backends.refiner->refine(evidence, r->candidate_observations);

    auto gt = lab.extract(r->ground_truth_report);
    ctx.err << r->study_id << ": refined F1 " << study_f1(report, gt, lab) << "; observations";
    for (const auto& o : r->candidate_observations) ctx.err << " " << study_f1(o, gt, lab);
    ctx.err << "\n";

    ordered_json j;
    j["study_id"] = r->study_id;
    j["report"] = report;
    lines += j.dump() + "\n";
  }
  write_text_atomic(ctx.out_path("refined.jsonl"), lines);
  ctx.write_manifest({{"outputs", {ctx.out_path("refined.jsonl").string()}}});
  ctx.out << "wrote " << selected.size() << " refined reports to " << ctx.out_path("refined.jsonl").string() << "\n";
  return kOk;
}

int cmd_train(Context& ctx, bool resume) {
  auto records = ctx.load_corpus();
  ctx.build_backends();
  const auto& tc = ctx.cfg.train;
  const auto ckpt = ctx.out_path("checkpoint.bin");
  const auto csv_path = ctx.out_path("metrics.csv");

  policy::TrainState state;
  std::vector<std::string> rows;
  if (resume && fs::exists(ckpt)) {
    state = policy::load_checkpoint(ckpt);
    if (state.config_hash != policy::config_hash(tc)) {
      throw ConfigError("checkpoint " + ckpt.string() + " was written under a different configuration");
    }
    if (fs::exists(csv_path)) {
      auto lines = read_lines(csv_path);
      for (std::size_t i = 1; i < lines.size() && rows.size() < state.epoch; ++i) rows.push_back(lines[i]);
    }
    if (rows.size() != state.epoch) throw Error("metrics.csv does not cover the checkpointed epochs");
    ctx.err << "resuming from epoch " << state.epoch << "\n";
  } else {
    state = policy::initial_state(records, tc, ctx.backends);
  }

  auto contexts = policy::ground_truth_statuses(records, *ctx.backends.labeler);
  auto initial = policy::evaluate(state, records, contexts, ctx.backends, tc);
  ctx.err << "epoch " << state.epoch << ": ce_f1 " << initial.ce.f1 << " mean_l_r " << initial.mean_l_r << "\n";

  auto flush = [&] {
    std::string csv = policy::metrics_csv_header() + "\n";
    for (const auto& r : rows) csv += r + "\n";
    write_text_atomic(csv_path, csv);
  };
  flush();
  policy::EpochMetrics last = initial;
  policy::train(state, records, tc, ctx.backends, [&](const policy::TrainState& st, const policy::EpochMetrics& m) {
    rows.push_back(policy::metrics_csv_row(m));
    policy::save_checkpoint(ckpt, st);
    flush();
    last = m;
    ctx.err << "epoch " << m.epoch << ": ce_f1 " << m.ce.f1 << " mean_l_r " << m.mean_l_r << "\n";
  });
  if (tc.epochs == 0 || !fs::exists(ckpt)) policy::save_checkpoint(ckpt, state);

  ordered_json summary;
  summary["start_epoch_ce_f1"] = initial.ce.f1;
  summary["final_epoch"] = state.epoch;
  summary["final_ce_f1"] = last.ce.f1;
  summary["final_mean_l_fp"] = last.mean_l_fp;
  ctx.write_manifest({{"outputs", {csv_path.string(), ckpt.string()}}, {"summary", summary}});
  ctx.out << summary.dump() << "\n";
  return kOk;
}

int cmd_eval(Context& ctx, const fs::path& pred, const fs::path& gt) {
  auto p = read_lines(pred);
  auto g = read_lines(gt);
  while (!p.empty() && p.back().empty()) p.pop_back();
  while (!g.empty() && g.back().empty()) g.pop_back();
  if (p.size() != g.size()) {
    throw ConfigError("prediction file has " + std::to_string(p.size()) + " lines, reference file " +
                      std::to_string(g.size()));
  }
  ctx.build_backends();
  auto e = metrics::evaluate_reports(p, g, *ctx.backends.labeler, ctx.cfg.uncertain_positive);
  auto text = metrics::to_json(e, p.size());
  write_text_atomic(ctx.out_path("eval.json"), text + "\n");
  ctx.write_manifest({{"outputs", {ctx.out_path("eval.json").string()}}});
  ctx.out << text << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reward engineering and preference learning toolkit for radiology reports", "escrl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> corpus_path;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Seed for every random stream (overrides config)");
  app.add_option("--out", out_dir, "Output directory (overrides config)");
  app.add_option("--corpus", corpus_path, "Corpus JSONL (overrides config)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::optional<std::size_t> num_studies;
  std::optional<double> noise_rate;
  synth->add_option("--num-studies", num_studies);
  synth->add_option("--noise-rate", noise_rate);

  std::vector<std::string> study_ids;
  bool all = false;
  std::optional<std::string> refined_path;
  auto* reward = app.add_subcommand("reward", "GEAR breakdown per study");
  reward->add_option("--study", study_ids, "Study id (repeatable)");
  reward->add_flag("--all", all, "Every study in the corpus");
  reward->add_option("--refined", refined_path, "Refined reports JSONL (default <out>/refined.jsonl)");

  auto* splc = app.add_subcommand("spl", "Build preferences, train the predictor, filter");
  std::optional<std::string> mode;
  std::optional<std::size_t> filter_epoch;
  splc->add_option("--mode", mode, "band | below-lower");
  splc->add_option("--epoch", filter_epoch, "Epoch at which the lower threshold is evaluated");

  auto* refine_cmd = app.add_subcommand("refine", "Refine candidate observations into one report");
  refine_cmd->add_option("--study", study_ids, "Study id (repeatable)");
  refine_cmd->add_flag("--all", all, "Every study in the corpus");
  refine_cmd->add_option("--mode", mode, "band | below-lower");
  refine_cmd->add_option("--epoch", filter_epoch, "Epoch at which the lower threshold is evaluated");

  auto* train_cmd = app.add_subcommand("train", "Run the policy-gradient loop");
  std::optional<std::size_t> epochs;
  std::optional<double> gamma;
  bool resume = false;
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--gamma", gamma);
  train_cmd->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin when present");

  auto* eval_cmd = app.add_subcommand("eval", "Lexical and clinical-efficacy metrics");
  std::string pred_file, gt_file;
  eval_cmd->add_option("--pred", pred_file, "Predicted reports, one per line")->required();
  eval_cmd->add_option("--gt", gt_file, "Reference reports, one per line")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  const auto* sub = app.get_subcommands().front();
  try {
    RunConfig cfg = config_path ? load_config(*config_path) : RunConfig{};
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (corpus_path) cfg.corpus = fs::path(*corpus_path);
    if (num_studies) cfg.synth.num_studies = *num_studies;
    if (noise_rate) cfg.synth.noise_rate = *noise_rate;
    if (mode) {
      auto it = kModes.find(*mode);
      if (it == kModes.end()) throw ConfigError("unknown filter mode '" + *mode + "'");
      cfg.filter.mode = it->second;
    }
    if (filter_epoch) cfg.filter_epoch = *filter_epoch;
    if (epochs) cfg.train.epochs = *epochs;
    if (gamma) cfg.train.gamma = *gamma;

    Context ctx{std::move(cfg), sub->get_name(), out, err};
    ctx.prepare();
    if (sub == synth) return cmd_synth(ctx);
    if (sub == reward) return cmd_reward(ctx, study_ids, all, refined_path ? std::optional<fs::path>(*refined_path) : std::nullopt);
    if (sub == splc) return cmd_spl(ctx);
    if (sub == refine_cmd) return cmd_refine(ctx, study_ids, all);
    if (sub == train_cmd) return cmd_train(ctx, resume);
    if (sub == eval_cmd) return cmd_eval(ctx, pred_file, gt_file);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace escrl::cli
