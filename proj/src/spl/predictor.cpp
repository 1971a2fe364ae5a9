#include "escrl/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "escrl/binio.hpp"
#include "escrl/error.hpp"
#include "escrl/lexicon.hpp"
#include "escrl/random.hpp"
#include "escrl/text.hpp"

namespace escrl::spl {
namespace {

using namespace binio;

constexpr char kMagic[8] = {'E', 'S', 'C', 'R', 'L', 'P', 'R', 'D'};
constexpr std::uint32_t kVersion = 1;

// Precision tag: 4 for float32 parameters, 8 for float64.
void write_model(std::ostream& out, const FeatureVocab& vocab, std::span<const double> params, std::uint32_t width) {
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, width);
  put_u32(out, static_cast<std::uint32_t>(vocab.size()));
  for (const auto& name : vocab.names()) put_string(out, name);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (double p : params) {
    if (width == 4) {
      put_f32(out, static_cast<float>(p));
    } else {
      put_f64(out, p);
    }
  }
}

PreferencePredictor read_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a predictor file (bad magic)");
  }
  auto version = get_u32(in);
  if (version != kVersion) throw ValidationError("unsupported predictor version " + std::to_string(version));
  auto width = get_u32(in);
  if (width != 4 && width != 8) throw ValidationError("bad predictor precision tag");
  auto count = get_u32(in);
  if (count > (1u << 24)) throw ValidationError("predictor feature count out of range");
  std::vector<std::string> names;
  names.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) names.push_back(get_string(in));
  PreferencePredictor model{FeatureVocab(std::move(names))};
  auto n_params = get_u32(in);
  if (n_params != model.parameters().size()) throw ValidationError("predictor parameter count mismatch");
  for (auto& p : model.parameters()) {
    p = width == 4 ? static_cast<double>(get_f32(in)) : get_f64(in);
  }
  return model;
}

bool has_phrase(const std::vector<std::string>& toks, const std::vector<std::vector<std::string>>& phrases) {
  for (const auto& p : phrases) {
    if (p.empty() || p.size() > toks.size()) continue;
    for (std::size_t i = 0; i + p.size() <= toks.size(); ++i) {
      if (std::equal(p.begin(), p.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) return true;
    }
  }
  return false;
}

struct CueTables {
  std::vector<std::vector<std::string>> negation;
  std::vector<std::vector<std::string>> uncertainty;
};

const CueTables& cue_tables() {
  static const CueTables tables = [] {
    CueTables t;
    for (const auto& c : labeler::Lexicon::negation_cues()) t.negation.push_back(text::tokenize(c));
    for (const auto& c : labeler::Lexicon::uncertainty_cues()) t.uncertainty.push_back(text::tokenize(c));
    return t;
  }();
  return tables;
}

}  // namespace

FeatureVocab::FeatureVocab(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::uint32_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], i).second) throw ValidationError("duplicate feature name: " + names_[i]);
  }
}

std::vector<std::string> FeatureVocab::feature_names(const std::string& candidate, const std::string& reference) {
  auto c_tok = text::tokenize(candidate);
  auto r_tok = text::tokenize(reference);
  std::set<std::string> c_set(c_tok.begin(), c_tok.end());
  std::set<std::string> r_set(r_tok.begin(), r_tok.end());
  std::vector<std::string> out;
  if (c_set.empty()) out.emplace_back("c:<empty>");
  if (r_set.empty()) out.emplace_back("r:<empty>");
  const auto& cues = cue_tables();
  for (const auto& [name, table] : {std::pair{"<neg>", &cues.negation}, std::pair{"<unc>", &cues.uncertainty}}) {
    bool c = has_phrase(c_tok, *table);
    bool r = has_phrase(r_tok, *table);
    if (c) out.push_back(std::string("c:") + name);
    if (r) out.push_back(std::string("r:") + name);
    if (c && r) out.push_back(std::string("x:") + name);
  }
  for (const auto& t : c_set) {
    out.push_back("c:" + t);
    if (r_set.count(t)) out.push_back("x:" + t);
  }
  for (const auto& t : r_set) out.push_back("r:" + t);
  return out;
}

FeatureVocab FeatureVocab::build(std::span<const std::pair<std::string, std::string>> pairs) {
  std::set<std::string> all;
  for (const auto& [c, r] : pairs) {
    for (auto& name : feature_names(c, r)) all.insert(std::move(name));
  }
  return FeatureVocab(std::vector<std::string>(all.begin(), all.end()));
}

std::vector<std::uint32_t> FeatureVocab::encode(const std::string& candidate, const std::string& reference) const {
  std::vector<std::uint32_t> out;
  for (const auto& name : feature_names(candidate, reference)) {
    auto it = index_.find(name);
    if (it != index_.end()) out.push_back(it->second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PreferencePredictor::PreferencePredictor(FeatureVocab vocab)
    : vocab_(std::move(vocab)), params_(2 * (vocab_.size() + 1), 0.0) {}

std::array<double, 2> PreferencePredictor::logits(std::span<const std::uint32_t> features) const {
  const std::size_t s = stride();
  std::array<double, 2> z{params_[s - 1], params_[2 * s - 1]};
  for (auto f : features) {
    z[0] += params_[f];
    z[1] += params_[s + f];
  }
  return z;
}

Distribution PreferencePredictor::predict(std::span<const std::uint32_t> features) const {
  auto z = logits(features);
  // Bounding the margin keeps both probabilities strictly positive.
  double d = std::clamp(z[1] - z[0], -30.0, 30.0);
  double p0 = 1.0 / (1.0 + std::exp(d));
  return {p0, 1.0 - p0};
}

Distribution PreferencePredictor::predict(const std::string& candidate, const std::string& reference) const {
  auto f = vocab_.encode(candidate, reference);
  return predict(std::span<const std::uint32_t>(f));
}

Example PreferencePredictor::make_example(const std::string& candidate, const std::string& reference,
                                          Distribution target) const {
  return Example{vocab_.encode(candidate, reference), target};
}

LossAndGradient PreferencePredictor::loss_and_gradient(std::span<const Example> batch, double l2) const {
  LossAndGradient out;
  out.gradient.assign(params_.size(), 0.0);
  if (batch.empty()) return out;
  const std::size_t s = stride();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    auto z = logits(ex.features);
    double m = std::max(z[0], z[1]);
    double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
    double logp0 = z[0] - lse;
    double logp1 = z[1] - lse;
    loss -= ex.target[0] * logp0 + ex.target[1] * logp1;
    double g0 = (std::exp(logp0) - ex.target[0]) * inv_n;
    double g1 = (std::exp(logp1) - ex.target[1]) * inv_n;
    for (auto f : ex.features) {
      out.gradient[f] += g0;
      out.gradient[s + f] += g1;
    }
    out.gradient[s - 1] += g0;
    out.gradient[2 * s - 1] += g1;
  }
  loss *= inv_n;
  if (l2 > 0.0) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t f = 0; f + 1 < s; ++f) {
        double w = params_[c * s + f];
        loss += 0.5 * l2 * w * w;
        out.gradient[c * s + f] += l2 * w;
      }
    }
  }
  out.loss = loss;
  return out;
}

void PreferencePredictor::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write predictor: " + path.string());
  write_model(out, vocab_, params_, 4);
  if (!out) throw Error("write failed: " + path.string());
}

PreferencePredictor PreferencePredictor::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open predictor: " + path.string());
  return read_model(in);
}

void PreferencePredictor::write_exact(std::ostream& out) const { write_model(out, vocab_, params_, 8); }

PreferencePredictor PreferencePredictor::read_exact(std::istream& in) { return read_model(in); }

PredictorTrainResult train_predictor(PreferencePredictor& model, std::span<const Example> data,
                                     const PredictorHyperparams& hp) {
  if (data.empty()) throw TrainingError("cannot train the predictor on an empty dataset", 0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  auto params = model.parameters();
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = hp.batch_size == 0 ? data.size() : std::min(hp.batch_size, data.size());
  Rng rng(hp.seed);

  PredictorTrainResult result;
  std::vector<Example> mb;
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    if (batch < data.size()) shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < data.size(); start += batch) {
      std::span<const Example> view;
      if (batch == data.size()) {
        view = data;
      } else {
        mb.clear();
        for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i) mb.push_back(data[order[i]]);
        view = mb;
      }
      auto lg = model.loss_and_gradient(view, hp.l2);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("non-finite predictor loss", static_cast<long long>(result.steps));
      }
      b1t *= kBeta1;
      b2t *= kBeta2;
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * lg.gradient[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * lg.gradient[i] * lg.gradient[i];
        double mhat = m[i] / (1.0 - b1t);
        double vhat = v[i] / (1.0 - b2t);
        params[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + kEps);
      }
      ++result.steps;
    }
  }
  result.final_loss = model.loss_and_gradient(data, hp.l2).loss;
  return result;
}

double sgd_step(PreferencePredictor& model, std::span<const Example> batch, double learning_rate, double l2) {
  auto lg = model.loss_and_gradient(batch, l2);
  if (!std::isfinite(lg.loss)) throw TrainingError("non-finite predictor loss", 0);
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * lg.gradient[i];
  return lg.loss;
}

}  // namespace escrl::spl
