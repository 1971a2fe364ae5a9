#include "escrl/gear.hpp"

#include <json.hpp>

#include <algorithm>

#include "escrl/error.hpp"
#include "escrl/simd/kernels.hpp"

namespace escrl::gear {

using grounding::ResponseMapSet;

GroupPartition partition(const StatusVector& pred, const StatusVector& gt) {
  if (pred.size() != gt.size()) {
    throw ArityError("partition: predicted vector has " + std::to_string(pred.size()) + " entries, ground truth " +
                     std::to_string(gt.size()));
  }
  GroupPartition g;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const bool gt_pos = gt[k] == DiseaseStatus::kPositive;
    const bool gt_blank = gt[k] == DiseaseStatus::kBlank;
    const bool pred_pos = pred[k] == DiseaseStatus::kPositive;
    const bool pred_blank = pred[k] == DiseaseStatus::kBlank;
    if (gt_pos && pred_pos) {
      g.tp.push_back(k);
    } else if (gt_pos && pred_blank) {
      g.fn.push_back(k);
    } else if (gt_blank && pred_pos) {
      g.fp.push_back(k);
    }
  }
  return g;
}

void GearConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("GEAR epsilon must be positive");
}

namespace {

void check_shapes(const ResponseMapSet& pred, const ResponseMapSet& gt) {
  if (!pred.same_shape(gt)) {
    throw ArityError("response map shapes differ: " + std::to_string(pred.height()) + "x" +
                     std::to_string(pred.width()) + "x" + std::to_string(pred.channels()) + " vs " +
                     std::to_string(gt.height()) + "x" + std::to_string(gt.width()) + "x" +
                     std::to_string(gt.channels()));
  }
}

void check_channels(const ResponseMapSet& maps, const std::vector<std::size_t>& channels) {
  for (auto k : channels) {
    if (k >= maps.channels()) throw ArityError("group index " + std::to_string(k) + " exceeds channel count");
  }
}

}  // namespace

double dice_loss(const ResponseMapSet& pred, const ResponseMapSet& gt, const std::vector<std::size_t>& channels,
                 double epsilon) {
  check_shapes(pred, gt);
  check_channels(pred, channels);
  if (channels.empty()) return 0.0;
  const auto& kern = simd::active();
  const std::size_t n = pred.plane_size();
  double ratio_sum = 0.0;
  for (auto k : channels) {
    auto p = pred.channel(k);
    auto g = gt.channel(k);
    double overlap = kern.dot(p.data(), g.data(), n);
    double denom = kern.sum_sq(p.data(), n) + kern.sum_sq(g.data(), n);
    // 2<p,g> <= |p|^2 + |g|^2; clamp the rounding excess.
    ratio_sum += std::min(1.0, (2.0 * overlap + epsilon) / (denom + epsilon));
  }
  return std::max(0.0, 1.0 - ratio_sum / static_cast<double>(channels.size()));
}

double mse_loss(const ResponseMapSet& pred, const ResponseMapSet& gt, const std::vector<std::size_t>& channels) {
  check_shapes(pred, gt);
  check_channels(pred, channels);
  if (channels.empty()) return 0.0;
  const auto& kern = simd::active();
  const std::size_t n = pred.plane_size();
  double sum = 0.0;
  for (auto k : channels) {
    sum += kern.sum_sq_diff(pred.channel(k).data(), gt.channel(k).data(), n) / static_cast<double>(n);
  }
  return sum / static_cast<double>(channels.size());
}

double loss_tp(const ResponseMapSet& pred, const ResponseMapSet& gt, const GroupPartition& part,
               const GearConfig& cfg) {
  cfg.validate();
  return cfg.tp_variant == OverlapVariant::kDice ? dice_loss(pred, gt, part.tp, cfg.epsilon)
                                                 : mse_loss(pred, gt, part.tp);
}

double loss_fn(const ResponseMapSet& pred, const ResponseMapSet& gt, const GroupPartition& part,
               const GearConfig& cfg) {
  cfg.validate();
  double v = cfg.fn_variant == OverlapVariant::kMse ? mse_loss(pred, gt, part.fn)
                                                    : dice_loss(pred, gt, part.fn, cfg.epsilon);
  return cfg.fn_sign == FnSign::kLiteral ? -v : v;
}

double loss_fp(const ResponseMapSet& pred, const GroupPartition& part, const GearConfig& cfg) {
  cfg.validate();
  check_channels(pred, part.fp);
  if (part.fp.empty()) return 0.0;
  const auto& kern = simd::active();
  const std::size_t n = pred.plane_size();
  double sum = 0.0;
  for (auto k : part.fp) sum += kern.sum_sq(pred.channel(k).data(), n) / static_cast<double>(n);
  return sum / static_cast<double>(part.fp.size());
}

GearLossBreakdown compute_losses(const ResponseMapSet& pred, const ResponseMapSet& gt, const GroupPartition& part,
                                 const GearConfig& cfg) {
  check_shapes(pred, gt);
  GearLossBreakdown b;
  b.l_tp = loss_tp(pred, gt, part, cfg);
  b.l_fn = loss_fn(pred, gt, part, cfg);
  b.l_fp = loss_fp(pred, part, cfg);
  b.l_r = b.l_tp + b.l_fn + b.l_fp;
  b.epsilon = cfg.epsilon;
  b.groups = part;
  return b;
}

StageError::StageError(std::string stage, const std::exception& cause)
    : Error(stage + ": " + cause.what()), stage_(std::move(stage)) {}

GearLossBreakdown gear_reward(const std::string& pred_report, const std::string& gt_report,
                              const std::string& study_id, const std::string& image_ref, const GearBackends& backends,
                              const GearConfig& cfg) {
  if (!backends.labeler || !backends.grounder) throw ConfigError("gear_reward needs labeler and grounder backends");
  cfg.validate();

  auto staged = [](const char* stage, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e);
    }
  };

  auto pred_status = staged("label predicted report", [&] { return backends.labeler->extract(pred_report); });
  auto gt_status = staged("label ground-truth report", [&] { return backends.labeler->extract(gt_report); });
  auto part = staged("partition", [&] { return partition(pred_status, gt_status); });
  auto pred_maps = staged("ground predicted report", [&] {
    auto m = backends.grounder->ground({study_id, image_ref, pred_report});
    m.validate();
    return m;
  });
  auto gt_maps = staged("ground ground-truth report", [&] {
    auto m = backends.grounder->ground({study_id, image_ref, gt_report});
    m.validate();
    return m;
  });
  return staged("losses", [&] { return compute_losses(pred_maps, gt_maps, part, cfg); });
}

std::string to_json(const GearLossBreakdown& b) {
  nlohmann::ordered_json j;
  j["l_tp"] = b.l_tp;
  j["l_fn"] = b.l_fn;
  j["l_fp"] = b.l_fp;
  j["l_r"] = b.l_r;
  j["tp"] = b.groups.tp;
  j["fn"] = b.groups.fn;
  j["fp"] = b.groups.fp;
  return j.dump();
}

}  // namespace escrl::gear
