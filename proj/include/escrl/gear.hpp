#pragma once

#include <memory>
#include <string>
#include <vector>

#include "escrl/error.hpp"
#include "escrl/grounding.hpp"
#include "escrl/labeler.hpp"
#include "escrl/types.hpp"

namespace escrl::gear {

// Disease indices (ascending) in each group.
struct GroupPartition {
  std::vector<std::size_t> tp;
  std::vector<std::size_t> fn;
  std::vector<std::size_t> fp;

  bool operator==(const GroupPartition&) const = default;
};

// tp: positive in both; fn: positive in gt, blank in pred; fp: blank in gt,
// positive in pred. Negative and uncertain statuses never enter a group.
GroupPartition partition(const StatusVector& pred, const StatusVector& gt);

enum class OverlapVariant { kDice, kMse };
enum class FnSign { kPositive, kLiteral };

struct GearConfig {
  double epsilon = 1e-6;
  OverlapVariant tp_variant = OverlapVariant::kDice;
  OverlapVariant fn_variant = OverlapVariant::kMse;
  // kLiteral negates the false-negative term.
  FnSign fn_sign = FnSign::kPositive;

  void validate() const;
};

struct GearLossBreakdown {
  double l_tp = 0.0;
  double l_fn = 0.0;
  double l_fp = 0.0;
  double l_r = 0.0;
  double epsilon = 0.0;
  GroupPartition groups;
};

// Soft-Dice loss 1 - mean_k (2<p,g> + eps) / (|p|^2 + |g|^2 + eps) over the
// given channels; 0 for an empty channel list.
double dice_loss(const grounding::ResponseMapSet& pred, const grounding::ResponseMapSet& gt,
                 const std::vector<std::size_t>& channels, double epsilon);
// mean_k mean_{h,w} (p - g)^2; 0 for an empty channel list.
double mse_loss(const grounding::ResponseMapSet& pred, const grounding::ResponseMapSet& gt,
                const std::vector<std::size_t>& channels);

double loss_tp(const grounding::ResponseMapSet& pred, const grounding::ResponseMapSet& gt,
               const GroupPartition& part, const GearConfig& cfg);
double loss_fn(const grounding::ResponseMapSet& pred, const grounding::ResponseMapSet& gt,
               const GroupPartition& part, const GearConfig& cfg);
// Response energy: mean_k mean_{h,w} p^2 over fp channels.
double loss_fp(const grounding::ResponseMapSet& pred, const GroupPartition& part, const GearConfig& cfg);

GearLossBreakdown compute_losses(const grounding::ResponseMapSet& pred, const grounding::ResponseMapSet& gt,
                                 const GroupPartition& part, const GearConfig& cfg);

struct GearBackends {
  std::shared_ptr<const labeler::LabelerBackend> labeler;
  std::shared_ptr<const grounding::GroundingBackend> grounder;
};

// Thrown by gear_reward, naming the pipeline stage that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::exception& cause);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// Label both reports, partition, ground both reports against the same image,
// then combine the three group losses.
GearLossBreakdown gear_reward(const std::string& pred_report, const std::string& gt_report,
                              const std::string& study_id, const std::string& image_ref, const GearBackends& backends,
                              const GearConfig& cfg);

// {"l_tp","l_fn","l_fp","l_r","tp","fn","fp"} on one line.
std::string to_json(const GearLossBreakdown& b);

}  // namespace escrl::gear
