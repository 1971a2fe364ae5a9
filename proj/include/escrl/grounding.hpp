#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "escrl/http.hpp"
#include "escrl/labeler.hpp"
#include "escrl/types.hpp"

namespace escrl::grounding {

// H x W x K activations. Stored channel-planar (each disease channel is one
// contiguous H*W row-major block) so per-disease reductions run over
// contiguous memory; wire and cache formats use H x W x K order.
class ResponseMapSet {
 public:
  ResponseMapSet() = default;
  ResponseMapSet(std::size_t height, std::size_t width, std::size_t channels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }

  double& at(std::size_t h, std::size_t w, std::size_t k) { return data_[k * plane_size() + h * width_ + w]; }
  double at(std::size_t h, std::size_t w, std::size_t k) const { return data_[k * plane_size() + h * width_ + w]; }

  std::span<double> channel(std::size_t k) { return {data_.data() + k * plane_size(), plane_size()}; }
  std::span<const double> channel(std::size_t k) const { return {data_.data() + k * plane_size(), plane_size()}; }

  bool same_shape(const ResponseMapSet& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  // Throws ValidationError on non-finite or out-of-[0,1] values, or on a
  // zero dimension.
  void validate() const;

  bool operator==(const ResponseMapSet&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

// Inputs identifying one grounding call.
struct GroundingQuery {
  std::string study_id;
  std::string image_ref;
  std::string report;
};

class GroundingBackend {
 public:
  virtual ~GroundingBackend() = default;
  virtual ResponseMapSet ground(const GroundingQuery& query) const = 0;
};

enum class StatusSource {
  kPositiveOnly,          // blobs for positive diseases
  kPositiveOrUncertain,   // uncertain mentions also light up
};

struct SyntheticGrounderConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  double blob_sigma = 2.5;
  std::uint64_t seed_salt = 0;
  StatusSource status_source = StatusSource::kPositiveOnly;

  void validate() const;
};

// Labels the report and draws one Gaussian blob (peak exactly 1) per
// qualifying disease. The blob center depends only on (study_id, disease,
// seed_salt), so a disease lights up the same region whichever report
// mentions it.
class SyntheticGrounder final : public GroundingBackend {
 public:
  SyntheticGrounder(SyntheticGrounderConfig cfg, std::shared_ptr<const labeler::LabelerBackend> labeler);

  ResponseMapSet ground(const GroundingQuery& query) const override;
  ResponseMapSet ground_statuses(const std::string& study_id, const StatusVector& statuses) const;

  // Pixel (row, column) of the blob center for one disease.
  std::pair<std::size_t, std::size_t> blob_center(const std::string& study_id, std::size_t disease) const;

  const SyntheticGrounderConfig& config() const noexcept { return cfg_; }

 private:
  SyntheticGrounderConfig cfg_;
  std::shared_ptr<const labeler::LabelerBackend> labeler_;
};

// POST {"image_ref","report","labels","h","w"} -> {"maps": H x W x K}.
// Each channel is min-max normalized to [0,1]; constant channels become zero.
class RemoteGrounder final : public GroundingBackend {
 public:
  RemoteGrounder(DiseaseVocabulary vocab, std::size_t height, std::size_t width, net::Endpoint endpoint);

  ResponseMapSet ground(const GroundingQuery& query) const override;

 private:
  DiseaseVocabulary vocab_;
  std::size_t height_;
  std::size_t width_;
  net::Endpoint endpoint_;
};

// Per-channel min-max normalization in place.
void normalize_channels(ResponseMapSet& maps);

// Cache file: uint32 H, W, K (little-endian) then H*W*K float32 values in
// H x W x K row-major order, little-endian.
void write_map_cache(const std::filesystem::path& path, const ResponseMapSet& maps);
ResponseMapSet read_map_cache(const std::filesystem::path& path);

// Wraps a backend with the on-disk cache, one file per (study, report hash).
class CachingGrounder final : public GroundingBackend {
 public:
  CachingGrounder(std::shared_ptr<const GroundingBackend> inner, std::filesystem::path dir);

  ResponseMapSet ground(const GroundingQuery& query) const override;
  std::filesystem::path cache_path(const GroundingQuery& query) const;

 private:
  std::shared_ptr<const GroundingBackend> inner_;
  std::filesystem::path dir_;
};

}  // namespace escrl::grounding
