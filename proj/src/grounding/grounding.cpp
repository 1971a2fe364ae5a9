#include "escrl/grounding.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "escrl/error.hpp"
#include "escrl/hash.hpp"

namespace escrl::grounding {

ResponseMapSet::ResponseMapSet(std::size_t height, std::size_t width, std::size_t channels)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, 0.0) {}

void ResponseMapSet::validate() const {
  if (height_ == 0 || width_ == 0 || channels_ == 0) throw ValidationError("response maps have a zero dimension");
  for (double v : data_) {
    if (!std::isfinite(v)) throw ValidationError("response map contains a non-finite value");
    if (v < 0.0 || v > 1.0) throw ValidationError("response map value outside [0, 1]");
  }
}

void SyntheticGrounderConfig::validate() const {
  if (height < 4 || width < 4) throw ConfigError("synthetic grounder maps must be at least 4x4");
  if (!(blob_sigma > 0.0)) throw ConfigError("blob_sigma must be positive");
}

SyntheticGrounder::SyntheticGrounder(SyntheticGrounderConfig cfg,
                                     std::shared_ptr<const labeler::LabelerBackend> labeler)
    : cfg_(cfg), labeler_(std::move(labeler)) {
  cfg_.validate();
  if (!labeler_) throw ConfigError("synthetic grounder needs a labeler");
}

std::pair<std::size_t, std::size_t> SyntheticGrounder::blob_center(const std::string& study_id,
                                                                    std::size_t disease) const {
  auto h = mix64(Fnv1a{}.add(study_id).add(static_cast<std::uint64_t>(disease)).add(cfg_.seed_salt).value());
  return {static_cast<std::size_t>(h % cfg_.height), static_cast<std::size_t>((h >> 32) % cfg_.width)};
}

ResponseMapSet SyntheticGrounder::ground_statuses(const std::string& study_id, const StatusVector& statuses) const {
  ResponseMapSet maps(cfg_.height, cfg_.width, statuses.size());
  const double inv = 1.0 / (2.0 * cfg_.blob_sigma * cfg_.blob_sigma);
  for (std::size_t k = 0; k < statuses.size(); ++k) {
    bool lit = statuses[k] == DiseaseStatus::kPositive ||
               (cfg_.status_source == StatusSource::kPositiveOrUncertain && statuses[k] == DiseaseStatus::kUncertain);
    if (!lit) continue;
    auto [cy, cx] = blob_center(study_id, k);
    for (std::size_t h = 0; h < cfg_.height; ++h) {
      for (std::size_t w = 0; w < cfg_.width; ++w) {
        double dy = static_cast<double>(h) - static_cast<double>(cy);
        double dx = static_cast<double>(w) - static_cast<double>(cx);
        maps.at(h, w, k) = std::exp(-(dy * dy + dx * dx) * inv);
      }
    }
  }
  return maps;
}

ResponseMapSet SyntheticGrounder::ground(const GroundingQuery& query) const {
  return ground_statuses(query.study_id, labeler_->extract(query.report));
}

void normalize_channels(ResponseMapSet& maps) {
  for (std::size_t k = 0; k < maps.channels(); ++k) {
    auto ch = maps.channel(k);
    double lo = ch[0], hi = ch[0];
    for (double v : ch) {
      if (!std::isfinite(v)) throw ProtocolError("grounder returned a non-finite activation");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      std::fill(ch.begin(), ch.end(), 0.0);
      continue;
    }
    const double scale = 1.0 / (hi - lo);
    for (double& v : ch) v = std::clamp((v - lo) * scale, 0.0, 1.0);
  }
}

RemoteGrounder::RemoteGrounder(DiseaseVocabulary vocab, std::size_t height, std::size_t width,
                               net::Endpoint endpoint)
    : vocab_(std::move(vocab)), height_(height), width_(width), endpoint_(std::move(endpoint)) {
  if (height_ == 0 || width_ == 0) throw ConfigError("remote grounder map size must be positive");
}

ResponseMapSet RemoteGrounder::ground(const GroundingQuery& query) const {
  nlohmann::json req = {{"image_ref", query.image_ref},
                        {"report", query.report},
                        {"labels", vocab_.labels()},
                        {"h", height_},
                        {"w", width_}};
  auto body = net::post_json(endpoint_, req.dump());
  nlohmann::json res;
  try {
    res = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("grounder returned invalid JSON: ") + e.what());
  }
  if (!res.is_object() || !res.contains("maps") || !res["maps"].is_array()) {
    throw ProtocolError("grounder response lacks a \"maps\" array");
  }
  const auto& rows = res["maps"];
  const std::size_t k_count = vocab_.size();
  if (rows.size() != height_) {
    throw ProtocolError("grounder returned " + std::to_string(rows.size()) + " rows, expected " +
                        std::to_string(height_));
  }
  ResponseMapSet maps(height_, width_, k_count);
  for (std::size_t h = 0; h < height_; ++h) {
    const auto& row = rows[h];
    if (!row.is_array() || row.size() != width_) throw ProtocolError("grounder row " + std::to_string(h) + " has wrong width");
    for (std::size_t w = 0; w < width_; ++w) {
      const auto& px = row[w];
      if (!px.is_array() || px.size() != k_count) {
        throw ProtocolError("grounder pixel (" + std::to_string(h) + "," + std::to_string(w) + ") has wrong channel count");
      }
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!px[k].is_number()) throw ProtocolError("grounder activation is not a number");
        maps.at(h, w, k) = px[k].get<double>();
      }
    }
  }
  normalize_channels(maps);
  return maps;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("truncated map cache header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_map_cache(const std::filesystem::path& path, const ResponseMapSet& maps) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write map cache: " + path.string());
  put_u32(out, static_cast<std::uint32_t>(maps.height()));
  put_u32(out, static_cast<std::uint32_t>(maps.width()));
  put_u32(out, static_cast<std::uint32_t>(maps.channels()));
  for (std::size_t h = 0; h < maps.height(); ++h) {
    for (std::size_t w = 0; w < maps.width(); ++w) {
      for (std::size_t k = 0; k < maps.channels(); ++k) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(maps.at(h, w, k))));
      }
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

ResponseMapSet read_map_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read map cache: " + path.string());
  auto h_count = get_u32(in);
  auto w_count = get_u32(in);
  auto k_count = get_u32(in);
  ResponseMapSet maps(h_count, w_count, k_count);
  for (std::size_t h = 0; h < h_count; ++h) {
    for (std::size_t w = 0; w < w_count; ++w) {
      for (std::size_t k = 0; k < k_count; ++k) {
        maps.at(h, w, k) = static_cast<double>(std::bit_cast<float>(get_u32(in)));
      }
    }
  }
  return maps;
}

CachingGrounder::CachingGrounder(std::shared_ptr<const GroundingBackend> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  if (!inner_) throw ConfigError("caching grounder needs an inner backend");
}

std::filesystem::path CachingGrounder::cache_path(const GroundingQuery& query) const {
  std::string safe;
  for (char c : query.study_id) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    safe.push_back(ok ? c : '_');
  }
  auto key = Fnv1a{}.add(query.image_ref).add(std::string_view("\0", 1)).add(query.report).value();
  return dir_ / (safe + "_" + hex64(key) + ".drm");
}

ResponseMapSet CachingGrounder::ground(const GroundingQuery& query) const {
  auto path = cache_path(query);
  if (std::filesystem::exists(path)) return read_map_cache(path);
  auto maps = inner_->ground(query);
  std::filesystem::create_directories(dir_);
  write_map_cache(path, maps);
  // Hand back what a later cache hit would return.
  return read_map_cache(path);
}

}  // namespace escrl::grounding
