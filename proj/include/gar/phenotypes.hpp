#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gar/model.hpp"
#include "gar/windows.hpp"
#include "json.hpp"

namespace gar {

struct AttendedFeature {
  std::size_t window_index = 0;
  int track_id = 0;
  std::size_t person_index = 0;
  double probability = 0.0;
  double attention = 0.0;  // a_person of the attended person
  std::vector<double> feature;  // flattened 17 x C pooled features
};

// Windows labeled positive and carrying `category` whose predicted
// probability reaches `floor`; one feature per window, taken from the person
// with the highest person attention (lowest index on ties).
// Throws ConfigError for variants without person attention.
std::vector<AttendedFeature> collect_attended_features(
    const ParamMap& params, const ModelConfig& cfg,
    std::span<const WindowSample> windows, BehaviorCategory category,
    double floor);

struct KMedoidsResult {
  std::vector<std::size_t> medoids;     // point indices, one per cluster
  std::vector<std::size_t> assignment;  // cluster index per point
  double cost = 0.0;                    // sum of distances to medoids
  std::vector<double> cost_history;     // after init and after each swap
  std::size_t iterations = 0;
  bool converged = false;
};

inline constexpr std::size_t kDefaultKMedoidsIters = 100;

// L2 k-medoids: k-medoids++ seeding, then best-improvement swaps (PAM)
// until no swap lowers the cost or max_iters swaps were made.
KMedoidsResult kmedoids(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed,
                        std::size_t max_iters = kDefaultKMedoidsIters);

// Total distance of every point to the nearest of `medoids`.
double medoid_cost(const std::vector<std::vector<double>>& points,
                   std::span<const std::size_t> medoids);

// Mean silhouette width of a clustering (0 for singleton clusters).
double silhouette(const std::vector<std::vector<double>>& points,
                  std::span<const std::size_t> assignment, std::size_t k);

struct SilhouettePoint {
  std::size_t k = 0;
  double score = 0.0;
};

// k in [2, min(10, n - 1)].
std::vector<SilhouettePoint> silhouette_sweep(
    const std::vector<std::vector<double>>& points, std::uint64_t seed);

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

inline constexpr double kBoxPadding = 0.1;

// Per-frame pixel box around the track's valid joints, each side padded by
// 10% of the box extent; empty where the person is absent.
std::vector<std::optional<Box>> attended_boxes(const NormalizedTrack& person);

struct PhenotypeCluster {
  std::size_t medoid_window = 0;
  std::string video_id;
  std::int64_t end_frame = 0;
  int medoid_track_id = 0;
  std::size_t members = 0;
};

struct PhenotypeResult {
  BehaviorCategory category = BehaviorCategory::kRestrictedRepetitive;
  std::size_t qualifying = 0;
  std::size_t k = 0;
  std::vector<PhenotypeCluster> clusters;
  std::vector<double> cost_history;
  std::size_t representative_cluster = 0;
  std::size_t representative_window = 0;
  int representative_track_id = 0;
  FrameSpan frames{0, -1};
  std::vector<std::optional<Box>> boxes;
  // Set for categories defined by a person's absence, where attending to
  // the people still present is known to be unreliable.
  std::optional<std::string> caveat;
  std::vector<SilhouettePoint> silhouette;
};

struct PhenotypeOptions {
  std::size_t k = 5;
  double floor = 0.8;
  std::uint64_t seed = 0;
  std::size_t max_iters = kDefaultKMedoidsIters;
  bool silhouette_sweep = false;
};

PhenotypeResult extract_phenotype(const ParamMap& params, const ModelConfig& cfg,
                                  std::span<const WindowSample> windows,
                                  BehaviorCategory category,
                                  const PhenotypeOptions& opts);

nlohmann::json phenotype_to_json(const PhenotypeResult& r);

}  // namespace gar
