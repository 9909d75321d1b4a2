#include "gar/phenotypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gar/errors.hpp"
#include "gar/rng.hpp"

namespace gar {
namespace {

using Matrix = std::vector<double>;  // n x n, row-major

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Matrix distance_matrix(const std::vector<std::vector<double>>& points) {
  const std::size_t n = points.size();
  Matrix d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != points[0].size()) {
      throw std::invalid_argument("kmedoids: points differ in dimension");
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      d[i * n + j] = d[j * n + i] = l2(points[i], points[j]);
    }
  }
  return d;
}

// Nearest medoid per point (lowest cluster index on ties) and total cost.
double assign(const Matrix& d, std::size_t n, std::span<const std::size_t> medoids,
              std::vector<std::size_t>& assignment) {
  assignment.assign(n, 0);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      const double v = d[i * n + medoids[c]];
      if (v < best) {
        best = v;
        assignment[i] = c;
      }
    }
    cost += best;
  }
  return cost;
}

double cost_of(const Matrix& d, std::size_t n, std::span<const std::size_t> medoids) {
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m : medoids) best = std::min(best, d[i * n + m]);
    cost += best;
  }
  return cost;
}

std::vector<std::size_t> plus_plus_init(const Matrix& d, std::size_t n,
                                        std::size_t k, Rng& rng) {
  std::vector<std::size_t> medoids{rng.below(n)};
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = d[i * n + medoids[0]];
  while (medoids.size() < k) {
    double total = 0.0;
    for (double v : nearest) total += v * v;
    std::size_t pick = n;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= nearest[i] * nearest[i];
        if (r < 0.0 && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {  // rounding left r >= 0; take the last candidate
        for (std::size_t i = n; i-- > 0;) {
          if (nearest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // All remaining points coincide with a medoid.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (std::find(medoids.begin(), medoids.end(), i) == medoids.end()) pick = i;
      }
    }
    medoids.push_back(pick);
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], d[i * n + pick]);
    }
  }
  return medoids;
}

std::string fmt_category(BehaviorCategory c) { return std::string(category_name(c)); }

}  // namespace

std::vector<AttendedFeature> collect_attended_features(
    const ParamMap& params, const ModelConfig& cfg,
    std::span<const WindowSample> windows, BehaviorCategory category,
    double floor) {
  if (!has_person_attention(cfg.variant)) {
    throw ConfigError("phenotype extraction requires person attention; variant " +
                      std::string(variant_name(cfg.variant)) + " has none");
  }
  std::vector<AttendedFeature> out;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const WindowSample& win = windows[w];
    if (!win.label || !win.categories.contains(category)) continue;
    const AttentionRecord rec = forward(params, cfg, win);
    const double prob = rec.probability();
    if (prob < floor) continue;
    std::size_t best = 0;
    for (std::size_t p = 1; p < rec.a_person.size(); ++p) {
      if (rec.a_person[p] > rec.a_person[best]) best = p;
    }
    AttendedFeature f;
    f.window_index = w;
    f.person_index = best;
    f.track_id = win.persons[best].track_id;
    f.probability = prob;
    f.attention = rec.a_person[best];
    const std::size_t width = rec.person_features.size() / rec.person_features.dim(0);
    const double* src = rec.person_features.data() + best * width;
    f.feature.assign(src, src + width);
    out.push_back(std::move(f));
  }
  return out;
}

double medoid_cost(const std::vector<std::vector<double>>& points,
                   std::span<const std::size_t> medoids) {
  double cost = 0.0;
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m : medoids) best = std::min(best, l2(p, points.at(m)));
    cost += best;
  }
  return cost;
}

KMedoidsResult kmedoids(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  const std::size_t n = points.size();
  if (k < 1) throw ConfigError("kmedoids: k must be >= 1");
  if (k > n) {
    throw ConfigError("kmedoids: k = " + std::to_string(k) + " exceeds " +
                      std::to_string(n) + " points");
  }
  const Matrix d = distance_matrix(points);
  Rng rng(seed);
  KMedoidsResult r;
  r.medoids = plus_plus_init(d, n, k, rng);
  r.cost = cost_of(d, n, r.medoids);
  r.cost_history.push_back(r.cost);

  std::vector<char> is_medoid(n, 0);
  for (std::size_t m : r.medoids) is_medoid[m] = 1;
  std::vector<std::size_t> trial;
  while (r.iterations < max_iters) {
    double best_cost = r.cost;
    std::size_t best_slot = k, best_point = n;
    for (std::size_t slot = 0; slot < k; ++slot) {
      for (std::size_t o = 0; o < n; ++o) {
        if (is_medoid[o]) continue;
        trial = r.medoids;
        trial[slot] = o;
        const double c = cost_of(d, n, trial);
        // Require a relative gain so float noise cannot cycle swaps.
        if (c < best_cost - 1e-12 * std::max(1.0, best_cost)) {
          best_cost = c;
          best_slot = slot;
          best_point = o;
        }
      }
    }
    if (best_slot == k) {
      r.converged = true;
      break;
    }
    is_medoid[r.medoids[best_slot]] = 0;
    is_medoid[best_point] = 1;
    r.medoids[best_slot] = best_point;
    r.cost = best_cost;
    r.cost_history.push_back(r.cost);
    ++r.iterations;
  }
  r.cost = assign(d, n, r.medoids, r.assignment);
  return r;
}

double silhouette(const std::vector<std::vector<double>>& points,
                  std::span<const std::size_t> assignment, std::size_t k) {
  const std::size_t n = points.size();
  if (n == 0) return 0.0;
  const Matrix d = distance_matrix(points);
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t c : assignment) ++sizes.at(c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t own = assignment[i];
    if (sizes[own] <= 1) continue;  // singleton: s = 0
    std::vector<double> sum(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) sum[assignment[j]] += d[i * n + j];
    const double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == own || sizes[c] == 0) continue;
      b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    }
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

std::vector<SilhouettePoint> silhouette_sweep(
    const std::vector<std::vector<double>>& points, std::uint64_t seed) {
  std::vector<SilhouettePoint> out;
  if (points.size() < 3) return out;
  const std::size_t hi = std::min<std::size_t>(10, points.size() - 1);
  for (std::size_t k = 2; k <= hi; ++k) {
    const KMedoidsResult r = kmedoids(points, k, seed);
    out.push_back({k, silhouette(points, r.assignment, k)});
  }
  return out;
}

std::vector<std::optional<Box>> attended_boxes(const NormalizedTrack& person) {
  std::vector<std::optional<Box>> boxes(person.frames);
  for (std::size_t t = 0; t < person.frames; ++t) {
    if (!person.present[t]) continue;
    bool any = false;
    Box b{std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < kJointCount; ++j) {
      if (!person.is_valid(t, j)) continue;
      const auto [x, y] = person.pixel(t, j);
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
      any = true;
    }
    if (!any) continue;
    const double px = kBoxPadding * (b.x1 - b.x0);
    const double py = kBoxPadding * (b.y1 - b.y0);
    b.x0 -= px;
    b.x1 += px;
    b.y0 -= py;
    b.y1 += py;
    boxes[t] = b;
  }
  return boxes;
}

PhenotypeResult extract_phenotype(const ParamMap& params, const ModelConfig& cfg,
                                  std::span<const WindowSample> windows,
                                  BehaviorCategory category,
                                  const PhenotypeOptions& opts) {
  const auto feats =
      collect_attended_features(params, cfg, windows, category, opts.floor);
  if (feats.size() < opts.k || opts.k < 1) {
    throw ConfigError("phenotype for " + fmt_category(category) + " needs k = " +
                      std::to_string(opts.k) + " qualifying windows, found " +
                      std::to_string(feats.size()));
  }
  std::vector<std::vector<double>> points;
  points.reserve(feats.size());
  for (const auto& f : feats) points.push_back(f.feature);
  const KMedoidsResult km = kmedoids(points, opts.k, opts.seed, opts.max_iters);

  PhenotypeResult r;
  r.category = category;
  r.qualifying = feats.size();
  r.k = opts.k;
  r.cost_history = km.cost_history;
  for (std::size_t c = 0; c < opts.k; ++c) {
    const AttendedFeature& m = feats[km.medoids[c]];
    PhenotypeCluster cl;
    cl.medoid_window = m.window_index;
    cl.video_id = windows[m.window_index].video_id;
    cl.end_frame = windows[m.window_index].end_frame;
    cl.medoid_track_id = m.track_id;
    cl.members = static_cast<std::size_t>(
        std::count(km.assignment.begin(), km.assignment.end(), c));
    r.clusters.push_back(cl);
  }
  for (std::size_t c = 1; c < r.clusters.size(); ++c) {
    if (r.clusters[c].members > r.clusters[r.representative_cluster].members) {
      r.representative_cluster = c;
    }
  }
  const AttendedFeature& rep = feats[km.medoids[r.representative_cluster]];
  const WindowSample& win = windows[rep.window_index];
  r.representative_window = rep.window_index;
  r.representative_track_id = rep.track_id;
  r.frames = win.span();
  r.boxes = attended_boxes(win.persons[rep.person_index]);
  if (category == BehaviorCategory::kElopement ||
      category == BehaviorCategory::kOutOfSeat) {
    r.caveat =
        "category is defined by a person's absence; person attention can only "
        "select people who are still visible, so this representative may show "
        "bystanders rather than the behavior";
  }
  if (opts.silhouette_sweep) r.silhouette = silhouette_sweep(points, opts.seed);
  return r;
}

nlohmann::json phenotype_to_json(const PhenotypeResult& r) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : r.clusters) {
    clusters.push_back({{"medoid_window", c.medoid_window},
                        {"video_id", c.video_id},
                        {"end_frame", c.end_frame},
                        {"medoid_track_id", c.medoid_track_id},
                        {"members", c.members}});
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (std::size_t t = 0; t < r.boxes.size(); ++t) {
    if (!r.boxes[t]) continue;
    const Box& b = *r.boxes[t];
    boxes.push_back({{"frame", r.frames.first + static_cast<std::int64_t>(t)},
                     {"box", {b.x0, b.y0, b.x1, b.y1}}});
  }
  nlohmann::json j = {{"category", fmt_category(r.category)},
                      {"qualifying_windows", r.qualifying},
                      {"k", r.k},
                      {"clusters", clusters},
                      {"cost_history", r.cost_history},
                      {"representative",
                       {{"cluster", r.representative_cluster},
                        {"window", r.representative_window},
                        {"track_id", r.representative_track_id},
                        {"first_frame", r.frames.first},
                        {"last_frame", r.frames.last},
                        {"boxes", boxes}}}};
  j["caveat"] = r.caveat ? nlohmann::json(*r.caveat) : nlohmann::json(nullptr);
  if (!r.silhouette.empty()) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& p : r.silhouette) s.push_back({{"k", p.k}, {"score", p.score}});
    j["silhouette"] = s;
  }
  return j;
}

}  // namespace gar
