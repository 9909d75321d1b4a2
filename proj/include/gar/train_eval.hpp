#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gar/adam.hpp"
#include "gar/model.hpp"
#include "gar/windows.hpp"
#include "json.hpp"

namespace gar {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  double positive_weight = 1.0;
};

void validate(const TrainConfig& cfg);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

// Counts epochs without a strict decrease of the validation loss.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_loss` is a new best.
  bool update(double val_loss);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 = none

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct TrainResult {
  ParamMap params;  // from the best-validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::vector<std::string> warnings;
};

nlohmann::json train_result_summary(const TrainResult& r);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_model(std::span<const WindowSample> windows,
                        std::span<const std::size_t> train_idx,
                        std::span<const std::size_t> val_idx,
                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

TrainResult train_fold(std::span<const WindowSample> windows,
                       const FoldPlan& plan, std::size_t fold,
                       const ModelConfig& model_cfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

// Mean weighted BCE of the listed windows, without gradients.
double mean_loss(const ParamMap& params, const ModelConfig& cfg,
                 std::span<const WindowSample> windows,
                 std::span<const std::size_t> idx, double positive_weight = 1.0);

struct WindowPrediction {
  std::size_t index = 0;
  bool label = false;
  bool predicted = false;
  double probability = 0.0;
  CategorySet categories;
};

std::vector<WindowPrediction> predict_windows(
    const ParamMap& params, const ModelConfig& cfg,
    std::span<const WindowSample> windows, std::span<const std::size_t> idx,
    double threshold = 0.5);

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

struct FoldMetrics {
  Confusion confusion;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Precision or recall had a zero denominator and was set to 0.
  bool degenerate = false;
};

FoldMetrics metrics_from_confusion(const Confusion& c);
FoldMetrics metrics_from_predictions(std::span<const WindowPrediction> preds);

FoldMetrics evaluate(const ParamMap& params, const ModelConfig& cfg,
                     std::span<const WindowSample> windows,
                     std::span<const std::size_t> idx, double threshold = 0.5);

struct CvSummary {
  double f1_mean = 0.0;
  double f1_sd = 0.0;  // sample standard deviation
  double f1_ci95 = 0.0;
  std::size_t folds = 0;
};

// Fold-level normal approximation: 1.96 * sd / sqrt(folds). Needs >= 2 folds.
CvSummary aggregate_cv(std::span<const double> fold_f1);

struct BootstrapCi {
  double f1 = 0.0;  // pooled point estimate
  double lower = 0.0;
  double upper = 0.0;
  double half_width = 0.0;
  std::size_t resamples = 0;
};

inline constexpr std::size_t kBootstrapResamples = 10000;

// Percentile interval of pooled window-level F1 over resamples with
// replacement.
BootstrapCi bootstrap_f1(std::span<const WindowPrediction> pooled,
                         std::size_t resamples, std::uint64_t seed);

struct CategoryTpr {
  std::size_t positives = 0;  // positive windows carrying the category
  std::size_t detected = 0;
  std::optional<double> rate;  // absent when positives == 0
};

std::map<BehaviorCategory, CategoryTpr> tpr_per_category(
    std::span<const WindowPrediction> preds);

struct RuntimeStats {
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  std::size_t runs = 0;
  std::size_t warmups = 0;
  std::size_t clip_count = 0;
  std::size_t window_count = 0;
};

inline constexpr std::size_t kBenchmarkWarmups = 2;
inline constexpr std::size_t kBenchmarkBatch = 16;

// Times full inference passes over all clips (windows processed in batches
// of 16); warmup passes are excluded from the statistics.
RuntimeStats benchmark_inference(
    const ParamMap& params, const ModelConfig& cfg,
    std::span<const std::vector<WindowSample>> clips, std::size_t runs,
    std::size_t warmups = kBenchmarkWarmups);

struct EvalReport {
  std::string variant;
  std::string task;
  double threshold = 0.5;
  std::vector<FoldMetrics> folds;
  CvSummary summary;
  std::string ci_method = "fold_normal";
  std::optional<BootstrapCi> bootstrap;
  std::map<BehaviorCategory, CategoryTpr> tpr;
  std::optional<RuntimeStats> runtime;
  nlohmann::json inputs;  // content hashes of checkpoints and manifest
};

nlohmann::json eval_report_to_json(const EvalReport& r);
nlohmann::json runtime_stats_to_json(const RuntimeStats& s);

// Plain-text table: variant, heads, F1 +/- CI, runtime, then per-fold rows
// and per-category TPR.
std::string format_results_table(const EvalReport& r);

}  // namespace gar
