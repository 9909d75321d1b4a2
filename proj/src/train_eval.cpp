#include "gar/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "gar/errors.hpp"
#include "gar/rng.hpp"

namespace gar {
namespace {

double window_loss(double logit, bool label, double positive_weight) {
  return label ? positive_weight * ad::softplus(-logit) : ad::softplus(logit);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string heads_string(Variant v) {
  std::string s;
  if (has_joint_attention(v)) s += "J";
  if (has_time_attention(v)) s += "T";
  if (has_person_attention(v)) s += "P";
  return s.empty() ? "-" : s;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(cfg.positive_weight > 0.0)) {
    throw ConfigError("positive_weight must be > 0");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"seed", cfg.seed},
          {"positive_weight", cfg.positive_weight},
          {"optimizer", "adam"}};
}

bool EarlyStopper::update(double val_loss) {
  ++epochs_;
  if (best_epoch_ == 0 || val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

nlohmann::json train_result_summary(const TrainResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (const EpochLog& e : r.log) {
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_loss", e.val_loss},
                   {"improved", e.improved}});
  }
  return {{"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"epochs_run", r.log.size()},
          {"stopped_early", r.stopped_early},
          {"warnings", r.warnings},
          {"log", log}};
}

double mean_loss(const ParamMap& params, const ModelConfig& cfg,
                 std::span<const WindowSample> windows,
                 std::span<const std::size_t> idx, double positive_weight) {
  if (idx.empty()) throw std::invalid_argument("mean_loss: no windows");
  double total = 0.0;
  for (std::size_t i : idx) {
    const WindowSample& w = windows[i];
    total += window_loss(forward(params, cfg, w).logit, w.label, positive_weight);
  }
  return total / static_cast<double>(idx.size());
}

TrainResult train_model(std::span<const WindowSample> windows,
                        std::span<const std::size_t> train_idx,
                        std::span<const std::size_t> val_idx,
                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  validate(cfg);
  validate(model_cfg);
  if (train_idx.empty() || val_idx.empty()) {
    throw ConfigError("training needs nonempty train and validation splits");
  }
  TrainResult result;
  const auto positives = std::count_if(
      train_idx.begin(), train_idx.end(),
      [&](std::size_t i) { return windows[i].label; });
  if (positives == 0 || static_cast<std::size_t>(positives) == train_idx.size()) {
    result.warnings.push_back(
        std::string("training split holds a single class (all ") +
        (positives == 0 ? "negative" : "positive") + ")");
  }

  ParamMap params = init_params(model_cfg, cfg.seed);
  AdamState adam;
  adam.config.lr = cfg.lr;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  EarlyStopper stopper(cfg.patience);
  result.params = params;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_loss = 0.0;
    std::vector<const WindowSample*> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[order[i]]);
      LossAndGrads lg = loss_and_grads(
          params, model_cfg, std::span<const WindowSample* const>(batch),
          cfg.positive_weight);
      train_loss += lg.loss * static_cast<double>(batch.size());
      adam_step(params, lg.grads, adam);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_loss / static_cast<double>(order.size());
    entry.val_loss =
        mean_loss(params, model_cfg, windows, val_idx, cfg.positive_weight);
    entry.improved = stopper.update(entry.val_loss);
    if (entry.improved) result.params = params;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best();
  return result;
}

TrainResult train_fold(std::span<const WindowSample> windows,
                       const FoldPlan& plan, std::size_t fold,
                       const ModelConfig& model_cfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  if (fold >= plan.fold_count) {
    throw ConfigError("fold " + std::to_string(fold) + " out of range");
  }
  if (plan.block_of.size() != windows.size()) {
    throw ConfigError("fold plan covers " + std::to_string(plan.block_of.size()) +
                      " windows but " + std::to_string(windows.size()) +
                      " were given");
  }
  const auto train = plan.indices(fold, SplitRole::kTrain);
  const auto val = plan.indices(fold, SplitRole::kVal);
  return train_model(windows, train, val, model_cfg, cfg, on_epoch);
}

std::vector<WindowPrediction> predict_windows(
    const ParamMap& params, const ModelConfig& cfg,
    std::span<const WindowSample> windows, std::span<const std::size_t> idx,
    double threshold) {
  std::vector<WindowPrediction> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const WindowSample& w = windows[i];
    const Prediction p = predict(params, cfg, w, threshold);
    out.push_back({i, w.label, p.label, p.probability, w.categories});
  }
  return out;
}

FoldMetrics metrics_from_confusion(const Confusion& c) {
  FoldMetrics m;
  m.confusion = c;
  const std::size_t pred_pos = c.tp + c.fp;
  const std::size_t real_pos = c.tp + c.fn;
  m.degenerate = pred_pos == 0 || real_pos == 0;
  m.precision = pred_pos ? static_cast<double>(c.tp) / static_cast<double>(pred_pos) : 0.0;
  m.recall = real_pos ? static_cast<double>(c.tp) / static_cast<double>(real_pos) : 0.0;
  const double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  return m;
}

FoldMetrics metrics_from_predictions(std::span<const WindowPrediction> preds) {
  Confusion c;
  for (const WindowPrediction& p : preds) {
    if (p.label && p.predicted) ++c.tp;
    else if (!p.label && p.predicted) ++c.fp;
    else if (p.label && !p.predicted) ++c.fn;
    else ++c.tn;
  }
  return metrics_from_confusion(c);
}

FoldMetrics evaluate(const ParamMap& params, const ModelConfig& cfg,
                     std::span<const WindowSample> windows,
                     std::span<const std::size_t> idx, double threshold) {
  if (idx.empty()) throw std::invalid_argument("evaluate: empty test split");
  const auto preds = predict_windows(params, cfg, windows, idx, threshold);
  return metrics_from_predictions(preds);
}

CvSummary aggregate_cv(std::span<const double> fold_f1) {
  if (fold_f1.size() < 2) {
    throw std::invalid_argument("aggregate_cv needs at least 2 folds");
  }
  CvSummary s;
  s.folds = fold_f1.size();
  const double n = static_cast<double>(s.folds);
  s.f1_mean = std::accumulate(fold_f1.begin(), fold_f1.end(), 0.0) / n;
  double ss = 0.0;
  for (double f : fold_f1) ss += (f - s.f1_mean) * (f - s.f1_mean);
  s.f1_sd = std::sqrt(ss / (n - 1.0));
  s.f1_ci95 = 1.96 * s.f1_sd / std::sqrt(n);
  return s;
}

BootstrapCi bootstrap_f1(std::span<const WindowPrediction> pooled,
                         std::size_t resamples, std::uint64_t seed) {
  if (pooled.empty()) throw std::invalid_argument("bootstrap_f1: no predictions");
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  BootstrapCi ci;
  ci.resamples = resamples;
  ci.f1 = metrics_from_predictions(pooled).f1;
  Rng rng(seed);
  std::vector<double> f1s(resamples);
  for (double& f : f1s) {
    Confusion c;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      const WindowPrediction& p = pooled[rng.below(pooled.size())];
      if (p.label && p.predicted) ++c.tp;
      else if (!p.label && p.predicted) ++c.fp;
      else if (p.label && !p.predicted) ++c.fn;
      else ++c.tn;
    }
    f = metrics_from_confusion(c).f1;
  }
  std::sort(f1s.begin(), f1s.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    return f1s[lo] + (pos - static_cast<double>(lo)) * (f1s[hi] - f1s[lo]);
  };
  ci.lower = quantile(0.025);
  ci.upper = quantile(0.975);
  ci.half_width = 0.5 * (ci.upper - ci.lower);
  return ci;
}

std::map<BehaviorCategory, CategoryTpr> tpr_per_category(
    std::span<const WindowPrediction> preds) {
  std::map<BehaviorCategory, CategoryTpr> out;
  for (BehaviorCategory c : kAllCategories) out[c];
  for (const WindowPrediction& p : preds) {
    if (!p.label) continue;
    for (BehaviorCategory c : p.categories) {
      CategoryTpr& t = out[c];
      ++t.positives;
      if (p.predicted) ++t.detected;
    }
  }
  for (auto& [c, t] : out) {
    if (t.positives > 0) {
      t.rate = static_cast<double>(t.detected) / static_cast<double>(t.positives);
    }
  }
  return out;
}

RuntimeStats benchmark_inference(const ParamMap& params, const ModelConfig& cfg,
                                 std::span<const std::vector<WindowSample>> clips,
                                 std::size_t runs, std::size_t warmups) {
  if (clips.empty()) throw std::invalid_argument("benchmark: no clips");
  if (runs < 1) throw ConfigError("benchmark needs at least one run");
  RuntimeStats s;
  s.runs = runs;
  s.warmups = warmups;
  s.clip_count = clips.size();
  std::vector<Tensor> inputs;
  for (const auto& clip : clips) {
    for (const WindowSample& w : clip) inputs.push_back(window_input(w));
  }
  s.window_count = inputs.size();
  double sink = 0.0;
  auto one_pass = [&] {
    for (std::size_t start = 0; start < inputs.size(); start += kBenchmarkBatch) {
      const std::size_t end = std::min(inputs.size(), start + kBenchmarkBatch);
      for (std::size_t i = start; i < end; ++i) {
        sink += forward_input(params, cfg, inputs[i]).logit;
      }
    }
  };
  for (std::size_t i = 0; i < warmups; ++i) one_pass();
  std::vector<double> times;
  times.reserve(runs);
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    one_pass();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  if (!std::isfinite(sink)) throw NumericFault("benchmark produced a non-finite logit");
  const double n = static_cast<double>(runs);
  s.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / n;
  if (runs > 1) {
    double ss = 0.0;
    for (double t : times) ss += (t - s.mean_seconds) * (t - s.mean_seconds);
    s.stddev_seconds = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

nlohmann::json runtime_stats_to_json(const RuntimeStats& s) {
  return {{"mean_seconds", s.mean_seconds},
          {"stddev_seconds", s.stddev_seconds},
          {"runs", s.runs},
          {"warmups", s.warmups},
          {"clip_count", s.clip_count},
          {"window_count", s.window_count}};
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    const FoldMetrics& m = r.folds[i];
    folds.push_back({{"fold", i},
                     {"precision", m.precision},
                     {"recall", m.recall},
                     {"f1", m.f1},
                     {"degenerate", m.degenerate},
                     {"confusion",
                      {{"tp", m.confusion.tp},
                       {"fp", m.confusion.fp},
                       {"fn", m.confusion.fn},
                       {"tn", m.confusion.tn}}}});
  }
  nlohmann::json tpr = nlohmann::json::object();
  for (const auto& [c, t] : r.tpr) {
    nlohmann::json e = {{"positives", t.positives}, {"detected", t.detected}};
    if (t.rate) e["rate"] = *t.rate;
    tpr[std::string(category_name(c))] = e;
  }
  nlohmann::json j = {{"variant", r.variant},
                      {"task", r.task},
                      {"threshold", r.threshold},
                      {"folds", folds},
                      {"f1_mean", r.summary.f1_mean},
                      {"f1_sd", r.summary.f1_sd},
                      {"f1_ci95", r.summary.f1_ci95},
                      {"ci_method", r.ci_method},
                      {"tpr_per_category", tpr},
                      {"inputs", r.inputs}};
  if (r.bootstrap) {
    j["bootstrap"] = {{"f1", r.bootstrap->f1},
                      {"lower", r.bootstrap->lower},
                      {"upper", r.bootstrap->upper},
                      {"half_width", r.bootstrap->half_width},
                      {"resamples", r.bootstrap->resamples}};
  }
  if (r.runtime) j["runtime_stats"] = runtime_stats_to_json(*r.runtime);
  return j;
}

std::string format_results_table(const EvalReport& r) {
  std::ostringstream out;
  const Variant v = parse_variant(r.variant);
  std::string runtime = "-";
  if (r.runtime) runtime = fixed(r.runtime->mean_seconds, 4);
  out << "variant   heads  F1 +/- CI95        runtime(s)\n";
  char row[160];
  std::snprintf(row, sizeof(row), "%-9s %-6s %s +/- %s    %s\n", r.variant.c_str(),
                heads_string(v).c_str(), fixed(r.summary.f1_mean, 3).c_str(),
                fixed(r.summary.f1_ci95, 3).c_str(), runtime.c_str());
  out << row;
  if (r.bootstrap) {
    out << "bootstrap F1 " << fixed(r.bootstrap->f1, 3) << " ["
        << fixed(r.bootstrap->lower, 3) << ", " << fixed(r.bootstrap->upper, 3)
        << "] over " << r.bootstrap->resamples << " resamples\n";
  }
  out << "\nfold  precision  recall  f1     tp   fp   fn   tn\n";
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    const FoldMetrics& m = r.folds[i];
    std::snprintf(row, sizeof(row), "%-5zu %-10s %-7s %-6s %-4zu %-4zu %-4zu %zu%s\n",
                  i, fixed(m.precision, 3).c_str(), fixed(m.recall, 3).c_str(),
                  fixed(m.f1, 3).c_str(), m.confusion.tp, m.confusion.fp,
                  m.confusion.fn, m.confusion.tn, m.degenerate ? "  (degenerate)" : "");
    out << row;
  }
  out << "\ncategory                 positives  TPR\n";
  for (const auto& [c, t] : r.tpr) {
    std::snprintf(row, sizeof(row), "%-24s %-10zu %s\n",
                  std::string(category_name(c)).c_str(), t.positives,
                  t.rate ? fixed(*t.rate, 3).c_str() : "n/a");
    out << row;
  }
  return out.str();
}

}  // namespace gar
