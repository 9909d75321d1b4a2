#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gar/adam.hpp"
#include "gar/autodiff.hpp"
#include "gar/tensor.hpp"
#include "gar/windows.hpp"
#include "json.hpp"

namespace gar {

enum class Variant { kTcn, kPAtt, kPtAtt, kPtjAtt };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // case-insensitive

bool has_person_attention(Variant v);
bool has_time_attention(Variant v);
bool has_joint_attention(Variant v);

struct HeadConfig {
  std::size_t tcn_layers = 2;
  std::size_t tcn_channels = 64;
  std::size_t kernel = 5;
  std::vector<std::size_t> fc;
};

struct ModelConfig {
  Variant variant = Variant::kPtjAtt;
  std::size_t frames = 120;
  std::size_t joint_count = kJointCount;
  std::vector<std::size_t> backbone_channels{64, 128, 256, 256};
  std::size_t backbone_kernel = 5;
  HeadConfig jatt{2, 64, 5, {512, 128}};
  HeadConfig tatt{2, 64, 5, {128}};
  std::vector<std::size_t> patt_fc{1024, 256};
  std::vector<std::size_t> classifier_fc{1024, 256};

  std::size_t feature_channels() const { return backbone_channels.back(); }
};

// Throws ConfigError on empty/zero widths or even kernels.
void validate(const ModelConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
// Missing fields keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Names of all parameters a variant owns, in initialization order.
std::vector<std::string> parameter_names(const ModelConfig& cfg);

// Fan-in scaled uniform weights, zero biases.
ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed);

std::size_t parameter_count(const ParamMap& params);

struct AttentionRecord {
  Tensor a_joint;          // K x T x 17
  Tensor a_time;           // K x T
  Tensor a_person;         // K
  Tensor person_features;  // K x 17 x C, the per-person pooled features
  double logit = 0.0;
  std::vector<int> track_ids;

  double probability() const;
};

// [K, T, 17, 2] normalized coordinates of the window's persons.
Tensor window_input(const WindowSample& window);

// Graph nodes of one forward pass.
struct ForwardNodes {
  ad::Var logit;  // [1]
  ad::Var a_joint;
  ad::Var a_time;
  ad::Var a_person;
  ad::Var person_features;
  bool has_joint = false;
  bool has_time = false;
  bool has_person = false;
};

// Builds the forward graph on `tape` given parameter nodes keyed by name.
ForwardNodes build_forward(ad::Tape& tape, const std::map<std::string, ad::Var>& vars,
                           const ModelConfig& cfg, const Tensor& input);

AttentionRecord forward(const ParamMap& params, const ModelConfig& cfg,
                        const WindowSample& window);
AttentionRecord forward_input(const ParamMap& params, const ModelConfig& cfg,
                              const Tensor& input);

struct LossAndGrads {
  double loss = 0.0;
  ParamMap grads;
};

// Mean weighted BCE over the batch; each window gets its own graph.
LossAndGrads loss_and_grads(const ParamMap& params, const ModelConfig& cfg,
                            std::span<const WindowSample* const> batch,
                            double positive_weight = 1.0);
LossAndGrads loss_and_grads(const ParamMap& params, const ModelConfig& cfg,
                            std::span<const WindowSample> batch,
                            double positive_weight = 1.0);

struct Prediction {
  bool label = false;
  double probability = 0.0;
};

Prediction predict(const ParamMap& params, const ModelConfig& cfg,
                   const WindowSample& window, double threshold = 0.5);
Prediction threshold_logit(double logit, double threshold = 0.5);

}  // namespace gar
