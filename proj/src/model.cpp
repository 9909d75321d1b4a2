#include "gar/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "gar/errors.hpp"
#include "gar/rng.hpp"

namespace gar {
namespace {

using ad::Var;

struct LayerSpec {
  std::string name;
  std::size_t kernel = 0;  // 0 for dense layers
  std::size_t in = 0;
  std::size_t out = 0;
};

void add_conv_stack(std::vector<LayerSpec>& layers, const std::string& prefix,
                    std::size_t in, std::size_t kernel,
                    const std::vector<std::size_t>& channels) {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    layers.push_back({prefix + ".conv" + std::to_string(i), kernel, in,
                      channels[i]});
    in = channels[i];
  }
}

void add_fc_stack(std::vector<LayerSpec>& layers, const std::string& prefix,
                  std::size_t in, const std::vector<std::size_t>& widths,
                  std::size_t out) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers.push_back({prefix + ".fc" + std::to_string(i), 0, in, widths[i]});
    in = widths[i];
  }
  layers.push_back({prefix + ".out", 0, in, out});
}

std::vector<LayerSpec> layer_specs(const ModelConfig& cfg) {
  std::vector<LayerSpec> layers;
  const std::size_t joints = cfg.joint_count;
  const std::size_t c = cfg.feature_channels();
  add_conv_stack(layers, "backbone", 2, cfg.backbone_kernel,
                 cfg.backbone_channels);
  if (has_joint_attention(cfg.variant)) {
    add_conv_stack(layers, "jatt", 2, cfg.jatt.kernel,
                   std::vector<std::size_t>(cfg.jatt.tcn_layers,
                                            cfg.jatt.tcn_channels));
    add_fc_stack(layers, "jatt", joints * cfg.jatt.tcn_channels, cfg.jatt.fc,
                 joints);
  }
  if (has_time_attention(cfg.variant)) {
    add_conv_stack(layers, "tatt", c, cfg.tatt.kernel,
                   std::vector<std::size_t>(cfg.tatt.tcn_layers,
                                            cfg.tatt.tcn_channels));
    add_fc_stack(layers, "tatt", cfg.tatt.tcn_channels, cfg.tatt.fc, 1);
  }
  if (has_person_attention(cfg.variant)) {
    add_fc_stack(layers, "patt", joints * c, cfg.patt_fc, 1);
  }
  add_fc_stack(layers, "cls", joints * c, cfg.classifier_fc, 1);
  return layers;
}

std::vector<std::size_t> size_list_from_json(const nlohmann::json& j) {
  return j.get<std::vector<std::size_t>>();
}

nlohmann::json head_to_json(const HeadConfig& h) {
  return {{"tcn_layers", h.tcn_layers},
          {"tcn_channels", h.tcn_channels},
          {"kernel", h.kernel},
          {"fc", h.fc}};
}

HeadConfig head_from_json(const nlohmann::json& j, HeadConfig h) {
  h.tcn_layers = j.value("tcn_layers", h.tcn_layers);
  h.tcn_channels = j.value("tcn_channels", h.tcn_channels);
  h.kernel = j.value("kernel", h.kernel);
  if (j.contains("fc")) h.fc = size_list_from_json(j.at("fc"));
  return h;
}

const Var& var_at(const std::map<std::string, Var>& vars,
                  const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) {
    throw ConfigError("model parameters are missing '" + name + "'");
  }
  return it->second;
}

Var conv_stack(Var x, const std::map<std::string, Var>& vars,
               const std::string& prefix, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + ".conv" + std::to_string(i);
    x = ad::relu(ad::temporal_conv1d(x, var_at(vars, name + ".w"),
                                     var_at(vars, name + ".b")));
  }
  return x;
}

// Hidden layers with ReLU, then a linear output layer.
Var fc_stack(Var x, const std::map<std::string, Var>& vars,
             const std::string& prefix, std::size_t hidden) {
  for (std::size_t i = 0; i < hidden; ++i) {
    const std::string name = prefix + ".fc" + std::to_string(i);
    x = ad::relu(
        ad::dense(x, var_at(vars, name + ".w"), var_at(vars, name + ".b")));
  }
  return ad::dense(x, var_at(vars, prefix + ".out.w"),
                   var_at(vars, prefix + ".out.b"));
}

std::map<std::string, Var> push_params(ad::Tape& tape, const ParamMap& params,
                                       bool trainable) {
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) {
    vars.emplace(name, trainable ? tape.parameter(value) : tape.constant(value));
  }
  return vars;
}

AttentionRecord record_from(const ForwardNodes& nodes, const Tensor& input) {
  const std::size_t k = input.dim(0);
  const std::size_t t = input.dim(1);
  const std::size_t joints = input.dim(2);
  AttentionRecord rec;
  rec.logit = nodes.logit.value().item();
  rec.a_joint = nodes.has_joint
                    ? nodes.a_joint.value()
                    : Tensor({k, t, joints}, 1.0 / static_cast<double>(joints));
  rec.a_time = nodes.has_time
                   ? nodes.a_time.value()
                   : Tensor({k, t}, 1.0 / static_cast<double>(t));
  rec.a_person = nodes.has_person
                     ? nodes.a_person.value()
                     : Tensor({k}, 1.0 / static_cast<double>(k));
  rec.person_features = nodes.person_features.value();
  return rec;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kTcn: return "TCN";
    case Variant::kPAtt: return "PAtt";
    case Variant::kPtAtt: return "PTAtt";
    case Variant::kPtjAtt: return "PTJAtt";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string lower;
  for (char ch : name) {
    if (ch == '-' || ch == '_') continue;
    lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (lower == "tcn") return Variant::kTcn;
  if (lower == "patt") return Variant::kPAtt;
  if (lower == "ptatt") return Variant::kPtAtt;
  if (lower == "ptjatt") return Variant::kPtjAtt;
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected TCN, PAtt, PTAtt or PTJAtt)");
}

bool has_person_attention(Variant v) { return v != Variant::kTcn; }
bool has_time_attention(Variant v) {
  return v == Variant::kPtAtt || v == Variant::kPtjAtt;
}
bool has_joint_attention(Variant v) { return v == Variant::kPtjAtt; }

void validate(const ModelConfig& cfg) {
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t x) { return x > 0; });
  };
  if (cfg.frames < 1) throw ConfigError("model frames must be >= 1");
  if (cfg.joint_count < 1) throw ConfigError("joint_count must be >= 1");
  if (cfg.backbone_channels.empty() || !positive(cfg.backbone_channels)) {
    throw ConfigError("backbone_channels must be a nonempty list of positive widths");
  }
  for (std::size_t k : {cfg.backbone_kernel, cfg.jatt.kernel, cfg.tatt.kernel}) {
    if (k % 2 == 0) throw ConfigError("temporal kernels must be odd");
  }
  if (cfg.jatt.tcn_layers == 0 || cfg.jatt.tcn_channels == 0 ||
      cfg.tatt.tcn_layers == 0 || cfg.tatt.tcn_channels == 0) {
    throw ConfigError("attention head TCNs need at least one positive-width layer");
  }
  if (!positive(cfg.jatt.fc) || !positive(cfg.tatt.fc) ||
      !positive(cfg.patt_fc) || !positive(cfg.classifier_fc)) {
    throw ConfigError("fully connected widths must be positive");
  }
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"variant", variant_name(cfg.variant)},
          {"frames", cfg.frames},
          {"joint_count", cfg.joint_count},
          {"backbone_channels", cfg.backbone_channels},
          {"backbone_kernel", cfg.backbone_kernel},
          {"jatt", head_to_json(cfg.jatt)},
          {"tatt", head_to_json(cfg.tatt)},
          {"patt_fc", cfg.patt_fc},
          {"classifier_fc", cfg.classifier_fc},
          {"activation", "relu"},
          {"padding", "zero_same"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("variant")) {
      cfg.variant = parse_variant(j.at("variant").get<std::string>());
    }
    cfg.frames = j.value("frames", cfg.frames);
    cfg.joint_count = j.value("joint_count", cfg.joint_count);
    if (j.contains("backbone_channels")) {
      cfg.backbone_channels = size_list_from_json(j.at("backbone_channels"));
    }
    cfg.backbone_kernel = j.value("backbone_kernel", cfg.backbone_kernel);
    if (j.contains("jatt")) cfg.jatt = head_from_json(j.at("jatt"), cfg.jatt);
    if (j.contains("tatt")) cfg.tatt = head_from_json(j.at("tatt"), cfg.tatt);
    if (j.contains("patt_fc")) cfg.patt_fc = size_list_from_json(j.at("patt_fc"));
    if (j.contains("classifier_fc")) {
      cfg.classifier_fc = size_list_from_json(j.at("classifier_fc"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::vector<std::string> parameter_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (const LayerSpec& l : layer_specs(cfg)) {
    names.push_back(l.name + ".w");
    names.push_back(l.name + ".b");
  }
  return names;
}

ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ParamMap params;
  for (const LayerSpec& l : layer_specs(cfg)) {
    const std::size_t fan_in = (l.kernel ? l.kernel : 1) * l.in;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Shape wshape = l.kernel ? Shape{l.kernel, l.in, l.out} : Shape{l.in, l.out};
    Tensor w(wshape);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    params.emplace(l.name + ".w", std::move(w));
    params.emplace(l.name + ".b", Tensor({l.out}, 0.0));
  }
  return params;
}

std::size_t parameter_count(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

double AttentionRecord::probability() const { return ad::stable_sigmoid(logit); }

Tensor window_input(const WindowSample& window) {
  const std::size_t k = window.persons.size();
  if (k == 0) {
    throw std::invalid_argument("window " + window.video_id + "@" +
                                std::to_string(window.end_frame) +
                                " has no persons");
  }
  const std::size_t t = window.frames;
  Tensor input({k, t, kJointCount, 2});
  for (std::size_t p = 0; p < k; ++p) {
    const NormalizedTrack& person = window.persons[p];
    if (person.frames != t || person.coords.size() != t * kJointCount * 2) {
      throw std::invalid_argument("person track length does not match window");
    }
    std::copy(person.coords.begin(), person.coords.end(),
              input.data() + p * t * kJointCount * 2);
  }
  return input;
}

ForwardNodes build_forward(ad::Tape& tape,
                           const std::map<std::string, Var>& vars,
                           const ModelConfig& cfg, const Tensor& input) {
  if (input.rank() != 4 || input.dim(2) != cfg.joint_count || input.dim(3) != 2) {
    throw std::invalid_argument("model input must be [K, T, " +
                                std::to_string(cfg.joint_count) + ", 2], got " +
                                shape_string(input.shape()));
  }
  const std::size_t k = input.dim(0);
  const std::size_t t = input.dim(1);
  const std::size_t joints = cfg.joint_count;
  const std::size_t c = cfg.feature_channels();
  if (k == 0) throw std::invalid_argument("model input has no persons");
  if (t != cfg.frames) {
    throw ConfigError("window has " + std::to_string(t) +
                      " frames but the model expects " +
                      std::to_string(cfg.frames));
  }
  ForwardNodes nodes;
  Var poses = tape.constant(input);
  // Per-joint time series: [K, 17, T, 2].
  Var per_joint = ad::transpose(poses, {0, 2, 1, 3});

  Var x = conv_stack(per_joint, vars, "backbone", cfg.backbone_channels.size());
  x = ad::transpose(x, {0, 2, 1, 3});  // [K, T, 17, C]

  Var x_hat = x;
  if (has_joint_attention(cfg.variant)) {
    Var h = conv_stack(per_joint, vars, "jatt", cfg.jatt.tcn_layers);
    h = ad::transpose(h, {0, 2, 1, 3});
    h = ad::reshape(h, {k, t, joints * cfg.jatt.tcn_channels});
    Var scores = fc_stack(h, vars, "jatt", cfg.jatt.fc.size());  // [K, T, 17]
    nodes.a_joint = ad::softmax(scores, 2);
    nodes.has_joint = true;
    x_hat = ad::scale_last_axis(x, nodes.a_joint);
  }

  Var x_tilde;  // [K, 17, C]
  if (has_time_attention(cfg.variant)) {
    Var h = ad::mean_over_axis(x_hat, 2);  // [K, T, C]
    h = conv_stack(h, vars, "tatt", cfg.tatt.tcn_layers);
    Var scores = fc_stack(h, vars, "tatt", cfg.tatt.fc.size());  // [K, T, 1]
    nodes.a_time = ad::softmax(ad::reshape(scores, {k, t}), 1);
    nodes.has_time = true;
    x_tilde = ad::weighted_sum_over_axis(x_hat, nodes.a_time, 1);
  } else {
    x_tilde = ad::mean_over_axis(x_hat, 1);
  }
  nodes.person_features = x_tilde;

  Var x_dot;  // [17, C]
  if (has_person_attention(cfg.variant)) {
    Var flat = ad::reshape(x_tilde, {k, joints * c});
    Var scores = fc_stack(flat, vars, "patt", cfg.patt_fc.size());  // [K, 1]
    nodes.a_person = ad::softmax(ad::reshape(scores, {k}), 0);
    nodes.has_person = true;
    x_dot = ad::weighted_sum_over_axis(x_tilde, nodes.a_person, 0);
  } else {
    x_dot = ad::mean_over_axis(x_tilde, 0);
  }

  Var video = ad::reshape(x_dot, {1, joints * c});
  Var logit = fc_stack(video, vars, "cls", cfg.classifier_fc.size());  // [1, 1]
  nodes.logit = ad::reshape(logit, {1});
  return nodes;
}

AttentionRecord forward_input(const ParamMap& params, const ModelConfig& cfg,
                              const Tensor& input) {
  ad::Tape tape(false);
  auto vars = push_params(tape, params, false);
  ForwardNodes nodes = build_forward(tape, vars, cfg, input);
  return record_from(nodes, input);
}

AttentionRecord forward(const ParamMap& params, const ModelConfig& cfg,
                        const WindowSample& window) {
  AttentionRecord rec = forward_input(params, cfg, window_input(window));
  rec.track_ids = window.track_ids();
  return rec;
}

LossAndGrads loss_and_grads(const ParamMap& params, const ModelConfig& cfg,
                            std::span<const WindowSample* const> batch,
                            double positive_weight) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  LossAndGrads out;
  for (const auto& [name, p] : params) out.grads.emplace(name, Tensor(p.shape()));
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const WindowSample* w : batch) {
    ad::Tape tape(true);
    auto vars = push_params(tape, params, true);
    ForwardNodes nodes = build_forward(tape, vars, cfg, window_input(*w));
    Tensor target({1}, w->label ? 1.0 : 0.0);
    Var loss = ad::bce_loss(nodes.logit, target, positive_weight);
    out.loss += loss.value().item() * inv_batch;
    tape.backward(loss, Tensor::scalar(inv_batch));
    for (const auto& [name, v] : vars) {
      const Tensor& g = v.grad();
      Tensor& acc = out.grads.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }
  return out;
}

LossAndGrads loss_and_grads(const ParamMap& params, const ModelConfig& cfg,
                            std::span<const WindowSample> batch,
                            double positive_weight) {
  std::vector<const WindowSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const WindowSample& w : batch) ptrs.push_back(&w);
  return loss_and_grads(params, cfg, std::span<const WindowSample* const>(ptrs),
                        positive_weight);
}

Prediction threshold_logit(double logit, double threshold) {
  Prediction p;
  p.probability = ad::stable_sigmoid(logit);
  p.label = p.probability >= threshold;
  return p;
}

Prediction predict(const ParamMap& params, const ModelConfig& cfg,
                   const WindowSample& window, double threshold) {
  return threshold_logit(forward(params, cfg, window).logit, threshold);
}

}  // namespace gar
