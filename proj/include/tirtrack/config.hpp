#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tirtrack/tensor.hpp"

namespace tirtrack {

enum class FusionMode { kMpfm, kConf, kAddf };

inline std::string fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::kMpfm: return "mpfm";
    case FusionMode::kConf: return "conf";
    case FusionMode::kAddf: return "addf";
  }
  return "mpfm";
}

inline FusionMode parse_fusion(const std::string& s) {
  if (s == "mpfm") return FusionMode::kMpfm;
  if (s == "conf") return FusionMode::kConf;
  if (s == "addf") return FusionMode::kAddf;
  contract_fail("unknown fusion mode '", s, "' (expected mpfm, conf or addf)");
}

/// A config file line could not be understood.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model, tracker and training settings. Defaults are the full-size
/// settings; `toy()` is the desk-scale preset.
struct ModelConfig {
  // vocabulary
  std::size_t nbins = 4000;
  // encoder
  std::size_t enc_layers = 12;
  std::size_t patch = 16;
  std::size_t embed_dim = 768;
  std::size_t enc_heads = 12;
  std::size_t mlp_ratio = 4;
  // decoder
  std::size_t dec_layers = 2;
  std::size_t dec_hidden = 256;
  std::size_t dec_heads = 8;
  // crops
  std::size_t template_size = 128;
  std::size_t search_size = 288;
  /// Crop side = factor · sqrt(w·h). Template: area ×4, search: area ×4.5².
  double template_factor = 2.0;
  double search_factor = 4.5;
  FusionMode fusion = FusionMode::kMpfm;
  // template update policy
  double lambda = 0.6;
  std::size_t zu = 25;
  // optimizer
  double lr_encoder = 1e-5;
  double lr_other = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;
  // training schedule
  std::size_t epochs = 120;
  std::size_t samples_per_epoch = 30000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double center_jitter = 0.5;
  double scale_jitter = 0.15;
  // synthetic data (train-toy)
  std::size_t train_sequences = 200;
  std::size_t eval_sequences = 20;
  std::size_t frames_per_sequence = 40;
  std::size_t frame_size = 128;
  double target_min = 12.0;
  double target_max = 22.0;
  double speed_max = 2.0;
  double noise = 8.0;
  std::size_t distractors = 1;
  double scale_drift_max = 0.004;

  static ModelConfig full() { return {}; }

  static ModelConfig toy() {
    ModelConfig c;
    c.nbins = 100;
    c.enc_layers = 2;
    c.embed_dim = 64;
    c.enc_heads = 4;
    c.dec_hidden = 64;
    c.dec_heads = 4;
    c.template_size = 32;
    c.search_size = 64;
    c.lr_encoder = 5e-4;
    c.lr_other = 1e-3;
    c.weight_decay = 1e-4;
    c.grad_clip = 5.0;
    c.epochs = 12;
    c.samples_per_epoch = 4000;
    c.batch_size = 8;
    return c;
  }

  std::size_t template_tokens() const {
    return (template_size / patch) * (template_size / patch);
  }
  std::size_t search_tokens() const { return (search_size / patch) * (search_size / patch); }
  std::size_t search_grid() const { return search_size / patch; }

  void validate() const {
    if (embed_dim % enc_heads != 0) contract_fail("config: embed_dim not divisible by enc_heads");
    if (dec_hidden % dec_heads != 0) contract_fail("config: dec_hidden not divisible by dec_heads");
    if (dec_hidden % 4 != 0) contract_fail("config: dec_hidden must be divisible by 4");
    if (template_size % patch != 0 || search_size % patch != 0) {
      contract_fail("config: crop sizes must be multiples of the patch size");
    }
    if (search_grid() % 2 != 0) contract_fail("config: search grid must be even for pooling");
    if (nbins == 0 || enc_layers == 0 || dec_layers == 0) contract_fail("config: zero-size model");
    if (batch_size == 0) contract_fail("config: batch_size must be positive");
  }
};

namespace detail {

struct ConfigField {
  std::function<void(ModelConfig&, const std::string&)> set;
  std::function<std::string(const ModelConfig&)> get;
};

template <typename T>
ConfigField numeric_field(T ModelConfig::*member) {
  return {[member](ModelConfig& c, const std::string& v) {
            std::istringstream is(v);
            T parsed{};
            if (!(is >> parsed) || !(is >> std::ws).eof()) {
              throw ConfigError("config: bad value '" + v + "'");
            }
            c.*member = parsed;
          },
          [member](const ModelConfig& c) {
            std::ostringstream os;
            os.precision(17);
            os << c.*member;
            return os.str();
          }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    f["nbins"] = numeric_field(&ModelConfig::nbins);
    f["enc_layers"] = numeric_field(&ModelConfig::enc_layers);
    f["patch"] = numeric_field(&ModelConfig::patch);
    f["embed_dim"] = numeric_field(&ModelConfig::embed_dim);
    f["enc_heads"] = numeric_field(&ModelConfig::enc_heads);
    f["mlp_ratio"] = numeric_field(&ModelConfig::mlp_ratio);
    f["dec_layers"] = numeric_field(&ModelConfig::dec_layers);
    f["dec_hidden"] = numeric_field(&ModelConfig::dec_hidden);
    f["dec_heads"] = numeric_field(&ModelConfig::dec_heads);
    f["template_size"] = numeric_field(&ModelConfig::template_size);
    f["search_size"] = numeric_field(&ModelConfig::search_size);
    f["template_factor"] = numeric_field(&ModelConfig::template_factor);
    f["search_factor"] = numeric_field(&ModelConfig::search_factor);
    f["fusion"] = {[](ModelConfig& c, const std::string& v) {
                     try {
                       c.fusion = parse_fusion(v);
                     } catch (const ContractViolation& e) {
                       throw ConfigError(e.what());
                     }
                   },
                   [](const ModelConfig& c) { return fusion_name(c.fusion); }};
    f["lambda"] = numeric_field(&ModelConfig::lambda);
    f["zu"] = numeric_field(&ModelConfig::zu);
    f["lr_encoder"] = numeric_field(&ModelConfig::lr_encoder);
    f["lr_other"] = numeric_field(&ModelConfig::lr_other);
    f["weight_decay"] = numeric_field(&ModelConfig::weight_decay);
    f["grad_clip"] = numeric_field(&ModelConfig::grad_clip);
    f["epochs"] = numeric_field(&ModelConfig::epochs);
    f["samples_per_epoch"] = numeric_field(&ModelConfig::samples_per_epoch);
    f["batch_size"] = numeric_field(&ModelConfig::batch_size);
    f["seed"] = numeric_field(&ModelConfig::seed);
    f["center_jitter"] = numeric_field(&ModelConfig::center_jitter);
    f["scale_jitter"] = numeric_field(&ModelConfig::scale_jitter);
    f["train_sequences"] = numeric_field(&ModelConfig::train_sequences);
    f["eval_sequences"] = numeric_field(&ModelConfig::eval_sequences);
    f["frames_per_sequence"] = numeric_field(&ModelConfig::frames_per_sequence);
    f["frame_size"] = numeric_field(&ModelConfig::frame_size);
    f["target_min"] = numeric_field(&ModelConfig::target_min);
    f["target_max"] = numeric_field(&ModelConfig::target_max);
    f["speed_max"] = numeric_field(&ModelConfig::speed_max);
    f["noise"] = numeric_field(&ModelConfig::noise);
    f["distractors"] = numeric_field(&ModelConfig::distractors);
    f["scale_drift_max"] = numeric_field(&ModelConfig::scale_drift_max);
    return f;
  }();
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses flat `key = value` text on top of `base`. `#` starts a comment.
/// The special key `preset` (full|toy) resets to that preset and must come
/// first if present.
inline ModelConfig parse_config(std::istream& is, ModelConfig base = ModelConfig::full()) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value == "full") base = ModelConfig::full();
      else if (value == "toy") base = ModelConfig::toy();
      else throw ConfigError("config line " + std::to_string(lineno) + ": unknown preset " + value);
      continue;
    }
    const auto& fields = detail::config_fields();
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second.set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  return parse_config(is);
}

inline std::string format_config(const ModelConfig& c) {
  std::ostringstream os;
  for (const auto& [key, field] : detail::config_fields()) os << key << " = " << field.get(c) << '\n';
  return os.str();
}

}  // namespace tirtrack
