#pragma once

// Plain-text configuration: `key = value` lines grouped under `[section]`
// headers, `#` comments. Keys are addressed as "section.key".

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dts/augment.hpp"
#include "dts/combination.hpp"
#include "dts/dataset.hpp"
#include "dts/error.hpp"
#include "dts/optim.hpp"
#include "dts/prob.hpp"
#include "dts/segnet.hpp"

namespace dts {

class KvDocument {
 public:
  static KvDocument parse(const std::string& text, const std::string& source = "<config>") {
    KvDocument doc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto where = [&] { return source + ":" + std::to_string(lineno); };
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where() + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(where() + ": empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(where() + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.values_.count(full)) throw ConfigError(where() + ": duplicate key '" + full + "'");
      doc.values_[full] = trim(line.substr(eq + 1));
    }
    return doc;
  }

  static KvDocument load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  const std::string* raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (const std::string* v = raw(key)) out = convert<T>(key, *v);
  }

  /// Throws on any key that was never read.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  /// Serialises with sections in first-seen order of the sorted keys.
  std::string dump() const {
    std::ostringstream os;
    std::string current = "\x01";
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      const std::string section = dot == std::string::npos ? "" : k.substr(0, dot);
      const std::string key = dot == std::string::npos ? k : k.substr(dot + 1);
      if (section != current) {
        if (current != "\x01") os << '\n';
        if (!section.empty()) os << '[' << section << "]\n";
        current = section;
      }
      os << key << " = " << v << '\n';
    }
    return os.str();
  }

  template <class T>
  static T convert(const std::string& key, const std::string& v) {
    const auto bad = [&] { return ConfigError("config key '" + key + "': cannot parse '" + v + "'"); };
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
      if (v == "false" || v == "0" || v == "no" || v == "off") return false;
      throw bad();
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw bad();
        return static_cast<T>(d);
      } catch (const std::logic_error&) {
        throw bad();
      }
    } else if constexpr (std::is_integral_v<T>) {
      T out{};
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc{} || ptr != v.data() + v.size()) throw bad();
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::vector<int> out;
      std::istringstream in(v);
      std::string item;
      while (std::getline(in, item, ',')) out.push_back(convert<int>(key, trim(item)));
      if (out.empty()) throw bad();
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::array<float, 3>>>) {
      // "r g b, r g b, ..."
      std::vector<std::array<float, 3>> out;
      std::istringstream in(v);
      std::string item;
      while (std::getline(in, item, ',')) {
        std::istringstream rgb(item);
        std::array<float, 3> c{};
        std::string extra;
        if (!(rgb >> c[0] >> c[1] >> c[2]) || (rgb >> extra)) throw bad();
        out.push_back(c);
      }
      if (out.empty()) throw bad();
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string s;
    for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  } else if constexpr (std::is_same_v<T, std::vector<std::array<float, 3>>>) {
    std::string s;
    for (const auto& c : v) s += (s.empty() ? "" : ", ") + format_value(c[0]) + ' ' + format_value(c[1]) + ' ' + format_value(c[2]);
    return s;
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else {
    return std::to_string(v);
  }
}

/// Every knob of a training run. Defaults are the reference hyperparameters;
/// desk-scale experiments override schedule and rates through config files.
struct TrainerConfig {
  // run
  std::uint64_t seed = 0;
  int iterations = 40000;
  int eval_interval = 4000;
  bool audit = true;

  // data
  std::string data_dir;  // empty: generate the benchmark in memory
  BenchmarkSpec bench;

  // model
  Arch arch;

  // optimiser
  float lr_encoder = 6e-5f;
  float lr_decoder = 6e-4f;
  AdamWHyper adamw;
  int warmup = 1500;
  LrSchedule schedule;

  // dual teacher-student
  float lambda = 0.999f;
  float tau = 0.968f;
  int batch = 2;
  bool dual = true;
  DataCombination group1_combination = DataCombination::group1();
  DataCombination group2_combination = DataCombination::setting_b();
  RoutingPolicy routing;
  ProbMode prob_mode = ProbMode::kWindowed;
  int prob_window = 4000;

  // augmentation
  bool geometric = true;
  bool photometric = true;
  AugmentParams augment;

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
    validate_schedule(warmup, iterations);
    arch.validate();
    if (arch.num_classes != bench.num_classes) throw ConfigError("model and data class counts differ");
    if (!(lr_encoder >= 0.0f && lr_decoder >= 0.0f)) throw ConfigError("learning rates must be >= 0");
    if (!(lambda >= 0.0f && lambda <= 1.0f)) throw ConfigError("lambda must lie in [0,1]");
    if (!(tau > 0.0f && tau < 1.0f)) throw ConfigError("tau must lie in (0,1)");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (prob_window < 1) throw ConfigError("prob_window must be >= 1");
    if (bench.height % arch.downsample_factor() != 0 || bench.width % arch.downsample_factor() != 0) {
      throw ConfigError("image size must be divisible by " + std::to_string(arch.downsample_factor()));
    }
    if (schedule.poly_power <= 0.0f) throw ConfigError("poly_power must be > 0");
    augment.validate();
    bench.source.validate(bench.num_classes);
    bench.target.validate(bench.num_classes);
  }
};

namespace config_detail {

// One table drives both directions of the KV mapping.
template <class Visitor>
void visit_fields(TrainerConfig& c, Visitor&& f) {
  f("run.seed", c.seed);
  f("run.iterations", c.iterations);
  f("run.eval_interval", c.eval_interval);
  f("run.audit", c.audit);
  f("data.dir", c.data_dir);
  f("data.height", c.bench.height);
  f("data.width", c.bench.width);
  f("data.classes", c.bench.num_classes);
  f("data.source_train", c.bench.source_train);
  f("data.target_train", c.bench.target_train);
  f("data.target_eval", c.bench.target_eval);
  f("data.source_eval", c.bench.source_eval);
  f("data.source_seed", c.bench.source_seed);
  f("data.target_seed", c.bench.target_seed);
  for (auto* spec : {&c.bench.source, &c.bench.target}) {
    const std::string s = spec == &c.bench.source ? "source." : "target.";
    f(s + "hue_shift", spec->hue_shift);
    f(s + "noise_sigma", spec->noise_sigma);
    f(s + "texture_amplitude", spec->texture_amplitude);
    f(s + "blur_sigma", spec->blur_sigma);
    f(s + "illumination", spec->illumination);
    f(s + "palette", spec->palette);
  }
  f("model.encoder_widths", c.arch.encoder_widths);
  f("model.decoder_width", c.arch.decoder_width);
  f("optim.lr_encoder", c.lr_encoder);
  f("optim.lr_decoder", c.lr_decoder);
  f("optim.weight_decay", c.adamw.weight_decay);
  f("optim.beta1", c.adamw.beta1);
  f("optim.beta2", c.adamw.beta2);
  f("optim.eps", c.adamw.eps);
  f("optim.warmup", c.warmup);
  f("optim.poly_power", c.schedule.poly_power);
  f("dts.lambda", c.lambda);
  f("dts.tau", c.tau);
  f("dts.batch", c.batch);
  f("dts.dual", c.dual);
  f("dts.prob_window", c.prob_window);
  f("augment.geometric", c.geometric);
  f("augment.photometric", c.photometric);
  f("augment.scale_min", c.augment.scale_min);
  f("augment.scale_max", c.augment.scale_max);
  f("augment.jitter_min", c.augment.jitter_min);
  f("augment.jitter_max", c.augment.jitter_max);
  f("augment.blur_prob", c.augment.blur_prob);
  f("augment.blur_sigma_max", c.augment.blur_sigma_max);
}

}  // namespace config_detail

/// Overlays `doc` onto `base`; unknown keys are rejected.
inline TrainerConfig config_from_kv(const KvDocument& doc, TrainerConfig base = {}) {
  config_detail::visit_fields(base, [&](const std::string& key, auto& field) { doc.read(key, field); });
  if (const std::string* v = doc.raw("optim.schedule")) {
    if (*v == "constant") base.schedule.decay = DecayKind::kConstant;
    else if (*v == "poly") base.schedule.decay = DecayKind::kPoly;
    else throw ConfigError("optim.schedule must be 'constant' or 'poly'");
  }
  if (const std::string* v = doc.raw("dts.group1_combination")) base.group1_combination = DataCombination::parse(*v);
  if (const std::string* v = doc.raw("dts.group2_combination")) base.group2_combination = DataCombination::parse(*v);
  const bool bidir_set = doc.has("dts.bidirectional");
  bool bidirectional = base.routing.bidirectional;
  doc.read("dts.bidirectional", bidirectional);
  if (const std::string* v = doc.raw("dts.routing")) base.routing = RoutingPolicy::parse(*v);
  if (bidir_set || doc.has("dts.routing")) base.routing.bidirectional = bidirectional;
  if (const std::string* v = doc.raw("dts.prob_mode")) {
    if (*v == "windowed") base.prob_mode = ProbMode::kWindowed;
    else if (*v == "cumulative") base.prob_mode = ProbMode::kCumulative;
    else throw ConfigError("dts.prob_mode must be 'windowed' or 'cumulative'");
  }
  doc.reject_unknown();
  base.arch.num_classes = base.bench.num_classes;
  return base;
}

inline KvDocument config_to_kv(TrainerConfig c) {
  KvDocument doc;
  config_detail::visit_fields(c, [&](const std::string& key, auto& field) { doc.set(key, format_value(field)); });
  doc.set("optim.schedule", c.schedule.decay == DecayKind::kPoly ? "poly" : "constant");
  doc.set("dts.group1_combination", c.group1_combination.name());
  doc.set("dts.group2_combination", c.group2_combination.name());
  doc.set("dts.routing", c.routing.name);
  doc.set("dts.bidirectional", format_value(c.routing.bidirectional));
  doc.set("dts.prob_mode", c.prob_mode == ProbMode::kCumulative ? "cumulative" : "windowed");
  return doc;
}

inline TrainerConfig load_config(const std::filesystem::path& path, TrainerConfig base = {}) {
  return config_from_kv(KvDocument::load(path), std::move(base));
}

}  // namespace dts
