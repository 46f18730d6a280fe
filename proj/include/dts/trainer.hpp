#pragma once

// Dual teacher-student training.
//
// Iteration t runs, strictly in this order:
//   (1) group-1 teacher <- EMA of group-1 student
//   (2) group-1 student update; pseudo labels from the fresh group-1 teacher
//       and from group 2's iteration-t models
//   (3) group-2 teacher <- EMA of group-2 student
//   (4) group-2 student update; pseudo labels from the fresh group-2 teacher
//       and from group 1's already-updated models
// With group 2 disabled only (1) and (2) run, which is the single
// teacher-student baseline.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dts/autograd.hpp"
#include "dts/batch.hpp"
#include "dts/checkpoint.hpp"
#include "dts/combination.hpp"
#include "dts/config.hpp"
#include "dts/dataset.hpp"
#include "dts/evaluate.hpp"
#include "dts/optim.hpp"
#include "dts/prob.hpp"
#include "dts/segnet.hpp"

namespace dts {

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int iteration, int group)
      : Error(what), iteration_(iteration), group_(group) {}
  int iteration() const noexcept { return iteration_; }
  int group() const noexcept { return group_; }

 private:
  int iteration_;
  int group_;
};

/// Seed derivation shared by the trainer and anything that must replay it.
namespace seeds {

enum Stream : std::uint32_t { kSourceStream = 1, kTargetStream = 2, kBatch = 3 };

inline std::uint64_t derive(std::uint64_t seed, std::uint32_t stream, std::uint32_t group, std::uint64_t iter = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, group,
                    static_cast<std::uint32_t>(iter), static_cast<std::uint32_t>(iter >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Group g's student starts from seed + (g - 1).
inline std::uint64_t init(std::uint64_t seed, int group) { return seed + static_cast<std::uint64_t>(group - 1); }

}  // namespace seeds

struct IterationReport {
  int iter = 0;
  float lr = 0.0f;
  float loss_g1 = 0.0f;
  std::optional<float> loss_g2;
  std::optional<float> gamma_g1;
  std::optional<float> gamma_g2;
  std::optional<double> prob;
};

enum class EventKind : std::uint8_t { kEmaUpdate, kStudentUpdate };

struct TrainEvent {
  int iter;
  EventKind kind;
  int group;
  friend bool operator==(const TrainEvent&, const TrainEvent&) = default;
};

struct PseudoLabelRecord {
  int iter;
  int group;    // group whose batch consumed the label
  int slot;
  ModelRef source;
  int version;  // number of updates the source model had received
  float gamma;
};

struct ProbRecord {
  int iter;
  float gamma2_teacher;
  float gamma1_student;
};

class Trainer {
 public:
  Trainer(const TrainerConfig& config, const Benchmark& data)
      : cfg_(config), data_(&data), prob_(config.prob_mode, static_cast<std::size_t>(config.prob_window)) {
    cfg_.validate();
    if (data.num_classes != cfg_.arch.num_classes) throw ConfigError("dataset class count does not match the model");
    if (data.source_train.size() == 0 || data.target_train.size() == 0) {
      throw ConfigError("training needs non-empty source and target training sets");
    }
    const int n_groups = cfg_.dual ? 2 : 1;
    for (int g = 1; g <= n_groups; ++g) {
      GroupState s{init_group(cfg_.arch, seeds::init(cfg_.seed, g), g), {},
                   SourceStream(data.source_train, seeds::derive(cfg_.seed, seeds::kSourceStream, static_cast<std::uint32_t>(g))),
                   TargetStream(data.target_train, seeds::derive(cfg_.seed, seeds::kTargetStream, static_cast<std::uint32_t>(g))), {}};
      std::vector<Tensor*> params = s.models.student.tensors();
      s.opt = OptimState(params, cfg_.adamw, lr_bases(s.models.student));
      groups_.push_back(std::move(s));
    }
  }

  const TrainerConfig& config() const noexcept { return cfg_; }
  int iteration() const noexcept { return t_; }
  bool dual() const noexcept { return cfg_.dual; }

  ModelGroup& group(int id) { return groups_.at(static_cast<std::size_t>(id - 1)).models; }
  const ModelGroup& group(int id) const { return groups_.at(static_cast<std::size_t>(id - 1)).models; }
  const OptimState& optimizer(int id) const { return groups_.at(static_cast<std::size_t>(id - 1)).opt; }

  /// Group 2's student, or group 1's when group 2 is disabled.
  const SegNet& final_model() const { return group(cfg_.dual ? 2 : 1).student; }

  const std::vector<TrainEvent>& events() const noexcept { return events_; }
  const std::vector<PseudoLabelRecord>& audit() const noexcept { return audit_; }
  const std::vector<ProbRecord>& prob_log() const noexcept { return prob_log_; }
  const ProbEstimator& prob() const noexcept { return prob_; }
  const Batch& last_batch(int id) const { return groups_.at(static_cast<std::size_t>(id - 1)).last_batch; }

  /// Runs iteration t = iteration().
  IterationReport step() {
    if (t_ >= cfg_.iterations) throw ConfigError("training already completed " + std::to_string(t_) + " iterations");
    const int t = t_;
    IterationReport rep;
    rep.iter = t;
    const float factor = lr_at(t, 1.0f, cfg_.warmup, cfg_.iterations, cfg_.schedule);
    rep.lr = factor * cfg_.lr_encoder;

    GroupState& g1 = groups_[0];
    ema_update(g1.models, cfg_.lambda);
    events_.push_back({t, EventKind::kEmaUpdate, 1});
    rep.loss_g1 = update_student(g1, t, factor, cfg_.group1_combination);
    rep.gamma_g1 = g1.last_batch.mean_gamma();
    events_.push_back({t, EventKind::kStudentUpdate, 1});

    if (cfg_.dual) {
      GroupState& g2 = groups_[1];
      ema_update(g2.models, cfg_.lambda);
      events_.push_back({t, EventKind::kEmaUpdate, 2});
      rep.loss_g2 = update_student(g2, t, factor, cfg_.group2_combination);
      rep.gamma_g2 = g2.last_batch.mean_gamma();
      events_.push_back({t, EventKind::kStudentUpdate, 2});
      record_prob(g2.last_batch, t);
      rep.prob = prob_.value();
    }
    ++t_;
    return rep;
  }

 private:
  struct GroupState {
    ModelGroup models;
    OptimState opt;
    SourceStream source;
    TargetStream target;
    Batch last_batch;
  };

  std::vector<float> lr_bases(const SegNet& net) const {
    std::vector<float> out;
    for (const NamedParam& p : net.params()) out.push_back(p.decoder ? cfg_.lr_decoder : cfg_.lr_encoder);
    return out;
  }

  const SegNet& model(const ModelRef& ref) const {
    const ModelGroup& g = group(ref.group);
    return ref.role == ModelRole::kTeacher ? g.teacher : g.student;
  }
  int version(const ModelRef& ref) const {
    const ModelGroup& g = group(ref.group);
    return ref.role == ModelRole::kTeacher ? g.teacher_version : g.student_version;
  }

  PseudoLabel label(const ModelRef& ref, const Tensor& image) const {
    return pseudo_label(model(ref).infer(image), cfg_.tau);
  }

  float update_student(GroupState& gs, int t, float lr_factor, const DataCombination& combo) {
    const int gid = gs.models.group_id;
    try {
      return update_student_unguarded(gs, t, lr_factor, combo);
    } catch (const NumericError& e) {
      throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(t) + " in group " +
                              std::to_string(gid),
                          t, gid);
    }
  }

  float update_student_unguarded(GroupState& gs, int t, float lr_factor, const DataCombination& combo) {
    const int gid = gs.models.group_id;
    const std::vector<ModelRef> routing = route_slots(combo, cfg_.batch, gid, cfg_.dual, cfg_.routing);
    std::mt19937_64 rng(seeds::derive(cfg_.seed, seeds::kBatch, static_cast<std::uint32_t>(gid), static_cast<std::uint64_t>(t)));
    BatchOptions opt{cfg_.batch, cfg_.augment, cfg_.geometric, cfg_.photometric};
    gs.last_batch = assemble_batch(
        combo, gs.source, gs.target, routing, [this](const ModelRef& r, const Tensor& img) { return label(r, img); },
        rng, opt);
    for (std::size_t s = 0; s < gs.last_batch.slots.size(); ++s) {
      const TargetSlot& slot = gs.last_batch.slots[s];
      audit_.push_back({t, gid, static_cast<int>(s), slot.source, version(slot.source), slot.label.gamma});
    }

    Tape tape;
    std::vector<Var> losses;
    for (const MixedSample& sample : gs.last_batch.samples) {
      Var logits = gs.models.student.forward(tape, sample.image);
      losses.push_back(weighted_cross_entropy(tape, logits, sample.label, sample.pixel_weight));
    }
    Var loss = mean(tape, losses);
    const float value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at iteration " + std::to_string(t) + " in group " + std::to_string(gid), t,
                          gid);
    }
    tape.backward(loss);
    std::vector<Tensor*> params = gs.models.student.tensors();
    adamw_step(params, gs.opt, lr_factor);
    gs.models.student_version += 1;
    return value;
  }

  void record_prob(const Batch& batch, int t) {
    const ModelRef te2{2, ModelRole::kTeacher};
    const ModelRef st1{1, ModelRole::kStudent};
    for (const TargetSlot& slot : batch.slots) {
      const float g2 = slot.source == te2 ? slot.label.gamma : label(te2, slot.image).gamma;
      const float g1 = slot.source == st1 ? slot.label.gamma : label(st1, slot.image).gamma;
      prob_.record(g2, g1);
      prob_log_.push_back({t, g2, g1});
    }
  }

  TrainerConfig cfg_;
  const Benchmark* data_;
  std::vector<GroupState> groups_;
  ProbEstimator prob_;
  int t_ = 0;
  std::vector<TrainEvent> events_;
  std::vector<PseudoLabelRecord> audit_;
  std::vector<ProbRecord> prob_log_;
};

// ---------------------------------------------------------------------------
// Whole runs

struct MetricsRow {
  std::string run_id;
  int iter = 0;
  IouResult iou;
  std::optional<double> loss_g1, loss_g2, gamma_g1, gamma_g2, prob;
};

inline std::string metrics_header(int num_classes) {
  std::string h = "iter,miou";
  for (int c = 0; c < num_classes; ++c) h += ",iou_" + std::to_string(c);
  return h + ",loss_g1,loss_g2,gamma_g1,gamma_g2,prob";
}

inline std::string format_metric(std::optional<double> v) {
  if (!v || std::isnan(*v)) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << *v;
  return os.str();
}

inline std::string metrics_line(const MetricsRow& r) {
  std::string line = std::to_string(r.iter) + "," + format_metric(r.iou.miou);
  for (double v : r.iou.per_class) line += "," + format_metric(v);
  for (const auto& v : {r.loss_g1, r.loss_g2, r.gamma_g1, r.gamma_g2, r.prob}) line += "," + format_metric(v);
  return line;
}

struct RunResult {
  SegNet final_model;
  std::vector<IterationReport> reports;
  std::vector<MetricsRow> metrics;
  std::optional<double> final_prob;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::string run_id = "run";
  std::function<void(const MetricsRow&)> on_metrics;
};

inline const char* kCheckpointNames[4] = {"g1_student", "g1_teacher", "g2_student", "g2_teacher"};

inline void write_run_checkpoints(const Trainer& trainer, const std::filesystem::path& dir) {
  save_checkpoint(trainer.group(1).student, dir / "g1_student.ckpt");
  save_checkpoint(trainer.group(1).teacher, dir / "g1_teacher.ckpt");
  if (trainer.dual()) {
    save_checkpoint(trainer.group(2).student, dir / "g2_student.ckpt");
    save_checkpoint(trainer.group(2).teacher, dir / "g2_teacher.ckpt");
  }
}

/// Trains for config.iterations, evaluating the final-model candidate on the
/// target eval split every eval_interval iterations and at the end.
inline RunResult run(const TrainerConfig& config, const Benchmark& data, const RunOptions& options = {}) {
  Trainer trainer(config, data);
  RunResult result;
  const bool to_disk = !options.out_dir.empty();
  std::ofstream metrics_csv, prob_csv, audit_csv;
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    io::dump(options.out_dir / "config.cfg", config_to_kv(config).dump());
    metrics_csv.open(options.out_dir / "metrics.csv", std::ios::trunc);
    metrics_csv << metrics_header(config.arch.num_classes) << '\n';
    if (config.dual) {
      prob_csv.open(options.out_dir / "prob_log.csv", std::ios::trunc);
      prob_csv << "iter,gamma2_teacher,gamma1_student,indicator,prob\n";
    }
    if (config.audit) {
      audit_csv.open(options.out_dir / "pseudo_audit.csv", std::ios::trunc);
      audit_csv << "iter,group,slot,source,version,gamma\n";
    }
  }

  double sum_l1 = 0.0, sum_l2 = 0.0, sum_g1 = 0.0, sum_g2 = 0.0;
  int n_steps = 0, n_g1 = 0, n_g2 = 0;
  std::size_t audit_written = 0, prob_written = 0;
  const auto emit = [&](int iter) {
    MetricsRow row;
    row.run_id = options.run_id;
    row.iter = iter;
    row.iou = data.target_eval.size() > 0 ? evaluate(trainer.final_model(), data.target_eval) : IouResult{};
    if (n_steps > 0) {
      row.loss_g1 = sum_l1 / n_steps;
      if (config.dual) row.loss_g2 = sum_l2 / n_steps;
    }
    if (n_g1 > 0) row.gamma_g1 = sum_g1 / n_g1;
    if (n_g2 > 0) row.gamma_g2 = sum_g2 / n_g2;
    row.prob = trainer.prob().value();
    sum_l1 = sum_l2 = sum_g1 = sum_g2 = 0.0;
    n_steps = n_g1 = n_g2 = 0;
    if (to_disk) metrics_csv << metrics_line(row) << std::endl;
    if (options.on_metrics) options.on_metrics(row);
    result.metrics.push_back(std::move(row));
  };

  if (config.iterations == 0) emit(0);
  for (int t = 0; t < config.iterations; ++t) {
    IterationReport rep = trainer.step();
    sum_l1 += rep.loss_g1;
    if (rep.loss_g2) sum_l2 += *rep.loss_g2;
    if (rep.gamma_g1) sum_g1 += *rep.gamma_g1, ++n_g1;
    if (rep.gamma_g2) sum_g2 += *rep.gamma_g2, ++n_g2;
    ++n_steps;
    if (to_disk) {
      const auto& audit = trainer.audit();
      if (config.audit) {
        for (; audit_written < audit.size(); ++audit_written) {
          const PseudoLabelRecord& a = audit[audit_written];
          audit_csv << a.iter << ',' << a.group << ',' << a.slot << ',' << a.source.name() << ',' << a.version << ','
                    << format_metric(a.gamma) << '\n';
        }
      }
      if (config.dual) {
        const auto& log = trainer.prob_log();
        const auto& ind = trainer.prob().indicators();
        for (; prob_written < log.size(); ++prob_written) {
          const ProbRecord& p = log[prob_written];
          prob_csv << p.iter << ',' << format_metric(p.gamma2_teacher) << ',' << format_metric(p.gamma1_student) << ','
                   << static_cast<int>(ind[prob_written]) << ',';
          // running value is only meaningful once all comparisons of the iteration are in
          prob_csv << (prob_written + 1 == log.size() ? format_metric(rep.prob) : "") << '\n';
        }
      }
    }
    result.reports.push_back(rep);
    const int done = t + 1;
    if ((config.eval_interval > 0 && done % config.eval_interval == 0) || done == config.iterations) emit(done);
  }

  result.final_model = trainer.final_model();
  result.final_prob = trainer.prob().value();
  if (to_disk) write_run_checkpoints(trainer, options.out_dir);
  return result;
}

/// Loads the configured dataset directory, or generates the benchmark in memory.
inline Benchmark prepare_data(const TrainerConfig& config, unsigned threads = 1) {
  if (!config.data_dir.empty()) {
    Benchmark b = load_benchmark(config.data_dir);
    if (b.num_classes != config.arch.num_classes) {
      throw ConfigError("dataset in " + config.data_dir + " has " + std::to_string(b.num_classes) +
                        " classes, config expects " + std::to_string(config.arch.num_classes));
    }
    return b;
  }
  return generate_benchmark(config.bench, threads);
}

}  // namespace dts
