#pragma once

// Command-line front end. Needs CLI11 on the include path.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dts/checkpoint.hpp"
#include "dts/config.hpp"
#include "dts/dataset.hpp"
#include "dts/evaluate.hpp"
#include "dts/prob.hpp"
#include "dts/report.hpp"
#include "dts/trainer.hpp"

namespace dts::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Worker cap for data generation: DTS_THREADS, else the hardware count.
inline unsigned data_threads() {
  if (const char* env = std::getenv("DTS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("DTS_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Named column of the ablation grid.
struct AblationColumn {
  std::string dir;
  TrainerConfig config;
};

/// baseline / focus-only / DTS+focus / DTS+bidirectional / full, where "focus"
/// is the target-heavy combination `focus`.
inline std::vector<AblationColumn> ablation_grid(const TrainerConfig& base, const DataCombination& focus) {
  std::vector<AblationColumn> cols;
  TrainerConfig c = base;
  c.dual = false;
  c.group1_combination = DataCombination::group1();
  cols.push_back({"col1_baseline", c});

  c.group1_combination = focus;
  cols.push_back({"col2_focus_only", c});

  c = base;
  c.dual = true;
  c.group1_combination = DataCombination::group1();
  c.group2_combination = focus;
  c.routing.bidirectional = false;
  cols.push_back({"col3_dts_focus", c});

  c.group2_combination = DataCombination::group1();
  c.routing.bidirectional = true;
  cols.push_back({"col4_dts_bidir", c});

  c.group2_combination = focus;
  cols.push_back({"col5_full", c});
  return cols;
}

/// Last running Prob value in a prob_log.csv.
inline std::optional<double> final_prob(const fs::path& prob_log) {
  const std::string text = io::slurp(prob_log);
  std::stringstream ss(text);
  std::string line;
  std::optional<double> last;
  bool header = true;
  while (std::getline(ss, line)) {
    if (header) {
      if (line.rfind("iter,", 0) != 0) throw FormatError(prob_log.string() + ": not a prob log");
      header = false;
      continue;
    }
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != 5) throw FormatError(prob_log.string() + ": expected 5 fields per row");
    if (!cells[4].empty()) last = std::stod(cells[4]);
  }
  return last;
}

inline void print_metrics(std::ostream& out, const MetricsRow& row, int num_classes) {
  out << "run," << metrics_header(num_classes) << '\n' << row.run_id << ',' << metrics_line(row) << '\n';
}

struct TrainFlags {
  std::string config;
  std::string setting;
  std::optional<bool> bidirectional;
  std::string routing;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::string data;
};

inline TrainerConfig resolve_config(const TrainFlags& f) {
  TrainerConfig c = f.config.empty() ? TrainerConfig{} : load_config(f.config);
  if (!f.data.empty()) c.data_dir = f.data;
  if (f.seed) c.seed = *f.seed;
  if (f.iterations) {
    c.iterations = *f.iterations;
    c.warmup = std::min(c.warmup, c.iterations);
  }
  if (!f.routing.empty()) {
    const bool bidir = c.routing.bidirectional;
    c.routing = RoutingPolicy::parse(f.routing);
    c.routing.bidirectional = bidir;
  }
  if (!f.setting.empty()) {
    if (f.setting == "group1-only") {
      c.dual = false;
      c.group1_combination = DataCombination::group1();
    } else if (f.setting == "s-only") {
      c.dual = false;
      c.group1_combination = DataCombination::source_only();
    } else {
      c.dual = true;
      c.group2_combination = DataCombination::parse(f.setting);
    }
  }
  if (f.bidirectional) c.routing.bidirectional = *f.bidirectional;
  c.validate();
  return c;
}

inline void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_setting) {
  cmd->add_option("--config", f.config, "trainer config file")->check(CLI::ExistingFile);
  if (with_setting) {
    cmd->add_option("--setting", f.setting, "group1-only | A | B | tt-only | st-only | s-only")
        ->check(CLI::IsMember({"group1-only", "A", "B", "tt-only", "st-only", "s-only"}));
    cmd->add_option("--bidirectional", f.bidirectional, "bidirectional pseudo-label exchange");
  }
  cmd->add_option("--routing", f.routing, "default | table5-row1..5");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--iterations", f.iterations, "override run.iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--data", f.data, "dataset directory written by gen-data")->check(CLI::ExistingDirectory);
}

inline RunResult train_to(const TrainerConfig& c, const fs::path& out, const std::string& id, const Benchmark& data,
                          std::ostream& log) {
  RunOptions opt;
  opt.out_dir = out;
  opt.run_id = id;
  opt.on_metrics = [&](const MetricsRow& r) {
    log << id << " iter " << r.iter << " target mIoU " << format_metric(r.iou.miou);
    if (r.prob) log << " prob " << format_metric(r.prob);
    log << std::endl;
  };
  return run(c, data, opt);
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dual teacher-student domain adaptation on synthetic scenes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  std::string gen_spec, gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic source/target dataset");
  gen->add_option("--spec", gen_spec, "config file with [data]/[source]/[target] sections")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  TrainFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "run one training configuration");
  add_train_flags(train, train_flags, true);
  train->add_option("--out", train_out, "run directory")->required();

  // eval
  std::string eval_ckpt, eval_data, eval_config, eval_split = "target";
  auto* ev = app.add_subcommand("eval", "score a checkpoint on an eval split");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* eval_data_opt = ev->add_option("--data", eval_data, "dataset directory")->check(CLI::ExistingDirectory);
  ev->add_option("--config", eval_config, "config describing an in-memory dataset")
      ->check(CLI::ExistingFile)
      ->excludes(eval_data_opt);
  ev->add_option("--split", eval_split, "target | source")->check(CLI::IsMember({"target", "source"}));

  // ablate
  TrainFlags ablate_flags;
  std::string ablate_out, ablate_focus = "B";
  auto* ablate = app.add_subcommand("ablate", "run the five-column component ablation");
  add_train_flags(ablate, ablate_flags, false);
  ablate->add_option("--focus", ablate_focus, "target-heavy combination for the focus columns")
      ->check(CLI::IsMember({"A", "B", "tt-only", "st-only"}));
  ablate->add_option("--out", ablate_out, "parent directory for the run directories")->required();

  // select-setting
  std::vector<std::string> select_runs;
  bool select_online = false;
  TrainFlags select_flags;
  std::string select_out;
  auto* select = app.add_subcommand("select-setting", "choose Setting A or B from Prob");
  select->add_option("runs", select_runs, "run directories trained with Setting A and Setting B (in that order)");
  select->add_flag("--online", select_online, "train both settings at half budget, then compare");
  add_train_flags(select, select_flags, false);
  select->add_option("--out", select_out, "parent directory for --online runs");

  // report
  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "per-class table and SVG chart from metrics CSVs");
  report->add_option("runs", report_runs, "run directories or metrics.csv files")->required();
  report->add_option("--out", report_out, "directory for table.txt and chart.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    err << "error: " << msg << '\n';
    return kUsage;
  }

  try {
    if (*gen) {
      TrainerConfig c = gen_spec.empty() ? TrainerConfig{} : load_config(gen_spec);
      c.bench.source.validate(c.bench.num_classes);
      c.bench.target.validate(c.bench.num_classes);
      write_benchmark(c.bench, gen_out, data_threads());
      io::dump(fs::path(gen_out) / "dataset.cfg", config_to_kv(c).dump());
      out << "wrote " << c.bench.source_train << " source, " << c.bench.target_train << " target, "
          << c.bench.target_eval << " target-eval and " << c.bench.source_eval << " source-eval images to " << gen_out
          << '\n';
    } else if (*train) {
      const TrainerConfig c = resolve_config(train_flags);
      const Benchmark data = prepare_data(c, data_threads());
      const RunResult r = train_to(c, train_out, fs::path(train_out).filename().string(), data, err);
      out << "final target mIoU " << format_metric(r.metrics.back().iou.miou) << '\n';
    } else if (*ev) {
      SegNet net = load_segnet(eval_ckpt);
      Benchmark data;
      if (!eval_data.empty()) {
        data = load_benchmark(eval_data);
      } else {
        TrainerConfig c = eval_config.empty() ? TrainerConfig{} : load_config(eval_config);
        c.data_dir.clear();
        c.bench.source_train = c.bench.target_train = 0;
        data = prepare_data(c, data_threads());
      }
      const LabeledSet& set = eval_split == "target" ? data.target_eval : data.source_eval;
      if (set.size() == 0) throw FormatError("the " + eval_split + " eval split is empty");
      if (data.num_classes != net.arch().num_classes) {
        throw ConfigError("checkpoint predicts " + std::to_string(net.arch().num_classes) + " classes, data has " +
                          std::to_string(data.num_classes));
      }
      MetricsRow row;
      row.run_id = fs::path(eval_ckpt).stem().string();
      row.iou = evaluate(net, set);
      print_metrics(out, row, net.arch().num_classes);
    } else if (*ablate) {
      const TrainerConfig base = resolve_config(ablate_flags);
      const Benchmark data = prepare_data(base, data_threads());
      std::vector<MetricsTable> tables;
      for (const AblationColumn& col : ablation_grid(base, DataCombination::parse(ablate_focus))) {
        const fs::path dir = fs::path(ablate_out) / col.dir;
        train_to(col.config, dir, col.dir, data, err);
        tables.push_back(read_metrics_csv(dir / "metrics.csv", col.dir));
      }
      out << per_class_table(tables);
    } else if (*select) {
      fs::path run_a, run_b;
      if (select_online) {
        if (!select_runs.empty()) throw ConfigError("--online takes no run directories");
        if (select_out.empty()) throw ConfigError("--online needs --out");
        TrainerConfig c = resolve_config(select_flags);
        c.dual = true;
        c.iterations /= 2;
        c.warmup = std::min(c.warmup, c.iterations);
        const Benchmark data = prepare_data(c, data_threads());
        run_a = fs::path(select_out) / "setting_a";
        run_b = fs::path(select_out) / "setting_b";
        c.group2_combination = DataCombination::setting_a();
        train_to(c, run_a, "setting_a", data, err);
        c.group2_combination = DataCombination::setting_b();
        train_to(c, run_b, "setting_b", data, err);
      } else {
        if (select_runs.size() != 2) throw ConfigError("select-setting needs exactly two run directories (A then B)");
        run_a = select_runs[0];
        run_b = select_runs[1];
      }
      const std::optional<double> pa = final_prob(run_a / "prob_log.csv");
      const std::optional<double> pb = final_prob(run_b / "prob_log.csv");
      if (!pa || !pb) throw FormatError("a prob log has no recorded comparisons");
      const DataCombination pick = select_setting(*pa, *pb);
      out << "prob_a," << format_metric(pa) << "\nprob_b," << format_metric(pb) << "\nselected," << pick.name()
          << '\n';
    } else if (*report) {
      std::vector<MetricsTable> tables;
      for (const std::string& r : report_runs) {
        const fs::path p = fs::is_directory(r) ? fs::path(r) / "metrics.csv" : fs::path(r);
        if (!fs::exists(p)) throw FormatError("missing metrics file " + p.string());
        tables.push_back(read_metrics_csv(p));
      }
      const std::string table = per_class_table(tables);
      out << table;
      if (!report_out.empty()) {
        fs::create_directories(report_out);
        io::dump(fs::path(report_out) / "table.txt", table);
        io::dump(fs::path(report_out) / "chart.svg", metrics_chart(tables));
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    err << "error: " << msg << '\n';
    return kRuntime;
  }
  return kOk;
}

}  // namespace dts::cli
