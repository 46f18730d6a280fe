#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dts/batch.hpp"
#include "dts/prob.hpp"
#include "dts/trainer.hpp"

using namespace dts;

namespace {

const ModelRef te1{1, ModelRole::kTeacher}, st1{1, ModelRole::kStudent};
const ModelRef te2{2, ModelRole::kTeacher}, st2{2, ModelRole::kStudent};

TrainerConfig tiny_config() {
  TrainerConfig c;
  c.bench.height = c.bench.width = 32;
  c.bench.source_train = c.bench.target_train = 12;
  c.bench.target_eval = 4;
  c.bench.source_eval = 4;
  c.arch.encoder_widths = {4, 8};
  c.arch.decoder_width = 8;
  c.iterations = 6;
  c.eval_interval = 3;
  c.warmup = 2;
  c.lr_encoder = 1e-3f;
  c.lr_decoder = 1e-2f;
  c.lambda = 0.9f;
  c.tau = 0.6f;
  return c;
}

const Benchmark& tiny_data() {
  static const Benchmark b = generate_benchmark(tiny_config().bench, 1);
  return b;
}

PseudoLabeler fixed_gamma_labeler(std::vector<float> gammas) {
  auto next = std::make_shared<std::size_t>(0);
  return [gammas, next](const ModelRef&, const Tensor& img) {
    PseudoLabel pl;
    pl.labels = LabelMap(img.dim(1), img.dim(2), 1);
    pl.conf.assign(pl.labels.size(), 1.0f);
    pl.gamma = gammas[(*next)++ % gammas.size()];
    return pl;
  };
}

}  // namespace

TEST(DataCombination, PresetsAndTargetCounts) {
  EXPECT_EQ(DataCombination::group1().domains(), (std::vector<Domain>{Domain::kSource, Domain::kSourceTarget}));
  EXPECT_EQ(DataCombination::setting_a().domains(), (std::vector<Domain>{Domain::kSource, Domain::kTargetTarget}));
  EXPECT_EQ(DataCombination::setting_b().domains(), (std::vector<Domain>{Domain::kSourceTarget, Domain::kTargetTarget}));
  EXPECT_EQ(DataCombination::group1().target_images(2), 2);
  EXPECT_EQ(DataCombination::setting_a().target_images(2), 4);
  EXPECT_EQ(DataCombination::setting_b().target_images(2), 6);
  EXPECT_EQ(DataCombination::tt_only().target_images(3), 6);
  EXPECT_THROW(DataCombination::pair(Domain::kSource, Domain::kSource), ConfigError);
}

TEST(DataCombination, ParseNamesAndExplicitPairs) {
  EXPECT_EQ(DataCombination::parse("group1-only"), DataCombination::group1());
  EXPECT_EQ(DataCombination::parse("A"), DataCombination::setting_a());
  EXPECT_EQ(DataCombination::parse("B"), DataCombination::setting_b());
  EXPECT_EQ(DataCombination::parse("S+TT"), DataCombination::setting_a());
  EXPECT_EQ(DataCombination::parse("TT"), DataCombination::tt_only());
  EXPECT_EQ(DataCombination::parse("TT+S").name(), "TT+S");
  for (const char* bad : {"", "C", "S+S", "S+ST+TT", "S+", "b"}) EXPECT_THROW(DataCombination::parse(bad), ConfigError) << bad;
  for (const auto& c : {DataCombination::group1(), DataCombination::setting_a(), DataCombination::setting_b(),
                        DataCombination::tt_only(), DataCombination::st_only(), DataCombination::source_only()})
    EXPECT_EQ(DataCombination::parse(c.name()), c);
}

TEST(Routing, DefaultDualSplits) {
  const RoutingPolicy def;
  EXPECT_EQ(route_slots(DataCombination::group1(), 2, 1, true, def), (std::vector<ModelRef>{te1, te2}));
  EXPECT_EQ(route_slots(DataCombination::setting_b(), 2, 2, true, def),
            (std::vector<ModelRef>{te2, te2, st1, st1, st1, st1}));
  EXPECT_EQ(route_slots(DataCombination::setting_a(), 2, 2, true, def), (std::vector<ModelRef>{te2, te2, st1, st1}));
}

TEST(Routing, SettingBSourceCounts) {
  for (int k : {1, 2, 3, 4}) {
    const auto r = route_slots(DataCombination::setting_b(), k, 2, true, RoutingPolicy{});
    ASSERT_EQ(static_cast<int>(r.size()), 3 * k);
    EXPECT_EQ(std::count(r.begin(), r.end(), te2), k);
    EXPECT_EQ(std::count(r.begin(), r.end(), st1), 2 * k);
    const auto a = route_slots(DataCombination::setting_a(), k, 2, true, RoutingPolicy{});
    EXPECT_EQ(std::count(a.begin(), a.end(), te2), k);
    EXPECT_EQ(std::count(a.begin(), a.end(), st1), k);
  }
}

TEST(Routing, UnidirectionalDropsGroupTwoFromGroupOne) {
  RoutingPolicy uni;
  uni.bidirectional = false;
  EXPECT_EQ(route_slots(DataCombination::group1(), 2, 1, true, uni), (std::vector<ModelRef>{te1, te1}));
  EXPECT_EQ(route_slots(DataCombination::setting_b(), 2, 2, true, uni),
            route_slots(DataCombination::setting_b(), 2, 2, true, RoutingPolicy{}));
}

TEST(Routing, SingleGroupUsesOwnTeacherOnly) {
  for (const auto& c : {DataCombination::group1(), DataCombination::setting_a(), DataCombination::tt_only()}) {
    for (const ModelRef& r : route_slots(c, 2, 1, false, RoutingPolicy{})) EXPECT_EQ(r, te1);
  }
}

TEST(Routing, NumberedRows) {
  struct Row {
    int row;
    ModelRef g1_ext, g2_ext;
    bool own;
  };
  for (const Row& r : {Row{1, te2, te1, false}, Row{2, st2, te1, true}, Row{3, te2, te1, true},
                       Row{4, st2, st1, true}, Row{5, te2, st1, true}}) {
    const RoutingPolicy p = RoutingPolicy::parse("table5-row" + std::to_string(r.row));
    const auto g1 = route_slots(DataCombination::group1(), 2, 1, true, p);
    const auto g2 = route_slots(DataCombination::setting_b(), 2, 2, true, p);
    EXPECT_EQ(g1[1], r.g1_ext) << "row " << r.row;
    EXPECT_EQ(g2[5], r.g2_ext) << "row " << r.row;
    EXPECT_EQ(g1[0] == te1, r.own) << "row " << r.row;
    EXPECT_EQ(g2[0] == te2, r.own) << "row " << r.row;
  }
  EXPECT_EQ(RoutingPolicy::parse("table5-row5").g2_external, RoutingPolicy{}.g2_external);
  EXPECT_THROW(RoutingPolicy::parse("table5-row6"), ConfigError);
  EXPECT_THROW(RoutingPolicy::parse("row1"), ConfigError);
}

TEST(AssembleBatch, Group1Composition) {
  const Benchmark& d = tiny_data();
  SourceStream src(d.source_train, 1);
  TargetStream tgt(d.target_train, 2);
  std::mt19937_64 rng(3);
  const auto routing = route_slots(DataCombination::group1(), 2, 1, true, {});
  const Batch b = assemble_batch(DataCombination::group1(), src, tgt, routing, fixed_gamma_labeler({0.5f}), rng, {});
  ASSERT_EQ(b.samples.size(), 4u);
  EXPECT_EQ(b.slots.size(), 2u);
  EXPECT_EQ(b.samples[0].provenance, Domain::kSource);
  EXPECT_EQ(b.samples[1].provenance, Domain::kSource);
  EXPECT_EQ(b.samples[2].provenance, Domain::kSourceTarget);
  EXPECT_EQ(b.samples[3].provenance, Domain::kSourceTarget);
  for (int i = 0; i < 2; ++i) {
    for (float w : b.samples[static_cast<std::size_t>(i)].pixel_weight.data()) EXPECT_EQ(w, 1.0f);
    EXPECT_EQ(b.samples[static_cast<std::size_t>(i)].target_pixels, 0u);
  }
  for (int i = 2; i < 4; ++i) {
    const MixedSample& s = b.samples[static_cast<std::size_t>(i)];
    std::size_t half = 0;
    for (float w : s.pixel_weight.data()) {
      EXPECT_TRUE(w == 1.0f || w == 0.5f);
      half += w == 0.5f;
    }
    EXPECT_EQ(half, s.target_pixels);
  }
  EXPECT_EQ(b.slots[0].source, te1);
  EXPECT_EQ(b.slots[1].source, te2);
}

TEST(AssembleBatch, SettingBConsumesThreeKTargets) {
  const Benchmark& d = tiny_data();
  SourceStream src(d.source_train, 1);
  TargetStream tgt(d.target_train, 2);
  TargetStream shadow(d.target_train, 2);
  std::mt19937_64 rng(3);
  const auto routing = route_slots(DataCombination::setting_b(), 2, 2, true, {});
  const Batch b = assemble_batch(DataCombination::setting_b(), src, tgt, routing, fixed_gamma_labeler({0.2f}), rng, {});
  ASSERT_EQ(b.samples.size(), 4u);
  ASSERT_EQ(b.slots.size(), 6u);
  EXPECT_EQ(b.samples[0].provenance, Domain::kSourceTarget);
  EXPECT_EQ(b.samples[3].provenance, Domain::kTargetTarget);
  for (int i = 0; i < 6; ++i) shadow.next();
  EXPECT_TRUE(tgt.next().same_values(shadow.next()));
  for (int i = 2; i < 4; ++i) {
    EXPECT_EQ(b.samples[static_cast<std::size_t>(i)].target_pixels, b.samples[static_cast<std::size_t>(i)].label.size());
    for (float w : b.samples[static_cast<std::size_t>(i)].pixel_weight.data()) EXPECT_EQ(w, 0.2f);
  }
}

TEST(AssembleBatch, TtMaskComesFromHigherGammaLabel) {
  const Benchmark& d = tiny_data();
  SourceStream src(d.source_train, 1);
  TargetStream tgt(d.target_train, 2);
  std::mt19937_64 rng(3);
  BatchOptions opt;
  opt.k = 1;
  opt.geometric = opt.photometric = false;
  // slot 0 gamma 0.3, slot 1 gamma 0.9; labels: class 1 everywhere, so the
  // mask (all of the single class) selects the whole mask-source image.
  const auto routing = route_slots(DataCombination::tt_only(), 1, 1, false, {});
  const Batch b = assemble_batch(DataCombination::tt_only(), src, tgt, routing, fixed_gamma_labeler({0.3f, 0.9f}), rng, opt);
  ASSERT_EQ(b.samples.size(), 1u);
  EXPECT_TRUE(b.samples[0].image.same_values(b.slots[1].image));
  for (float w : b.samples[0].pixel_weight.data()) EXPECT_EQ(w, 0.9f);
}

TEST(AssembleBatch, RoutingLengthMustMatch) {
  const Benchmark& d = tiny_data();
  SourceStream src(d.source_train, 1);
  TargetStream tgt(d.target_train, 2);
  std::mt19937_64 rng(3);
  EXPECT_THROW(assemble_batch(DataCombination::setting_b(), src, tgt, {te1}, fixed_gamma_labeler({0.1f}), rng, {}),
               ConfigError);
}

TEST(AssembleBatch, TargetPixelFractions) {
  const Benchmark& d = tiny_data();
  struct Case {
    DataCombination combo;
    double expected;
  };
  for (const Case& c : {Case{DataCombination::group1(), 0.25}, Case{DataCombination::setting_a(), 0.5},
                        Case{DataCombination::setting_b(), 0.75}}) {
    SourceStream src(d.source_train, 1);
    TargetStream tgt(d.target_train, 2);
    std::mt19937_64 rng(4);
    std::size_t tp = 0, total = 0;
    const auto routing = route_slots(c.combo, 2, 1, false, {});
    for (int i = 0; i < 200; ++i) {
      const Batch b = assemble_batch(c.combo, src, tgt, routing, fixed_gamma_labeler({0.5f}), rng, {});
      tp += b.target_pixels();
      total += b.total_pixels();
    }
    EXPECT_NEAR(static_cast<double>(tp) / static_cast<double>(total), c.expected, 0.1) << c.combo.name();
  }
}

TEST(Prob, CountingExamples) {
  ProbEstimator all(ProbMode::kCumulative);
  for (int i = 0; i < 5; ++i) all.record(0.9f, 0.1f);
  EXPECT_EQ(*all.value(), 1.0);
  ProbEstimator half(ProbMode::kCumulative);
  half.record(0.9f, 0.1f);
  half.record(0.1f, 0.9f);
  half.record(0.9f, 0.1f);
  half.record(0.5f, 0.5f);  // tie is not a win
  EXPECT_EQ(*half.value(), 0.5);
  EXPECT_FALSE(ProbEstimator().value().has_value());
  EXPECT_FALSE(prob_value(ProbEstimator()).has_value());
}

TEST(Prob, WindowedMatchesRecountOfRetainedIndicators) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ProbEstimator w(ProbMode::kWindowed, 7), c(ProbMode::kCumulative);
  for (int i = 0; i < 100; ++i) {
    const float a = u(rng), b = u(rng);
    w.record(a, b);
    c.record(a, b);
    const auto& ind = w.indicators();
    const std::size_t from = ind.size() > 7 ? ind.size() - 7 : 0;
    double wins = 0;
    for (std::size_t j = from; j < ind.size(); ++j) wins += ind[j];
    EXPECT_DOUBLE_EQ(*w.value(), wins / static_cast<double>(ind.size() - from));
    EXPECT_DOUBLE_EQ(*c.value(), static_cast<double>(c.wins()) / static_cast<double>(c.count()));
    EXPECT_LE(c.wins(), c.count());
  }
}

TEST(SelectSetting, RuleAndTie) {
  EXPECT_EQ(select_setting(0.7, 0.4), DataCombination::setting_a());
  EXPECT_EQ(select_setting(0.3, 0.6), DataCombination::setting_b());
  EXPECT_EQ(select_setting(0.5, 0.5), DataCombination::setting_a());
}

TEST(Trainer, StepOrderingEventLog) {
  Trainer tr(tiny_config(), tiny_data());
  tr.step();
  tr.step();
  const std::vector<TrainEvent> expected = {
      {0, EventKind::kEmaUpdate, 1}, {0, EventKind::kStudentUpdate, 1}, {0, EventKind::kEmaUpdate, 2},
      {0, EventKind::kStudentUpdate, 2}, {1, EventKind::kEmaUpdate, 1}, {1, EventKind::kStudentUpdate, 1},
      {1, EventKind::kEmaUpdate, 2}, {1, EventKind::kStudentUpdate, 2}};
  EXPECT_EQ(tr.events(), expected);
}

TEST(Trainer, RoutingLegalityFromAuditVersions) {
  Trainer tr(tiny_config(), tiny_data());
  for (int t = 0; t < 3; ++t) tr.step();
  for (const PseudoLabelRecord& a : tr.audit()) {
    if (a.group == 1) {
      // own teacher already EMA-updated this iteration; group-2 models untouched so far
      if (a.source.group == 1) EXPECT_EQ(a.version, a.iter + 1);
      else EXPECT_EQ(a.version, a.iter);
    } else {
      // every model group 2 reads has been updated in iteration t
      EXPECT_EQ(a.version, a.iter + 1);
    }
  }
  std::size_t g2_student_reads = 0;
  for (const auto& a : tr.audit()) g2_student_reads += a.group == 2 && a.source == st1;
  EXPECT_EQ(g2_student_reads, 3u * 4u);
}

TEST(Trainer, TeacherIsPureEmaOfStudent) {
  TrainerConfig c = tiny_config();
  Trainer tr(c, tiny_data());
  for (int t = 0; t < 3; ++t) {
    const SegNet te_before = tr.group(2).teacher;
    const SegNet st1_before = tr.group(1).student;
    const SegNet st2_before = tr.group(2).student;
    tr.step();
    // group 2's teacher moves only by EMA towards its pre-update student
    for (std::size_t i = 0; i < te_before.params().size(); ++i) {
      const auto old = te_before.params()[i].value.data();
      const auto st = st2_before.params()[i].value.data();
      const auto now = tr.group(2).teacher.params()[i].value.data();
      for (std::size_t j = 0; j < old.size(); ++j) ASSERT_EQ(now[j], old[j] * c.lambda + st[j] * (1.0f - c.lambda));
      EXPECT_FALSE(tr.group(2).teacher.params()[i].value.has_grad());
      EXPECT_FALSE(tr.group(1).teacher.params()[i].value.has_grad());
    }
    // the warmup schedule starts at lr 0
    EXPECT_EQ(tr.group(1).student.same_weights(st1_before), t == 0);
  }
}

TEST(Trainer, ProbLogMatchesEstimator) {
  TrainerConfig c = tiny_config();
  c.prob_mode = ProbMode::kCumulative;
  Trainer tr(c, tiny_data());
  for (int t = 0; t < 4; ++t) tr.step();
  ASSERT_EQ(tr.prob_log().size(), 4u * 6u);
  std::size_t wins = 0;
  for (const ProbRecord& r : tr.prob_log()) wins += r.gamma2_teacher > r.gamma1_student;
  EXPECT_DOUBLE_EQ(*tr.prob().value(), static_cast<double>(wins) / 24.0);
}

TEST(Trainer, SingleGroupHasNoProb) {
  TrainerConfig c = tiny_config();
  c.dual = false;
  Trainer tr(c, tiny_data());
  const IterationReport r = tr.step();
  EXPECT_FALSE(r.loss_g2.has_value());
  EXPECT_FALSE(r.prob.has_value());
  EXPECT_EQ(tr.events().size(), 2u);
  EXPECT_THROW(tr.group(2), std::out_of_range);
}

TEST(Trainer, ReplayIsBitwiseIdentical) {
  Trainer a(tiny_config(), tiny_data()), b(tiny_config(), tiny_data());
  for (int t = 0; t < 3; ++t) {
    a.step();
    b.step();
  }
  for (int g : {1, 2}) {
    EXPECT_TRUE(a.group(g).student.same_weights(b.group(g).student));
    EXPECT_TRUE(a.group(g).teacher.same_weights(b.group(g).teacher));
  }
}

TEST(Trainer, StepBeyondTotalRejected) {
  TrainerConfig c = tiny_config();
  c.iterations = 1;
  c.warmup = 0;
  Trainer tr(c, tiny_data());
  tr.step();
  EXPECT_THROW(tr.step(), ConfigError);
}

TEST(Trainer, NanAbortsWithIterationAndGroup) {
  TrainerConfig c = tiny_config();
  Trainer tr(c, tiny_data());
  tr.step();
  for (float& v : tr.group(2).student.find("head.bias")->data()) v = NAN;
  try {
    tr.step();
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.iteration(), 1);
    EXPECT_EQ(e.group(), 2);
    EXPECT_NE(std::string(e.what()).find("group 2"), std::string::npos);
  }
}

TEST(Run, ZeroIterationsReturnsInitialStudent) {
  TrainerConfig c = tiny_config();
  c.iterations = 0;
  c.warmup = 0;
  const RunResult r = run(c, tiny_data());
  const ModelGroup g2 = init_group(c.arch, seeds::init(c.seed, 2), 2);
  EXPECT_TRUE(r.final_model.same_weights(g2.student));
  EXPECT_TRUE(r.reports.empty());
  c.dual = false;
  EXPECT_TRUE(run(c, tiny_data()).final_model.same_weights(init_group(c.arch, seeds::init(c.seed, 1)).student));
}

TEST(Run, MetricsAtEvalPointsAndEnd) {
  TrainerConfig c = tiny_config();
  c.iterations = 7;
  const RunResult r = run(c, tiny_data());
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.metrics[0].iter, 3);
  EXPECT_EQ(r.metrics[1].iter, 6);
  EXPECT_EQ(r.metrics[2].iter, 7);
  EXPECT_EQ(r.reports.size(), 7u);
  for (std::size_t i = 0; i < r.reports.size(); ++i) EXPECT_EQ(r.reports[i].iter, static_cast<int>(i));
}

TEST(Run, OutputDirectoryIsDeterministic) {
  namespace fs = std::filesystem;
  const fs::path a = fs::temp_directory_path() / "dts_test_run_a", b = fs::temp_directory_path() / "dts_test_run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run(tiny_config(), tiny_data(), RunOptions{a, "a", {}});
  run(tiny_config(), tiny_data(), RunOptions{b, "b", {}});
  for (const char* f : {"metrics.csv", "prob_log.csv", "pseudo_audit.csv", "config.cfg", "g1_student.ckpt",
                        "g1_teacher.ckpt", "g2_student.ckpt", "g2_teacher.ckpt"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(io::slurp(a / f), io::slurp(b / f)) << f;
  }
  // config snapshot reloads to the same config
  const TrainerConfig back = load_config(a / "config.cfg");
  EXPECT_EQ(config_to_kv(back).dump(), config_to_kv(tiny_config()).dump());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, SupervisedLossDecreases) {
  TrainerConfig c = tiny_config();
  c.dual = false;
  c.group1_combination = DataCombination::source_only();
  c.iterations = 120;
  c.warmup = 10;
  c.eval_interval = 0;
  const RunResult r = run(c, tiny_data());
  double early = 0, late = 0;
  for (int i = 5; i < 15; ++i) early += r.reports[static_cast<std::size_t>(i)].loss_g1;
  for (int i = 110; i < 120; ++i) late += r.reports[static_cast<std::size_t>(i)].loss_g1;
  EXPECT_LT(late, early);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(seeds::derive(0, seeds::kSourceStream, 1), seeds::derive(0, seeds::kSourceStream, 2));
  EXPECT_NE(seeds::derive(0, seeds::kBatch, 1, 0), seeds::derive(0, seeds::kBatch, 1, 1));
  EXPECT_NE(seeds::derive(0, seeds::kBatch, 1, 0), seeds::derive(1, seeds::kBatch, 1, 0));
  EXPECT_EQ(seeds::derive(3, seeds::kTargetStream, 2, 9), seeds::derive(3, seeds::kTargetStream, 2, 9));
}
