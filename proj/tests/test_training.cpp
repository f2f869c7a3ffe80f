#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lfsynth/error.hpp"
#include "lfsynth/losses.hpp"
#include "lfsynth/optim.hpp"
#include "lfsynth/synthgen.hpp"
#include "lfsynth/train.hpp"

using namespace lfsynth;
namespace fs = std::filesystem;

namespace {

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{1, 1, 1, n}, std::move(v));
}

ModelWeights<double> scalar_model(double value) {
  ModelWeights<double> w;
  w.params.emplace("w", Tensor<double>::scalar(value).set_requires_grad(true));
  return w;
}

void set_grad(ModelWeights<double>& w, double g) {
  w.zero_grad();
  w.param("w").grad_buffer()[0] = g;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch = 1;
  c.patch = 16;
  c.iterations = 4;
  c.checkpoint_every = 2;
  c.seed = 5;
  return c;
}

LightField tiny_scene() { return render_lightfield(constant_disparity_scene(2, 16, 1.0), 1).lightfield; }

}  // namespace

TEST(LossEd, ReferenceValues) {
  EXPECT_EQ(loss_ed(row({0.2, 0.4}), row({0.2, 0.4})).item(), 0.0);
  EXPECT_NEAR(loss_ed(row({0.3, 0.5, 0.9}), row({0.1, 0.3, 0.7})).item(), 0.2, 1e-15);
  EXPECT_EQ(loss_ed(row({0, 1}), row({1, 0})).item(), 1.0);
  EXPECT_THROW(loss_ed(row({0, 1}), row({1, 0, 0})), ShapeError);
}

TEST(LossEg, ReferenceValues) {
  EXPECT_NEAR(loss_eg(row({0.3, 0.5, 0.9}), row({0.1, 0.3, 0.7})).item(), 0.0, 1e-15);
  EXPECT_EQ(loss_eg(row({0.3, 0.5}), row({0.3, 0.5})).item(), 0.0);
  // Difference 0,0,1,1: column differences 0,1,0,0 (last replicated),
  // row differences all zero on a single row.
  EXPECT_DOUBLE_EQ(loss_eg(row({0, 0, 1, 1}), row({0, 0, 0, 0})).item(), 0.25);
}

TEST(LossTotal, ComposesTerms) {
  CounterRng rng(1);
  SynthesisResult<double> r;
  r.predicted = Tensor<double>(Shape{1, 3, 4, 4});
  for (auto& v : r.predicted.mutable_data()) v = rng.uniform01();
  Tensor<double> gt(Shape{1, 3, 4, 4});
  for (auto& v : gt.mutable_data()) v = rng.uniform01();
  r.warps = concat_channels<double>({gt, gt, gt, gt});

  LossTerms only_ed;
  only_ed.gradient = false;
  EXPECT_EQ(loss_total(r, gt, only_ed).item(), loss_ed(r.predicted, gt).item());

  LossTerms with_ew;
  with_ew.warp = true;
  LossBreakdown parts;
  const double total = loss_total(r, gt, with_ew, &parts).item();
  EXPECT_EQ(parts.ew, 0.0);
  EXPECT_NEAR(total, parts.ed + 0.5 * parts.eg, 1e-15);
  EXPECT_EQ(LossTerms{}.lambda_g, 0.5);
  EXPECT_GE(total, 0.0);
  EXPECT_EQ(loss_total(SynthesisResult<double>{gt, {}, {}, r.warps}, gt, with_ew).item(), 0.0);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  auto w = scalar_model(0.75);
  AdamState<double> st;
  set_grad(w, 0.0);
  adam_step(w, st, {});
  EXPECT_EQ(w.param("w").item(), 0.75);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = scalar_model(0.5);
  AdamState<double> st;
  set_grad(w, 1.0);
  AdamConfig cfg;
  adam_step(w, st, cfg);
  EXPECT_NEAR(w.param("w").item(), 0.5 - cfg.lr * 1.0 / (1.0 + cfg.eps), 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  auto w = scalar_model(0.0);
  AdamState<double> st;
  double prev = 0.0;
  for (int i = 0; i < 20; ++i) {
    set_grad(w, -0.3);
    adam_step(w, st, {});
    EXPECT_GT(w.param("w").item(), prev);
    prev = w.param("w").item();
  }
}

TEST(Adam, NanGradientNamesParameter) {
  auto w = scalar_model(1.0);
  AdamState<double> st;
  set_grad(w, std::nan(""));
  try {
    adam_step(w, st, {});
    FAIL() << "expected InvariantError";
  } catch (const InvariantError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  EXPECT_EQ(w.param("w").item(), 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Config, ParsesEveryKey) {
  const auto c = parse_train_config(
      "# comment\n"
      "net_kind = single_disparity\n"
      "lr = 0.0005\nadam_beta1 = 0.8\nadam_beta2 = 0.99\nadam_eps = 1e-7\n"
      "batch = 2\npatch = 64\niterations = 10\nlambda_g = 0.25\nlambda_w = 2\n"
      "loss_terms = ed, ew\nd_max = 3\nseed = 9\ncheckpoint_every = 5\ngamma = 0.5\n"
      "held_out = 3:2, 1:1\n");
  EXPECT_EQ(c.net_kind, NetKind::single_disparity);
  EXPECT_EQ(c.adam.lr, 0.0005);
  EXPECT_EQ(c.batch, 2u);
  EXPECT_FALSE(c.loss.gradient);
  EXPECT_TRUE(c.loss.warp);
  EXPECT_EQ(c.loss.lambda_w, 2.0);
  EXPECT_EQ(c.effective_d_max(), 3.0);
  ASSERT_EQ(c.held_out.size(), 2u);
  EXPECT_EQ(c.held_out[0], (ViewCoord{3, 2}));
  const auto again = parse_train_config(to_text(c));
  EXPECT_EQ(to_text(again), to_text(c));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_train_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_train_config("batch = 0\n"), ConfigError);
  EXPECT_THROW(parse_train_config("lambda_g = -1\n"), ConfigError);
  EXPECT_THROW(parse_train_config("loss_terms = eg\n"), ConfigError);
  EXPECT_THROW(parse_train_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_train_config("net_kind = single_cnn\nloss_terms = ed,ew\n"), ConfigError);
  EXPECT_THROW(parse_train_config("no equals sign\n"), ConfigError);
}

TEST(Train, DeterministicUnderSeed) {
  const auto lf = tiny_scene();
  auto a = train({lf}, tiny_config());
  auto b = train({lf}, tiny_config());
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
  auto cfg = tiny_config();
  cfg.seed = 6;
  auto c = train({lf}, cfg);
  EXPECT_NE(a.log[0].loss.total, c.log[0].loss.total);
}

TEST(Train, LogRecordsEveryGroupAndBeta) {
  auto r = train({tiny_scene()}, tiny_config());
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].iteration, i);
    EXPECT_TRUE(std::isfinite(r.log[i].beta));
    for (const char* g : {"features", "disparity", "selection", "beta"})
      EXPECT_GT(r.log[i].grad_norms.at(g), 0.0) << g;
  }
  EXPECT_NE(r.weights.param("beta").item(), 1.0f);
  const auto j = nlohmann::json::parse(to_json_line(r.log[0]));
  EXPECT_TRUE(j.contains("grad_norms"));
  EXPECT_EQ(j["iteration"], 0);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto lf = tiny_scene();
  const fs::path dir = fs::temp_directory_path() / "lfsynth_resume_test";
  fs::remove_all(dir);
  TrainOptions opts;
  opts.out_dir = dir;
  auto full = train({lf}, tiny_config(), opts);
  for (const char* f : {"checkpoint_2.lfck", "checkpoint_4.lfck", "best.lfck", "last.lfck",
                        "log.jsonl", "config.txt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  TrainOptions resume;
  resume.resume = dir / "checkpoint_2.lfck";
  auto tail = train({lf}, tiny_config(), resume);
  ASSERT_EQ(tail.log.size(), 2u);
  EXPECT_EQ(tail.log[0].iteration, 2u);
  EXPECT_EQ(tail.log[0].loss.total, full.log[2].loss.total);
  EXPECT_EQ(tail.log[1].loss.total, full.log[3].loss.total);
  for (const auto& [name, t] : full.weights.params) {
    const auto& u = tail.weights.param(name);
    EXPECT_TRUE(std::equal(t.data().begin(), t.data().end(), u.data().begin())) << name;
  }

  std::ifstream log(dir / "log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 4u);
}

TEST(Train, WarpTermLeavesForwardGraphUnchanged) {
  const auto lf = tiny_scene();
  CounterRng rng(3);
  const Batch b = draw_batch({lf}, rng, 1, 16, {});
  auto w1 = make_model<float>(NetKind::plenoptic, 4);
  auto w2 = make_model<float>(NetKind::plenoptic, 4);
  auto r1 = synthesize(w1, b.corners, b.coords, 2, NormMode::train);
  auto r2 = synthesize(w2, b.corners, b.coords, 2, NormMode::train);
  LossTerms plain, with_ew;
  with_ew.warp = true;
  LossBreakdown p1, p2;
  loss_total(r1, b.target, plain, &p1);
  loss_total(r2, b.target, with_ew, &p2);
  EXPECT_TRUE(std::equal(r1.predicted.data().begin(), r1.predicted.data().end(),
                         r2.predicted.data().begin()));
  EXPECT_EQ(p1.ed, p2.ed);
  EXPECT_GT(p2.ew, 0.0);
}

TEST(Train, RejectsMismatchedDataset) {
  auto cfg = tiny_config();
  cfg.patch = 32;
  EXPECT_THROW(train({tiny_scene()}, cfg), ConfigError);
  EXPECT_THROW(train({}, tiny_config()), ConfigError);
}

TEST(Train, AblationKindsRun) {
  for (NetKind k : {NetKind::single_cnn, NetKind::single_disparity, NetKind::no_selection,
                    NetKind::no_features}) {
    auto cfg = tiny_config();
    cfg.net_kind = k;
    cfg.iterations = 2;
    auto r = train({tiny_scene()}, cfg);
    EXPECT_EQ(r.weights.kind, k);
    EXPECT_TRUE(std::isfinite(r.log.back().loss.total));
  }
}

TEST(Recalibration, LeavesTrajectoryUnchanged) {
  const auto lf = tiny_scene();
  TrainOptions off;
  off.recalibration_passes = 0;
  auto a = train({lf}, tiny_config(), off);
  auto b = train({lf}, tiny_config());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
  bool changed = false;
  for (const auto& [name, st] : a.weights.norms) {
    const auto& u = b.weights.norms.at(name);
    changed = changed || !std::equal(st.running_var.data().begin(), st.running_var.data().end(),
                                     u.running_var.data().begin());
  }
  EXPECT_TRUE(changed);
}

TEST(Recalibration, AveragesBatchStatistics) {
  // Zero disparity: the four corner views agree, so the feature layers see
  // the same input on each of their four calls per pass.
  const auto lf = render_lightfield(constant_disparity_scene(2, 24, 0.0), 4).lightfield;
  const auto cfg = tiny_config();
  const auto base = make_model<float>(NetKind::plenoptic, 3);

  // Oracle: statistics of each batch on its own, from a momentum-0 forward.
  CounterRng rng(cfg.seed, 2);
  std::vector<ModelWeights<float>> single;
  for (int k = 0; k < 2; ++k) {
    const Batch b = draw_batch({lf}, rng, 2, cfg.patch, cfg.held_out);
    auto w = cast_model<float>(base);
    w.norm_calls.emplace();
    synthesize(w, b.corners, b.coords, 2, NormMode::train);
    single.push_back(std::move(w));
  }

  auto w = cast_model<float>(base);
  recalibrate_norms(w, {lf}, cfg, 2, 2);
  EXPECT_FALSE(w.norm_calls.has_value());
  for (const auto& [name, st] : w.norms) {
    const auto m = st.running_mean.data(), v = st.running_var.data();
    const auto m0 = single[0].norms.at(name).running_mean.data(), m1 = single[1].norms.at(name).running_mean.data();
    const auto v0 = single[0].norms.at(name).running_var.data(), v1 = single[1].norms.at(name).running_var.data();
    for (std::size_t c = 0; c < m.size(); ++c) {
      EXPECT_NEAR(m[c], 0.5 * (m0[c] + m1[c]), 1e-5 * (1 + std::abs(m[c]))) << name;
      EXPECT_NEAR(v[c], 0.5 * (v0[c] + v1[c]), 1e-5 * (1 + std::abs(v[c]))) << name;
    }
  }
}
