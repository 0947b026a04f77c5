#include <fstream>

#include <gtest/gtest.h>

#include "feedrec/checkpoint.hpp"
#include "feedrec/synthgen.hpp"
#include "feedrec/trainer.hpp"
#include "test_util.hpp"

using namespace feedrec;

namespace {

const Corpus& small_corpus() {
  static const Corpus c = [] {
    GeneratorConfig g;
    g.n_users = 30;
    g.n_news = 200;
    g.n_impressions = 300;
    g.seed = 11;
    return generate_corpus(g);
  }();
  return c;
}

TrainConfig small_train() {
  TrainConfig c;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.ffn_dim = 16;
  c.model.max_seq = 20;
  c.epochs = 1;
  c.learning_rate = 1e-3;
  c.seed = 5;
  c.validate_each_epoch = false;
  return c;
}

template <typename T>
bool same_parameters(const FeedRecModel<T>& a, const FeedRecModel<T>& b) {
  const auto& pa = a.store.all();
  const auto& pb = b.store.all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || pa[i]->value != pb[i]->value) return false;
  }
  return true;
}

template <typename T>
std::vector<CandidateScores> score_test_split(const FeedRecModel<T>& model, const TrainConfig& cfg) {
  const auto split = chronological_split(small_corpus().impressions);
  FeedIndex index(small_corpus(), cfg.history_options());
  std::vector<ScoreRequest> reqs;
  for (const auto& imp : split.test) reqs.push_back({imp.user_id, imp.timestamp, imp.shown_news});
  return score_requests(model, index, encode_catalog(model, index), std::span<const ScoreRequest>(reqs),
                        cfg.options);
}

}  // namespace

// --- optimization ----------------------------------------------------------

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig cfg = small_train();
  cfg.learning_rate = 0;
  cfg.track_train_loss = false;
  const auto result = train<float>(small_corpus(), cfg);
  const FeedRecModel<float> fresh(cfg.model, cfg.seed);
  EXPECT_TRUE(same_parameters(result.model, fresh));
}

TEST(Train, SameSeedGivesIdenticalEpochLoss) {
  const TrainConfig cfg = small_train();
  const auto a = train<float>(small_corpus(), cfg);
  const auto b = train<float>(small_corpus(), cfg);
  ASSERT_EQ(a.epochs.size(), 1u);
  EXPECT_EQ(a.epochs[0].running.total, b.epochs[0].running.total);
  ASSERT_TRUE(a.epochs[0].train_loss && b.epochs[0].train_loss);
  EXPECT_EQ(a.epochs[0].train_loss->total, b.epochs[0].train_loss->total);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  EXPECT_EQ(a.rng_state, b.rng_state);
}

TEST(Train, LossDecreasesOnTinyCorpus) {
  TrainConfig cfg = small_train();
  cfg.epochs = 2;
  const auto r = train<float>(small_corpus(), cfg);
  ASSERT_TRUE(r.initial_loss);
  EXPECT_LT(r.epochs.back().train_loss->total, r.initial_loss->total);
  for (const auto& e : r.epochs) {
    EXPECT_TRUE(std::isfinite(e.running.total));
    EXPECT_GT(e.running.samples, 0u);
  }
}

TEST(Train, ReportsValidationAucEachEpoch) {
  TrainConfig cfg = small_train();
  cfg.validate_each_epoch = true;
  std::vector<int> seen;
  const auto r = train<float>(small_corpus(), cfg, [&](const EpochReport& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, std::vector<int>{1});
  ASSERT_TRUE(r.epochs[0].validation_auc);
  EXPECT_GE(*r.epochs[0].validation_auc, 0.0);
  EXPECT_LE(*r.epochs[0].validation_auc, 1.0);
}

TEST(Train, EmptyTrainingSetIsConfigError) {
  Corpus c = small_corpus();
  for (auto& imp : c.impressions) imp.clicked.clear();
  EXPECT_THROW(train<float>(c, small_train()), ConfigError);
}

TEST(Train, InvalidConfigIsRejected) {
  TrainConfig cfg = small_train();
  cfg.batch_size = 0;
  EXPECT_THROW(train<float>(small_corpus(), cfg), ConfigError);
  cfg = small_train();
  cfg.dropout = 1.0;
  EXPECT_THROW(train<float>(small_corpus(), cfg), ConfigError);
  cfg = small_train();
  cfg.model.vocab_size = 10;  // corpus tokens go up to 1199
  EXPECT_THROW(train<float>(small_corpus(), cfg), InputError);
}

TEST(Train, ScoringIgnoresDropout) {
  TrainConfig cfg = small_train();
  cfg.dropout = 0.5;
  cfg.track_train_loss = false;
  const auto r = train<float>(small_corpus(), cfg);
  const auto a = score_test_split(r.model, cfg);
  const auto b = score_test_split(r.model, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].scores.size(); ++j) {
      EXPECT_EQ(a[i].scores[j].click, b[i].scores[j].click);
    }
  }
}

// --- loss switches ---------------------------------------------------------

namespace {

struct GradFixture {
  Corpus corpus = gradcheck_corpus(3, 40);
  FeedIndex index{corpus, HistoryOptions{10.0, 1.0, 3, {}}};
  SampleSet set = build_samples(corpus.impressions, corpus.feedback, 4, 3);
  FeedRecModel<double> model;
  std::vector<const TrainingSample*> batch;

  GradFixture() : model(config(), 9) {
    for (const auto& s : set.samples) batch.push_back(&s);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& p : model.store.all()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += n(rng);
    }
    // If every dwell prediction sits on the ReLU floor, flipping W_t moves
    // them all into the linear region.
    const auto g = grads({}, [](Tape<double>&, const LossVars& lv) { return lv.dwell; });
    if (max_abs(g) == 0.0) model.heads.dwell->value *= -1.0;
  }

  static double max_abs(const std::vector<Matrix<double>>& gs) {
    double m = 0;
    for (const auto& g : gs) {
      if (g.size()) m = std::max(m, g.cwiseAbs().maxCoeff());
    }
    return m;
  }

  static ModelConfig config() {
    ModelConfig mc;
    mc.dim = 8;
    mc.heads = 2;
    mc.ffn_dim = 8;
    mc.vocab_size = 40;
    mc.max_seq = 16;
    mc.title_len = 8;
    return mc;
  }

  // Gradients of `pick(loss vars)` with the given switches.
  std::vector<Matrix<double>> grads(const LossSwitches& sw, const std::function<Var(Tape<double>&, const LossVars&)>& pick,
                                    LossBreakdown* values = nullptr) {
    Tape<double> tape;
    auto lv = batch_loss<double>(tape, model, index, batch, {}, sw, {});
    model.store.zero_grad();
    tape.backward(pick(tape, *lv));
    if (values) *values = read_losses(tape, *lv);
    std::vector<Matrix<double>> out;
    for (const auto& p : model.store.all()) out.push_back(p->grad);
    return out;
  }
};

double max_diff(const std::vector<Matrix<double>>& a, const std::vector<Matrix<double>>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size()) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace

TEST(LossSwitches, DisabledLossIsReportedButContributesNoGradient) {
  GradFixture f;
  const LossWeights w;
  auto total = [](Tape<double>&, const LossVars& lv) { return lv.total; };
  for (int which = 0; which < 3; ++which) {
    LossSwitches off;
    off.finish = which != 0;
    off.dwell = which != 1;
    off.disentangle = which != 2;
    LossBreakdown reported;
    const auto g_off = f.grads(off, total, &reported);
    // Oracle: rebuild the total from the enabled components only.
    const auto g_ref = f.grads({}, [&](Tape<double>& t, const LossVars& lv) {
      Var sum = lv.click;
      if (which != 0) sum = t.add(sum, t.affine(lv.finish, w.alpha));
      if (which != 1) sum = t.add(sum, t.affine(lv.dwell, w.beta));
      if (which != 2) sum = t.add(sum, t.affine(lv.disentangle, w.gamma));
      return sum;
    });
    EXPECT_LT(max_diff(g_off, g_ref), 1e-12) << which;
    const double component[] = {reported.finish, reported.dwell, reported.disentangle};
    EXPECT_NE(component[which], 0.0);
    const auto g_on = f.grads({}, total);
    EXPECT_GT(max_diff(g_on, g_off), 1e-8) << which;
  }
}

TEST(LossSwitches, TotalMatchesScalarCombination) {
  GradFixture f;
  LossBreakdown b;
  f.grads({}, [](Tape<double>&, const LossVars& lv) { return lv.total; }, &b);
  EXPECT_NEAR(b.total, loss_total(b.click, b.finish, b.dwell, b.disentangle, LossWeights{}), 1e-12);
}

// --- gradient check --------------------------------------------------------

TEST(Gradcheck, PassesAtWidthEight) {
  const GradcheckReport r = gradcheck({});
  EXPECT_TRUE(r.pass);
  for (const auto& g : r.groups) {
    EXPECT_TRUE(g.pass) << g.group << " " << g.max_relative_error << " at " << g.worst_entry;
    EXPECT_GT(g.checked, 0u) << g.group;
  }
  EXPECT_EQ(r.groups.size(), 12u);
}

TEST(Gradcheck, PassesAtWidthSixteen) {
  GradcheckOptions opt;
  opt.dim = 16;
  opt.seed = 1;
  const GradcheckReport r = gradcheck(opt);
  for (const auto& g : r.groups) EXPECT_TRUE(g.pass) << g.group << " " << g.max_relative_error;
}

TEST(Gradcheck, CorruptedFinishHeadIsFlagged) {
  GradcheckOptions opt;
  opt.corrupt = [](ParamStore<double>& s) { s.get("heads.finish").grad *= 1.5; };
  const GradcheckReport r = gradcheck(opt);
  EXPECT_FALSE(r.pass);
  for (const auto& g : r.groups) {
    EXPECT_EQ(g.pass, g.group != "finish_head") << g.group;
  }
}

// --- checkpoints -----------------------------------------------------------

class CheckpointTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = small_train();
    cfg_.track_train_loss = false;
    result_ = std::make_unique<TrainResult<float>>(train<float>(small_corpus(), cfg_));
  }
  static void TearDownTestSuite() { result_.reset(); }

  std::filesystem::path saved() {
    const auto p = dir_ / "model.ckpt";
    save_checkpoint(p, CheckpointMeta{cfg_, 1, result_->rng_state}, result_->model);
    return p;
  }

  static inline TrainConfig cfg_;
  static inline std::unique_ptr<TrainResult<float>> result_;
  testutil::TempDir dir_{"ckpt"};
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const auto ck = load_checkpoint<float>(saved());
  EXPECT_TRUE(same_parameters(ck.model, result_->model));
  EXPECT_EQ(ck.meta.epoch, 1);
  EXPECT_EQ(ck.meta.rng_state, result_->rng_state);
  EXPECT_EQ(json(ck.meta.config), json(cfg_));
  const auto a = score_test_split(result_->model, cfg_);
  const auto b = score_test_split(ck.model, ck.meta.config);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].news, b[i].news);
    for (std::size_t j = 0; j < a[i].scores.size(); ++j) {
      EXPECT_EQ(a[i].scores[j].click, b[i].scores[j].click);
      EXPECT_EQ(a[i].scores[j].finish, b[i].scores[j].finish);
      EXPECT_EQ(a[i].scores[j].dwell, b[i].scores[j].dwell);
    }
  }
}

TEST_F(CheckpointTest, SavingTwiceGivesIdenticalBytes) {
  const auto p = saved();
  const std::string first = testutil::slurp(p);
  EXPECT_EQ(testutil::slurp(saved()), first);
}

TEST_F(CheckpointTest, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint<float>(dir_ / "nope.ckpt"), IoError);
}

TEST_F(CheckpointTest, VersionMismatchIsRejected) {
  const auto p = saved();
  std::string bytes = testutil::slurp(p);
  bytes[8] = static_cast<char>(kCheckpointVersion + 1);
  testutil::spit(p, bytes);
  try {
    load_checkpoint<float>(p);
    FAIL() << "expected an integrity error";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, CorruptionIsDetected) {
  const auto p = saved();
  const std::string good = testutil::slurp(p);
  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  testutil::spit(p, flipped);
  EXPECT_THROW(load_checkpoint<float>(p), IntegrityError);
  testutil::spit(p, good.substr(0, good.size() - 100));
  EXPECT_THROW(load_checkpoint<float>(p), IntegrityError);
  testutil::spit(p, "not a checkpoint");
  EXPECT_THROW(load_checkpoint<float>(p), IntegrityError);
}

TEST_F(CheckpointTest, ScalarTypeMismatchIsRejected) {
  EXPECT_THROW(load_checkpoint<double>(saved()), IntegrityError);
}

// --- data preparation ------------------------------------------------------

TEST(Split, FractionsAndOrder) {
  std::vector<ImpressionLog> imps;
  for (int i = 0; i < 100; ++i) imps.push_back({"i" + std::to_string(i), "u", {"a", "b"}, {"a"}, 1000 - i});
  const auto s = chronological_split(imps);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.validation.size(), 5u);
  EXPECT_EQ(s.test.size(), 25u);
  EXPECT_LE(s.train.back().timestamp, s.validation.front().timestamp);
  EXPECT_LE(s.validation.back().timestamp, s.test.front().timestamp);
  EXPECT_EQ(s.test.back().timestamp, 1000);
  EXPECT_THROW(chronological_split(imps, 0.9, 0.1), ConfigError);
  EXPECT_THROW(chronological_split(imps, -0.1, 0.1), ConfigError);
}

TEST(PrepareData, DroppedTypesLeaveHistories) {
  TrainConfig cfg = small_train();
  cfg.drop_feedback = {FeedbackType::kShare, FeedbackType::kSkip};
  const PreparedData d = prepare_data(small_corpus(), cfg);
  std::size_t total = 0;
  for (int u = 0; u < 30; ++u) {
    for (const auto& r : d.index.records_of(std::to_string(u))) {
      ++total;
      EXPECT_NE(r.type, FeedbackType::kShare);
      EXPECT_NE(r.type, FeedbackType::kSkip);
    }
  }
  EXPECT_GT(total, 0u);
}

TEST(Scoring, SkipOnlyHistoryGivesFiniteScores) {
  Corpus c;
  c.news = {{"a", {1, 2, 3}, 0}, {"b", {4, 5}, 0}, {"c", {6, 7, 8}, 0}};
  c.feedback = {{"u", "a", FeedbackType::kSkip, 10, std::nullopt},
                {"u", "b", FeedbackType::kSkip, 20, std::nullopt}};
  ModelConfig mc = GradFixture::config();
  FeedRecModel<double> model(mc, 1);
  FeedIndex index(c, HistoryOptions{10.0, 1.0, 1, {}});
  const std::vector<ScoreRequest> reqs = {{"u", 100, {"a", "b", "c"}}, {"nobody", 100, {"a", "c"}}};
  const auto s = score_requests(model, index, encode_catalog(model, index), std::span<const ScoreRequest>(reqs), {});
  for (const auto& sc : s[0].scores) EXPECT_TRUE(std::isfinite(sc.click));
  for (const auto& sc : s[1].scores) {
    EXPECT_EQ(sc.click, 0.0);
    EXPECT_EQ(sc.finish, 0.0);
    EXPECT_EQ(sc.dwell, 0.0);
  }
}
