#include <cstdio>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "feedrec/commands.hpp"
#include "test_util.hpp"

using namespace feedrec;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.generator.n_users = 25;
  c.generator.n_news = 150;
  c.generator.n_impressions = 250;
  c.generator.seed = 3;
  c.training.model.dim = 16;
  c.training.model.heads = 2;
  c.training.model.ffn_dim = 16;
  c.training.epochs = 1;
  c.training.learning_rate = 1e-3;
  c.training.validate_each_epoch = false;
  return c;
}

struct CommandResult {
  int code = 0;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FEEDREC_CLI) + " " + args + " 2>&1";
  CommandResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {-1, "popen failed"};
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

// --- configuration ---------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const json j(c);
  EXPECT_EQ(json(run_config_from_json(j)), j);
  const RunConfig t = tiny_run();
  EXPECT_EQ(json(run_config_from_json(json(t))), json(t));
}

TEST(Config, DefaultsMatchDocumentedValues) {
  const TrainConfig t;
  EXPECT_EQ(t.learning_rate, 1e-4);
  EXPECT_EQ(t.batch_size, 32);
  EXPECT_EQ(t.epochs, 3);
  EXPECT_EQ(t.dropout, 0.2);
  EXPECT_EQ(t.negatives, 4);
  EXPECT_EQ(t.quick_close_threshold, 10.0);
  EXPECT_EQ(t.skip_subsample, 0.1);
  EXPECT_EQ(t.test_fraction, 0.25);
  EXPECT_EQ(t.validation_fraction, 0.05);
  EXPECT_EQ(t.model.dim, 256);
  EXPECT_EQ(t.model.heads, 16);
  EXPECT_EQ(t.model.max_seq, 50);
  EXPECT_EQ(t.model.title_len, 30);
}

TEST(Config, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(json(run_config_from_json(json::object())), json(RunConfig{}));
}

TEST(Config, UnknownKeysAreRejected) {
  for (const char* bad : {R"({"trainng": {}})", R"({"training": {"bogus": 1}})",
                          R"({"training": {"model": {"width": 3}}})", R"({"generator": {"n_user": 3}})",
                          R"({"evaluation": {"spilt": "test"}})"}) {
    EXPECT_THROW(run_config_from_json(json::parse(bad)), ConfigError) << bad;
  }
}

TEST(Config, BadValuesAreRejected) {
  for (const char* bad : {R"({"training": {"epochs": "three"}})", R"({"training": {"learning_rate": -1}})",
                          R"({"generator": {"n_users": 0}})", R"({"evaluation": {"split": "train"}})",
                          R"({"training": {"drop_feedback": ["nope"]}})",
                          R"({"ablation": {"t_sweep": [0]}})"}) {
    EXPECT_THROW(run_config_from_json(json::parse(bad)), Error) << bad;
  }
}

TEST(Config, EveryTrainingFieldIsAddressable) {
  const json defaults = json(TrainConfig{});
  for (const auto& [key, value] : defaults.items()) {
    json j = {{"training", {{key, value}}}};
    EXPECT_NO_THROW(run_config_from_json(j)) << key;
  }
  const json gen = json(GeneratorConfig{});
  for (const auto& [key, value] : gen.items()) {
    json j = {{"generator", {{key, value}}}};
    EXPECT_NO_THROW(run_config_from_json(j)) << key;
  }
}

TEST(Config, HashIsStableAndSensitive) {
  const TrainConfig a;
  TrainConfig b;
  EXPECT_EQ(config_hash(json(a)), config_hash(json(b)));
  EXPECT_EQ(config_hash(json(a)).size(), 8u);
  b.seed += 1;
  EXPECT_NE(config_hash(json(a)), config_hash(json(b)));
}

TEST(Config, MissingFileIsIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/feedrec.json"), IoError);
  testutil::TempDir dir("cfg");
  testutil::spit(dir / "broken.json", "{ not json");
  EXPECT_THROW(load_run_config((dir / "broken.json").string()), ConfigError);
}

// --- ablation matrix -------------------------------------------------------

TEST(Ablation, VariantsHaveDistinctHashesAndExpectedMembers) {
  const RunConfig cfg;
  const auto v = ablation_variants(cfg);
  std::set<std::string> names, hashes;
  std::map<std::string, int> per_family;
  for (const auto& x : v) {
    names.insert(x.name);
    hashes.insert(config_hash(json(x.config)));
    ++per_family[x.family];
  }
  EXPECT_EQ(names.size(), v.size());
  EXPECT_EQ(hashes.size(), v.size());
  EXPECT_EQ(per_family["full"], 1);
  EXPECT_EQ(per_family["feedback"], 6);
  EXPECT_EQ(per_family["loss"], 3);
  EXPECT_EQ(per_family["component"], 3);
  EXPECT_EQ(per_family["embedding"], 4);
  EXPECT_EQ(per_family["threshold"], 4);  // base T=10 is the full model
  EXPECT_EQ(per_family["baseline"], 1);
  EXPECT_EQ(v.front().name, "full");
  EXPECT_EQ(json(v.front().config), json(cfg.training));
}

TEST(Ablation, ClickOnlyKeepsClicksAndSkips) {
  const TrainConfig c = click_only(TrainConfig{});
  EXPECT_EQ(c.drop_feedback.size(), 4u);
  EXPECT_FALSE(c.drop_feedback.contains(FeedbackType::kClick));
  EXPECT_FALSE(c.drop_feedback.contains(FeedbackType::kSkip));
  EXPECT_EQ(c.weights.alpha, 0.0);
  EXPECT_EQ(c.weights.beta, 0.0);
  EXPECT_EQ(c.weights.gamma, 0.0);
  EXPECT_TRUE(c.options.disable_dwell);
}

TEST(Ablation, SvgChartHasOneBarPerLabel) {
  const std::string svg = bar_chart_svg("t", {"a", "b", "c"}, {0.5, NAN, 0.7});
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  std::size_t bars = 0;
  for (auto p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++bars;
  EXPECT_GE(bars, 2u);
}

// --- commands in process ---------------------------------------------------

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<testutil::TempDir>("commands");
    std::ostringstream log;
    cmd_generate(tiny_run(), corpus(), log);
    cmd_train(tiny_run(), corpus(), run(), log);
  }
  static void TearDownTestSuite() { dir_.reset(); }
  static std::filesystem::path corpus() { return *dir_ / "corpus"; }
  static std::filesystem::path run() { return *dir_ / "run"; }

  static inline std::unique_ptr<testutil::TempDir> dir_;
};

TEST_F(Commands, OutputsAndEchoedConfig) {
  for (const char* f : {kNewsFile, kImpressionsFile, kFeedbackFile, "stats.json", "config.json"}) {
    EXPECT_TRUE(std::filesystem::exists(corpus() / f)) << f;
  }
  for (const char* f : {"model.ckpt", "report.json", "config.json"}) {
    EXPECT_TRUE(std::filesystem::exists(run() / f)) << f;
  }
  EXPECT_EQ(run_config_from_json(json::parse(testutil::slurp(run() / "config.json"))).training.seed,
            tiny_run().training.seed);
  const json report = json::parse(testutil::slurp(run() / "report.json"));
  EXPECT_EQ(report["epochs"].size(), 1u);
  EXPECT_EQ(report["config_hash"], config_hash(json(tiny_run().training)));
  EXPECT_TRUE(report["initial_train_loss"]["total"].is_number());
}

TEST_F(Commands, EvaluateTwiceGivesIdenticalFiles) {
  std::ostringstream log;
  const EvaluationConfig e;
  cmd_evaluate(run() / "model.ckpt", corpus(), *dir_ / "eval_a", e, log);
  cmd_evaluate(run() / "model.ckpt", corpus(), *dir_ / "eval_b", e, log);
  for (const char* f : {"metrics.json", "metrics.txt", "scores.jsonl", "config.json"}) {
    EXPECT_EQ(testutil::slurp(*dir_ / "eval_a" / f), testutil::slurp(*dir_ / "eval_b" / f)) << f;
  }
  const json m = json::parse(testutil::slurp(*dir_ / "eval_a" / "metrics.json"));
  EXPECT_EQ(m["split"], "test");
  EXPECT_GE(m["click"]["auc"].get<double>(), 0.0);
  EXPECT_LE(m["click"]["auc"].get<double>(), 1.0);
}

TEST_F(Commands, RankSortsFiveCandidates) {
  const Corpus c = read_logs(corpus());
  std::vector<std::string> cands;
  for (int i = 0; i < 5; ++i) cands.push_back(c.news[static_cast<std::size_t>(i * 7)].news_id);
  std::ostringstream log;
  const auto rows = cmd_rank(run() / "model.ckpt", corpus(), c.impressions.front().user_id, cands, log);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i - 1].scores.click, rows[i].scores.click);
  std::set<std::string> ids;
  for (const auto& r : rows) ids.insert(r.news_id);
  EXPECT_EQ(ids, std::set<std::string>(cands.begin(), cands.end()));
  EXPECT_THROW(cmd_rank(run() / "model.ckpt", corpus(), "0", {"missing"}, log), InputError);
}

// --- the executable --------------------------------------------------------

TEST_F(Commands, BinaryRankPrintsSortedRows) {
  const Corpus c = read_logs(corpus());
  std::string list;
  for (int i = 0; i < 5; ++i) list += (i ? "," : "") + c.news[static_cast<std::size_t>(i * 3)].news_id;
  const auto r = run_cli("rank --checkpoint " + (run() / "model.ckpt").string() + " --corpus " +
                         corpus().string() + " --user " + c.impressions.front().user_id +
                         " --candidates " + list);
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::vector<double> scores;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    int rank;
    std::string id;
    double y;
    if (fields >> rank >> id >> y) scores.push_back(y);
  }
  ASSERT_EQ(scores.size(), 5u) << r.out;
  EXPECT_TRUE(std::is_sorted(scores.rbegin(), scores.rend()));
}

TEST_F(Commands, BinaryRejectsCorruptCheckpoint) {
  std::string bytes = testutil::slurp(run() / "model.ckpt");
  bytes[bytes.size() / 2] ^= 0x5a;
  const auto bad = *dir_ / "corrupt.ckpt";
  testutil::spit(bad, bytes);
  const auto r = run_cli("evaluate --checkpoint " + bad.string() + " --corpus " + corpus().string() +
                         " --out " + (*dir_ / "eval_bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("integrity"), std::string::npos) << r.out;
}

TEST(Binary, GenerateHonoursOverridesAndSeed) {
  testutil::TempDir dir("cli");
  const auto r = run_cli("generate --out " + (dir / "c").string() +
                         " --set generator.n_users=12 generator.n_news=40 generator.n_impressions=30"
                         " --seed 99");
  ASSERT_EQ(r.code, 0) << r.out;
  const RunConfig echoed = run_config_from_json(json::parse(testutil::slurp(dir / "c" / "config.json")));
  EXPECT_EQ(echoed.generator.n_users, 12);
  EXPECT_EQ(echoed.generator.seed, 99u);
  EXPECT_EQ(echoed.training.seed, 99u);
  EXPECT_EQ(read_logs(dir / "c").impressions.size(), 30u);
}

TEST(Binary, ConfigFileAndErrors) {
  testutil::TempDir dir("cli");
  testutil::spit(dir / "cfg.json", R"({"generator": {"n_users": 10, "n_news": 30, "n_impressions": 20}})");
  EXPECT_EQ(run_cli("generate --config " + (dir / "cfg.json").string() + " --out " + (dir / "c").string()).code, 0);
  EXPECT_EQ(read_logs(dir / "c").impressions.size(), 20u);

  testutil::spit(dir / "bad.json", R"({"training": {"bogus": 1}})");
  const auto bad = run_cli("generate --config " + (dir / "bad.json").string() + " --out " + (dir / "d").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("unknown config key training.bogus"), std::string::npos) << bad.out;

  EXPECT_NE(run_cli("").code, 0);
  EXPECT_NE(run_cli("frobnicate").code, 0);
  EXPECT_NE(run_cli("train --out x").code, 0);  // --corpus missing
  EXPECT_EQ(run_cli("train --corpus " + (dir / "absent").string() + " --out " + (dir / "o").string()).code, 2);
}

TEST(Binary, GradcheckExitCode) {
  const auto r = run_cli("gradcheck --dim 8");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Binary, ThreadCountMustBePositive) {
  testutil::TempDir dir("cli");
  const auto r = run_cli("generate --out " + (dir / "c").string() + " --set generator.n_users=5");
  EXPECT_EQ(r.code, 0) << r.out;
  const std::string cmd = "FEEDREC_THREADS=0 " + std::string(FEEDREC_CLI) + " generate --out " +
                          (dir / "d").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
}
