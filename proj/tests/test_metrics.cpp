#include <random>

#include <gtest/gtest.h>

#include "feedrec/metrics.hpp"

using namespace feedrec;

namespace {

RankedImpression make(std::vector<double> scores, std::vector<int> clicked) {
  RankedImpression imp;
  imp.impression_id = "i";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    RankedCandidate c;
    c.news_id = "n" + std::to_string(i);
    c.score = scores[i];
    imp.candidates.push_back(c);
  }
  for (int c : clicked) imp.candidates[static_cast<std::size_t>(c)].clicked = true;
  return imp;
}

// Up to 10 candidates, scores on a coarse grid so ties happen often.
std::vector<RankedImpression> random_fixture(std::mt19937_64& rng, int n_imps) {
  std::uniform_int_distribution<int> size(2, 10);
  std::uniform_int_distribution<int> grid(0, 6);
  std::bernoulli_distribution click(0.3);
  std::vector<RankedImpression> out;
  for (int i = 0; i < n_imps; ++i) {
    RankedImpression imp;
    imp.impression_id = std::to_string(i);
    const int n = size(rng);
    for (int j = 0; j < n; ++j) {
      RankedCandidate c;
      c.news_id = std::to_string(j);
      c.score = grid(rng) * 0.5;
      c.clicked = click(rng);
      imp.candidates.push_back(c);
    }
    out.push_back(std::move(imp));
  }
  return out;
}

void expect_same(const ClickMetrics& a, const ClickMetrics& b, double tol) {
  EXPECT_NEAR(a.auc, b.auc, tol);
  EXPECT_NEAR(a.mrr, b.mrr, tol);
  EXPECT_NEAR(a.ndcg5, b.ndcg5, tol);
  EXPECT_NEAR(a.hr5, b.hr5, tol);
  EXPECT_EQ(a.auc_impressions, b.auc_impressions);
  EXPECT_EQ(a.rank_impressions, b.rank_impressions);
  EXPECT_EQ(a.excluded_auc, b.excluded_auc);
  EXPECT_EQ(a.excluded_rank, b.excluded_rank);
}

}  // namespace

TEST(ClickMetrics, PerfectRanking) {
  const std::vector<RankedImpression> imps = {make({5, 4, 3, 2, 1}, {0})};
  const ClickMetrics m = click_metrics(imps);
  EXPECT_EQ(m.auc, 1.0);
  EXPECT_EQ(m.mrr, 1.0);
  EXPECT_EQ(m.ndcg5, 1.0);
  EXPECT_EQ(m.hr5, 1.0);
}

TEST(ClickMetrics, PositiveRankedSecond) {
  const std::vector<RankedImpression> imps = {make({5, 4, 3, 2, 1}, {1})};
  const ClickMetrics m = click_metrics(imps);
  EXPECT_DOUBLE_EQ(m.mrr, 0.5);
  EXPECT_NEAR(m.ndcg5, 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(m.ndcg5, 0.6309, 5e-5);
  EXPECT_DOUBLE_EQ(m.auc, 0.75);
  EXPECT_EQ(m.hr5, 1.0);
}

TEST(ClickMetrics, PositiveBelowTopFive) {
  const std::vector<RankedImpression> imps = {make({6, 5, 4, 3, 2, 1}, {5})};
  const ClickMetrics m = click_metrics(imps);
  EXPECT_EQ(m.hr5, 0.0);
  EXPECT_EQ(m.ndcg5, 0.0);
  EXPECT_DOUBLE_EQ(m.mrr, 1.0 / 6.0);
  EXPECT_EQ(m.auc, 0.0);
}

TEST(ClickMetrics, DegenerateImpressionsAreCounted) {
  const std::vector<RankedImpression> imps = {make({1, 2, 3}, {}), make({1, 2}, {0, 1}),
                                              make({1, 2}, {1})};
  const ClickMetrics m = click_metrics(imps);
  EXPECT_EQ(m.excluded_auc, 2u);
  EXPECT_EQ(m.excluded_rank, 1u);
  EXPECT_EQ(m.auc_impressions, 1u);
  EXPECT_EQ(m.rank_impressions, 2u);
  EXPECT_EQ(m.auc, 1.0);
}

TEST(ClickMetrics, TiesHalfForAucAndInputOrderForRanking) {
  const std::vector<RankedImpression> imps = {make({1, 1}, {1})};
  const ClickMetrics m = click_metrics(imps);
  EXPECT_EQ(m.auc, 0.5);
  EXPECT_EQ(m.mrr, 0.5);  // the clicked item comes second in input order
}

TEST(ClickMetrics, SinglePairAucIsZeroHalfOrOne) {
  for (double s : {0.0, 1.0, 2.0}) {
    const std::vector<RankedImpression> imps = {make({1.0, s}, {0})};
    const double auc = click_metrics(imps).auc;
    EXPECT_EQ(auc, s < 1.0 ? 1.0 : (s == 1.0 ? 0.5 : 0.0));
  }
}

TEST(ClickMetrics, NonFiniteScoreIsInputError) {
  const std::vector<RankedImpression> imps = {make({1, NAN}, {0})};
  EXPECT_THROW(click_metrics(imps), InputError);
  EXPECT_THROW(oracle_metrics(imps), InputError);
}

TEST(ClickMetrics, MatchesOracleOnRandomFixtures) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto imps = random_fixture(rng, 8);
    expect_same(click_metrics(imps), oracle_metrics(imps), 1e-9);
  }
}

TEST(ClickMetrics, RandomScoresGiveChanceAuc) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<RankedImpression> imps;
  for (int i = 0; i < 5000; ++i) {
    std::vector<double> scores(10);
    for (double& s : scores) s = u(rng);
    imps.push_back(make(scores, {static_cast<int>(i % 10)}));
  }
  const double auc = click_metrics(imps).auc;
  EXPECT_GE(auc, 0.48);
  EXPECT_LE(auc, 0.52);
}

TEST(ClickMetrics, BoundedAndInvariantToMonotoneTransforms) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    auto imps = random_fixture(rng, 6);
    const ClickMetrics m = click_metrics(imps);
    for (double v : {m.auc, m.mrr, m.ndcg5, m.hr5}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (auto& imp : imps) {
      for (auto& c : imp.candidates) c.score = std::exp(3.0 * c.score) - 7.0;
    }
    expect_same(click_metrics(imps), m, 1e-12);
  }
}

TEST(ClickMetrics, PermutingDistinctScoresChangesNothing) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(8);
    for (double& s : scores) s = u(rng);
    std::vector<RankedImpression> imps = {make(scores, {1, 4})};
    const ClickMetrics m = click_metrics(imps);
    std::shuffle(imps[0].candidates.begin(), imps[0].candidates.end(), rng);
    expect_same(click_metrics(imps), m, 1e-12);
  }
}

TEST(ClickMetrics, MovingAClickUpNeverHurts) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto imps = random_fixture(rng, 1);
    auto& c = imps[0].candidates;
    const auto order = ranking_order(imps[0]);
    // Swap scores of a clicked item and an unclicked item ranked above it.
    for (std::size_t hi = 0; hi < order.size(); ++hi) {
      for (std::size_t lo = hi + 1; lo < order.size(); ++lo) {
        if (c[order[hi]].clicked || !c[order[lo]].clicked) continue;
        const ClickMetrics before = click_metrics(imps);
        auto swapped = imps;
        std::swap(swapped[0].candidates[order[hi]].score, swapped[0].candidates[order[lo]].score);
        const ClickMetrics after = click_metrics(swapped);
        EXPECT_GE(after.mrr, before.mrr - 1e-12);
        EXPECT_GE(after.ndcg5, before.ndcg5 - 1e-12);
        EXPECT_GE(after.hr5, before.hr5);
      }
    }
  }
}

// --- engagement ----------------------------------------------------------

TEST(Engagement, HandBuiltShareRatio) {
  // Three impressions of six; shares at ranks 1 and 2, a dislike at rank 6.
  std::vector<RankedImpression> imps = {make({6, 5, 4, 3, 2, 1}, {0}), make({6, 5, 4, 3, 2, 1}, {1}),
                                        make({6, 5, 4, 3, 2, 1}, {})};
  imps[0].candidates[0].shared = true;
  imps[1].candidates[1].shared = true;
  imps[2].candidates[5].disliked = true;
  imps[0].candidates[0].finished = true;
  imps[0].candidates[0].dwell_time = 100;
  imps[1].candidates[1].dwell_time = 20;
  const EngagementTotals totals = engagement_totals(imps);
  EXPECT_EQ(totals.shown, 18u);
  const EngagementMetrics m = engagement_metrics(imps, totals);
  EXPECT_EQ(m.top_items, 15u);
  ASSERT_TRUE(m.share_ratio);
  EXPECT_NEAR(*m.share_ratio, (2.0 / 15.0) / (2.0 / 18.0), 1e-12);
  EXPECT_NEAR(*m.share_ratio, 1.2, 1e-12);
  ASSERT_TRUE(m.dislike_ratio);
  EXPECT_EQ(*m.dislike_ratio, 0.0);
  ASSERT_TRUE(m.finish_rate);
  EXPECT_DOUBLE_EQ(*m.finish_rate, 0.5);
  ASSERT_TRUE(m.mean_dwell);
  EXPECT_DOUBLE_EQ(*m.mean_dwell, 60.0);
}

TEST(Engagement, AbsentWhenUndefined) {
  const std::vector<RankedImpression> imps = {make({6, 5, 4, 3, 2, 1}, {5})};
  const EngagementMetrics m = engagement_metrics(imps, engagement_totals(imps));
  EXPECT_FALSE(m.finish_rate);
  EXPECT_FALSE(m.mean_dwell);
  EXPECT_FALSE(m.share_ratio);
  EXPECT_FALSE(m.dislike_ratio);
  EXPECT_EQ(m.top_clicked, 0u);
}

TEST(Engagement, ScoresIndependentOfSharesGiveUnitRatio) {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution share(0.05);
  std::vector<RankedImpression> imps;
  for (int i = 0; i < 20000; ++i) {
    RankedImpression imp;
    imp.impression_id = std::to_string(i);
    for (int j = 0; j < 10; ++j) {
      RankedCandidate c;
      c.score = u(rng);
      c.shared = share(rng);
      imp.candidates.push_back(c);
    }
    imps.push_back(std::move(imp));
  }
  const EngagementMetrics m = engagement_metrics(imps, engagement_totals(imps));
  ASSERT_TRUE(m.share_ratio);
  EXPECT_GE(*m.share_ratio, 0.95);
  EXPECT_LE(*m.share_ratio, 1.05);
}
