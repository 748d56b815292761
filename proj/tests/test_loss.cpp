#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mico/loss.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mico;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

LossConfig cfg_of(double tau, int k, SimilarityKind kind = SimilarityKind::cosine) { return LossConfig{tau, k, kind}; }

}  // namespace

TEST(Similarity, IdenticalUnitVectorsHaveCosineOne) {
  EXPECT_DOUBLE_EQ(similarity(vec({1, 0}), vec({1, 0}), SimilarityKind::cosine), 1.0);
}

TEST(Similarity, OrthogonalVectorsHaveCosineZero) {
  EXPECT_DOUBLE_EQ(similarity(vec({1, 0}), vec({0, 1}), SimilarityKind::cosine), 0.0);
}

TEST(Similarity, DotProduct) { EXPECT_DOUBLE_EQ(similarity(vec({1, 2}), vec({3, 4}), SimilarityKind::dot), 11.0); }

TEST(Similarity, DimensionMismatchThrows) {
  EXPECT_THROW(similarity(vec({1, 2}), vec({1, 2, 3}), SimilarityKind::dot), InputError);
}

TEST(Similarity, CosineWithZeroVectorThrows) {
  EXPECT_THROW(similarity(vec({0, 0}), vec({1, 2}), SimilarityKind::cosine), InputError);
}

TEST(Similarity, MatrixMatchesPairwiseAndStaysInRange) {
  std::mt19937_64 rng(3);
  MatrixXd A = support::to_mat(oracle::random_rows(5, 7, rng));
  MatrixXd B = support::to_mat(oracle::random_rows(6, 7, rng));
  MatrixXd C = similarity_matrix<double>(A, B, SimilarityKind::cosine);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) {
      EXPECT_NEAR(C(i, j), oracle::cosine(support::to_rows(A)[i], support::to_rows(B)[j]), 1e-12);
      EXPECT_LE(std::abs(C(i, j)), 1.0 + 1e-12);
    }
}

TEST(ParseSimilarity, AcceptsKnownNamesOnly) {
  EXPECT_EQ(parse_similarity("cosine"), SimilarityKind::cosine);
  EXPECT_EQ(parse_similarity("dot"), SimilarityKind::dot);
  EXPECT_THROW(parse_similarity("l2"), ConfigError);
}

TEST(LossConfig, RejectsBadValues) {
  EXPECT_THROW(cfg_of(0.0, 1).validate(), ConfigError);
  EXPECT_THROW(cfg_of(-1.0, 1).validate(), ConfigError);
  EXPECT_THROW(cfg_of(0.07, 0).validate(), ConfigError);
}

TEST(InfoNce, TwoSampleClosedForm) {
  MatrixXd sims(2, 2);
  sims << 1, 0, 0, 1;
  const double expected = std::log1p(std::exp(-1.0 / 0.07));
  const double got = info_nce_from_sims<double>(sims, 0.07);
  EXPECT_NEAR(got, expected, 1e-15);
  EXPECT_NEAR(got, 6.2487e-7, 1e-11);  // e^(-1/0.07), by hand
}

TEST(InfoNce, OrthonormalEmbeddingsReproduceTheClosedForm) {
  MatrixXd S(2, 2), G(2, 2);
  S << 1, 0, 0, 1;
  G << 1, 0, 0, 1;
  EXPECT_NEAR(info_nce<double>(S, G, cfg_of(0.07, 1)).value, std::log1p(std::exp(-1.0 / 0.07)), 1e-15);
}

TEST(InfoNce, UniformSimilaritiesGiveLogN) {
  for (int n : {2, 8, 196}) {
    MatrixXd sims = MatrixXd::Constant(n, n, 0.3);
    EXPECT_NEAR(info_nce_from_sims<double>(sims, 0.07), std::log(static_cast<double>(n)), 1e-12) << "N=" << n;
  }
}

TEST(InfoNce, SingleSampleBatchThrows) {
  MatrixXd S = MatrixXd::Ones(1, 3);
  EXPECT_THROW(info_nce<double>(S, S, cfg_of(0.07, 1)), InputError);
}

TEST(InfoNce, DecreasesAsThePositiveSimilarityGrows) {
  MatrixXd sims = MatrixXd::Constant(4, 4, 0.1);
  double prev = info_nce_from_sims<double>(sims, 0.07);
  for (double p : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    sims(0, 0) = p;
    double cur = info_nce_from_sims<double>(sims, 0.07);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(InfoNce, MatchesNaiveDefinition) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto S = oracle::random_rows(6, 5, rng);
    auto G = oracle::random_rows(6, 5, rng);
    for (bool cos : {true, false}) {
      const double tau = cos ? 0.07 : 2.0;
      auto kind = cos ? SimilarityKind::cosine : SimilarityKind::dot;
      double got = info_nce<double>(support::to_mat(S), support::to_mat(G), cfg_of(tau, 1, kind)).value;
      EXPECT_NEAR(got, oracle::info_nce(S, G, tau, cos), 1e-9 * std::max(1.0, got));
    }
  }
}

TEST(InfoNce, LargeLogitsStayFinite) {
  MatrixXd S(2, 2), G(2, 2);
  S << 100, 0, 0, 100;
  G << 100, 1, 1, 100;
  auto r = info_nce<double>(S, G, cfg_of(0.07, 1, SimilarityKind::dot), true);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(r.grad_premises.allFinite());
}

TEST(HardPositive, PicksTheLeastSimilarCandidate) {
  // s = e1; candidates at cosine 0.9 and 0.1 from s.
  VectorXd s = vec({1, 0});
  MatrixXd cands(2, 2);
  cands << 0.9, std::sqrt(1 - 0.81), 0.1, std::sqrt(1 - 0.01);
  EXPECT_EQ(select_hard_positive<double>(s, cands, cfg_of(0.07, 2)).index, 1);
}

TEST(HardPositive, SingleCandidateIsAlwaysIndexZero) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    auto rows = oracle::random_rows(2, 4, rng);
    VectorXd s = support::to_mat({rows[0]}).row(0).transpose();
    MatrixXd c = support::to_mat({rows[1]});
    EXPECT_EQ(select_hard_positive<double>(s, c, cfg_of(0.07, 1)).index, 0);
  }
}

TEST(HardPositive, TiesGoToTheLowestIndex) {
  VectorXd s = vec({1, 0});
  MatrixXd c(3, 2);
  c << 1, 0, 0, 1, 0, 2;  // cosine 1, 0, 0
  auto hp = select_hard_positive<double>(s, c, cfg_of(0.07, 3));
  EXPECT_EQ(hp.index, 1);
  EXPECT_EQ(hp.embedding, c.row(1).transpose());
}

TEST(HardPositive, AgreesWithExhaustiveArgmin) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    auto rows = oracle::random_rows(5, 6, rng);
    VectorXd s = support::to_mat({rows[0]}).row(0).transpose();
    oracle::Rows cand(rows.begin() + 1, rows.end());
    std::vector<double> sims;
    for (const auto& c : cand) sims.push_back(oracle::cosine(rows[0], c));
    ASSERT_EQ(select_hard_positive<double>(s, support::to_mat(cand), cfg_of(0.07, 4)).index, oracle::argmin_exhaustive(sims))
        << "seed " << seed;
  }
}

TEST(MicoLoss, ReducesToInfoNceForSingleAlternative) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd S = support::to_mat(oracle::random_rows(8, 16, rng));
    MatrixXd G = support::to_mat(oracle::random_rows(8, 16, rng));
    double a = mico_loss<double>(S, G, cfg_of(0.07, 1)).value;
    double b = info_nce<double>(S, G, cfg_of(0.07, 1)).value;
    ASSERT_LT(std::abs(a - b), 1e-9);
  }
}

TEST(MicoLoss, HandSetTwoByTwoExample) {
  // Row i holds sims of s_i against g_{0,0}, g_{0,1}, g_{1,0}, g_{1,1}.
  MatrixXd sims(2, 4);
  sims << 0.9, 0.2, 0.0, 0.0,  //
      0.0, 0.0, 0.8, 0.8;
  std::vector<int> hard = {argmin_first(sims.row(0).segment(0, 2)), argmin_first(sims.row(1).segment(2, 2))};
  ASSERT_EQ(hard, (std::vector<int>{1, 0}));
  const double L0 = -std::log(std::exp(0.2) / (std::exp(0.2) + 2 * std::exp(0.0)));
  const double L1 = -std::log(std::exp(0.8) / (std::exp(0.8) + 2 * std::exp(0.0)));
  EXPECT_NEAR(mico_loss_from_sims<double>(sims, hard, 2, 1.0), (L0 + L1) / 2, 1e-14);
}

TEST(MicoLoss, DuplicatingCandidatesOnlyDoublesTheNegativeMass) {
  // N=2; own candidates at similarity p_i, all cross similarities c.
  const double tau = 0.5, c = 0.1;
  const double p[2] = {0.7, 0.4};
  for (int k : {1, 2, 3}) {
    auto build = [&](int kk) {
      MatrixXd sims = MatrixXd::Constant(2, 2 * kk, c);
      for (int i = 0; i < 2; ++i)
        for (int o = 0; o < kk; ++o) sims(i, i * kk + o) = p[i];
      return sims;
    };
    MatrixXd a = build(k), b = build(2 * k);
    std::vector<int> hard_a(2), hard_b(2);
    for (int i = 0; i < 2; ++i) {
      hard_a[static_cast<std::size_t>(i)] = argmin_first(a.row(i).segment(i * k, k));
      hard_b[static_cast<std::size_t>(i)] = argmin_first(b.row(i).segment(i * 2 * k, 2 * k));
    }
    EXPECT_EQ(hard_a, hard_b);
    double expected_increase = 0;
    for (double pi : p) {
      const double pos = std::exp(pi / tau), neg = k * std::exp(c / tau);
      expected_increase += std::log((pos + 2 * neg) / (pos + neg)) / 2;
    }
    const double la = mico_loss_from_sims<double>(a, hard_a, k, tau);
    const double lb = mico_loss_from_sims<double>(b, hard_b, 2 * k, tau);
    EXPECT_NEAR(lb - la, expected_increase, 1e-13) << "k=" << k;
  }
}

TEST(MicoLoss, MatchesNaiveDefinition) {
  std::mt19937_64 rng(31);
  for (int k : {1, 2, 4})
    for (int trial = 0; trial < 30; ++trial) {
      auto S = oracle::random_rows(5, 6, rng);
      auto G = oracle::random_rows(5 * static_cast<std::size_t>(k), 6, rng);
      double got = mico_loss<double>(support::to_mat(S), support::to_mat(G), cfg_of(0.07, k)).value;
      EXPECT_NEAR(got, oracle::mico_loss(S, G, k, 0.07), 1e-9 * std::max(1.0, got));
    }
}

TEST(MicoLoss, UniformSimilaritiesClosedForm) {
  for (int n : {2, 8, 196})
    for (int k : {1, 2, 4}) {
      MatrixXd sims = MatrixXd::Constant(n, n * k, -0.2);
      std::vector<int> hard(static_cast<std::size_t>(n), 0);
      EXPECT_NEAR(mico_loss_from_sims<double>(sims, hard, k, 0.07), std::log(1.0 + (n - 1.0) * k), 1e-9);
    }
}

TEST(MicoLoss, ShapeAndBatchErrors) {
  MatrixXd S = MatrixXd::Random(3, 4), G = MatrixXd::Random(5, 4);
  EXPECT_THROW(mico_loss<double>(S, G, cfg_of(0.07, 2)), InputError);
  MatrixXd S1 = MatrixXd::Random(1, 4), G1 = MatrixXd::Random(2, 4);
  EXPECT_THROW(mico_loss<double>(S1, G1, cfg_of(0.07, 2)), InputError);
}

TEST(Losses, AreNonNegative) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd S = support::to_mat(oracle::random_rows(4, 3, rng));
    MatrixXd G = support::to_mat(oracle::random_rows(8, 3, rng));
    EXPECT_GE(info_nce<double>(S, G.topRows(4), cfg_of(0.07, 1)).value, 0.0);
    EXPECT_GE(mico_loss<double>(S, G, cfg_of(0.07, 2)).value, 0.0);
  }
}

TEST(Losses, CosineScaleInvariance) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd S = support::to_mat(oracle::random_rows(4, 5, rng));
    MatrixXd G = support::to_mat(oracle::random_rows(8, 5, rng));
    auto base = mico_loss<double>(S, G, cfg_of(0.07, 2));
    MatrixXd S2 = S, G2 = G;
    S2.row(trial % 4) *= scale(rng);
    G2.row(trial % 8) *= scale(rng);
    auto scaled = mico_loss<double>(S2, G2, cfg_of(0.07, 2));
    EXPECT_NEAR(base.value, scaled.value, 1e-10);
    EXPECT_EQ(base.hard_positive, scaled.hard_positive);
  }
}

// Analytic gradients against central differences of the naive oracle. Random
// candidates are never near a tie, so the oracle's argmin matches the frozen choice.
class LossGradient : public ::testing::TestWithParam<std::tuple<int, SimilarityKind>> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
  const auto [k, kind] = GetParam();
  const bool cos = kind == SimilarityKind::cosine;
  const double tau = cos ? 0.07 : 1.0;
  std::mt19937_64 rng(61 + static_cast<unsigned>(k));
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 4, d = 3;
    MatrixXd S = support::to_mat(oracle::random_rows(4, 3, rng));
    MatrixXd G = support::to_mat(oracle::random_rows(4 * static_cast<std::size_t>(k), 3, rng));
    auto res = mico_loss<double>(S, G, cfg_of(tau, k, kind), true);
    std::vector<double> x = support::flatten(S);
    auto g = support::flatten(G);
    x.insert(x.end(), g.begin(), g.end());
    auto f = [&](const std::vector<double>& v) {
      return oracle::mico_loss(support::to_rows(support::unflatten(v, n, d)),
                               support::to_rows(support::unflatten(v, n * k, d, static_cast<std::size_t>(n * d))), k, tau, cos);
    };
    auto numeric = oracle::numeric_gradient(x, f, 1e-4);
    auto analytic = support::flatten(res.grad_premises);
    auto ga = support::flatten(res.grad_alternatives);
    analytic.insert(analytic.end(), ga.begin(), ga.end());
    EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4) << "trial " << trial;

    if (k == 1) {
      auto r1 = info_nce<double>(S, G, cfg_of(tau, 1, kind), true);
      auto f1 = [&](const std::vector<double>& v) {
        return oracle::info_nce(support::to_rows(support::unflatten(v, n, d)),
                                support::to_rows(support::unflatten(v, n, d, static_cast<std::size_t>(n * d))), tau, cos);
      };
      auto num1 = oracle::numeric_gradient(x, f1, 1e-4);
      auto an1 = support::flatten(r1.grad_premises);
      auto g1 = support::flatten(r1.grad_alternatives);
      an1.insert(an1.end(), g1.begin(), g1.end());
      EXPECT_LT(oracle::max_relative_error(an1, num1), 1e-4) << "trial " << trial;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(KAndKind, LossGradient,
                         ::testing::Combine(::testing::Values(1, 2, 4),
                                            ::testing::Values(SimilarityKind::cosine, SimilarityKind::dot)));
