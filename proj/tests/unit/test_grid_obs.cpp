// Grid interpolation and the log-density observation operator.
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "romda/romda.hpp"

using namespace romda;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.n_lt = 8;
  g.n_lat = 5;
  g.n_alt = 4;
  g.lat_min = -80.0;
  g.lat_max = 80.0;
  g.alt_min = 200.0;
  g.alt_max = 500.0;
  return g;
}

std::vector<double> random_field(const GridSpec& g, oracle::Gen& gen) {
  std::vector<double> f(g.size());
  for (auto& v : f) v = gen.uniform(-13.0, -9.0);
  return f;
}

LatentBasis random_basis(const GridSpec& g, std::size_t r, oracle::Gen& gen) {
  LatentBasis b;
  b.grid = g;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gen.matrix(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(r)));
  b.w = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(r));
  b.mu0 = gen.vector(static_cast<Eigen::Index>(g.size())).array() - 11.0;
  b.snapshot_count = 10;
  b.explained_variance = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(r), 1.0 / static_cast<double>(r));
  return b;
}

}  // namespace

TEST(Trilinear, NodeHitHasSingleUnitWeight) {
  const GridSpec g;  // 72 x 36 x 45
  const auto w = trilinear_weights(g, -87.5, 0.0, 100.0);
  ASSERT_EQ(w.entries.size(), 1u);
  EXPECT_EQ(w.entries[0].index, 0u);
  EXPECT_EQ(w.entries[0].weight, 1.0);

  const auto w2 = trilinear_weights(g, -52.5, 10.0, 320.0);
  ASSERT_EQ(w2.entries.size(), 1u);
  EXPECT_EQ(w2.entries[0].index, g.index(30, 7, 11));
}

TEST(Trilinear, CellCentreSplitsEvenly) {
  const GridSpec g;
  const double lat = g.lat_at(3) + 0.5 * g.lat_step();
  const double lt = g.lt_at(10) + 0.5 * g.lt_step();
  const double alt = g.alt_at(20) + 0.5 * g.alt_step();
  const auto w = trilinear_weights(g, lat, lt, alt);
  ASSERT_EQ(w.entries.size(), 8u);
  for (const auto& e : w.entries) EXPECT_NEAR(e.weight, 0.125, 1e-15);
}

TEST(Trilinear, LocalTimeWrapsBetweenLastAndFirstBin) {
  const GridSpec g;
  oracle::Gen gen(11);
  const auto field = random_field(g, gen);
  const auto w = trilinear_weights(g, 10.0, 23.9, 400.0);
  bool has_last = false, has_first = false;
  for (const auto& e : w.entries) {
    const std::size_t i_lt = e.index / (g.n_lat * g.n_alt);
    has_last |= i_lt == 71;
    has_first |= i_lt == 0;
  }
  EXPECT_TRUE(has_last);
  EXPECT_TRUE(has_first);
  EXPECT_NEAR(w.dot(field), oracle::hat_interpolate(g, field, 10.0, 23.9, 400.0), 1e-12);
}

TEST(Trilinear, MatchesHatFunctionOracleAtRandomPoints) {
  oracle::Gen gen(12);
  const GridSpec g = small_grid();
  const auto field = random_field(g, gen);
  for (int t = 0; t < 2000; ++t) {
    const double lat = gen.uniform(-90.0, 90.0);
    const double lt = gen.uniform(-30.0, 54.0);
    const double alt = gen.uniform(200.0, 500.0);
    const auto w = trilinear_weights(g, lat, lt, alt);
    EXPECT_NEAR(w.dot(field), oracle::hat_interpolate(g, field, lat, lt, alt), 1e-12) << lat << ' ' << lt << ' ' << alt;
  }
}

TEST(Trilinear, PartitionOfUnityOverRandomGrids) {
  oracle::Gen gen(13);
  for (int t = 0; t < 200; ++t) {
    GridSpec g;
    g.n_lt = gen.index(2, 40);
    g.n_lat = gen.index(2, 30);
    g.n_alt = gen.index(2, 30);
    g.lat_min = gen.uniform(-89.0, -10.0);
    g.lat_max = gen.uniform(10.0, 89.0);
    g.alt_min = gen.uniform(100.0, 300.0);
    g.alt_max = gen.uniform(400.0, 980.0);
    for (int k = 0; k < 20; ++k) {
      const auto w = trilinear_weights(g, gen.uniform(-90.0, 90.0), gen.uniform(0.0, 24.0),
                                       gen.uniform(g.alt_min, g.alt_max));
      EXPECT_NEAR(w.sum(), 1.0, 1e-12);
      for (const auto& e : w.entries) {
        EXPECT_GE(e.weight, 0.0);
        EXPECT_LT(e.index, g.size());
      }
    }
  }
}

TEST(Trilinear, ReproducesFieldsLinearInLatitudeAndAltitude) {
  const GridSpec g = small_grid();
  std::vector<double> f(g.size());
  for (std::size_t i = 0; i < g.n_lt; ++i)
    for (std::size_t j = 0; j < g.n_lat; ++j)
      for (std::size_t k = 0; k < g.n_alt; ++k) f[g.index(i, j, k)] = 0.3 * g.lat_at(j) - 0.01 * g.alt_at(k) + 2.0;
  oracle::Gen gen(14);
  for (int t = 0; t < 500; ++t) {
    const double lat = gen.uniform(-80.0, 80.0);
    const double alt = gen.uniform(200.0, 500.0);
    EXPECT_NEAR(trilinear_weights(g, lat, gen.uniform(0.0, 24.0), alt).dot(f), 0.3 * lat - 0.01 * alt + 2.0, 1e-11);
  }
}

TEST(Trilinear, LatitudeBeyondOutermostNodesIsClamped) {
  const GridSpec g;
  oracle::Gen gen(15);
  const auto field = random_field(g, gen);
  EXPECT_EQ(trilinear_weights(g, 89.9, 5.0, 300.0).dot(field), trilinear_weights(g, 87.5, 5.0, 300.0).dot(field));
  EXPECT_EQ(trilinear_weights(g, -90.0, 5.0, 300.0).dot(field), trilinear_weights(g, -87.5, 5.0, 300.0).dot(field));
}

TEST(Trilinear, RejectsBadCoordinates) {
  const GridSpec g;
  try {
    (void)trilinear_weights(g, 0.0, 0.0, 99.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AltitudeOutOfRange);
  }
  try {
    (void)trilinear_weights(g, 0.0, 0.0, 981.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AltitudeOutOfRange);
  }
  try {
    (void)trilinear_weights(g, NAN, 0.0, 400.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteCoordinate);
  }
}

TEST(ObsOperator, ZeroLatentGivesMeanField) {
  oracle::Gen gen(21);
  const GridSpec g = small_grid();
  const auto b = random_basis(g, 3, gen);
  const GeoLocation loc{12.0, 7.3, 333.0};
  const auto op = build_obs_operator(b, loc);
  const std::vector<double> mu(b.mu0.data(), b.mu0.data() + b.mu0.size());
  EXPECT_NEAR(predict_log_density(op, Eigen::VectorXd::Zero(3)).log10_density, oracle::hat_interpolate(g, mu, 12.0, 7.3, 333.0),
              1e-12);
}

TEST(ObsOperator, IdentityEmbeddingAtNodeSelectsRow) {
  const GridSpec g = small_grid();
  LatentBasis b;
  b.grid = g;
  b.w = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(g.size()), 2);
  b.mu0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()));
  const auto op0 = build_obs_operator(b, {g.lat_at(0), g.lt_at(0), g.alt_at(0)});
  EXPECT_EQ(op0.h_row(0), 1.0);
  EXPECT_EQ(op0.h_row(1), 0.0);
  const auto op1 = build_obs_operator(b, {g.lat_at(0), g.lt_at(0), g.alt_at(1)});
  EXPECT_EQ(op1.h_row(0), 0.0);
  EXPECT_EQ(op1.h_row(1), 1.0);
}

TEST(ObsOperator, HalfUnitLatentAboveMinusTwelve) {
  // H = [1, 0, ...], mu = -12, z = (0.5, 0, ...) gives -11.5.
  ObsOperator op;
  op.h_row = Eigen::RowVectorXd::Zero(4);
  op.h_row(0) = 1.0;
  op.mu_scalar = -12.0;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  z(0) = 0.5;
  const auto p = predict_log_density(op, z);
  EXPECT_DOUBLE_EQ(p.log10_density, -11.5);
  EXPECT_NEAR(p.linear_density, std::pow(10.0, -11.5), 1e-27);
  EXPECT_FALSE(p.non_positive);
}

TEST(ObsOperator, TenfoldMeasurementGivesUnitInnovation) {
  ObsOperator op;
  op.h_row = Eigen::RowVectorXd::Zero(2);
  op.mu_scalar = -12.0;
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  const double rho_pred = predict_log_density(op, z).linear_density;
  const double nu = std::log10(10.0 * rho_pred) - predict_log_density(op, z).log10_density;
  EXPECT_EQ(nu, 1.0);
  EXPECT_EQ(std::log10(rho_pred) - predict_log_density(op, z).log10_density, 0.0);
}

TEST(ObsOperator, AffineInLatentAndJacobianIsH) {
  oracle::Gen gen(22);
  const GridSpec g = small_grid();
  const auto b = random_basis(g, 5, gen);
  for (int t = 0; t < 100; ++t) {
    const GeoLocation loc{gen.uniform(-85.0, 85.0), gen.uniform(0.0, 24.0), gen.uniform(200.0, 500.0)};
    const auto op = build_obs_operator(b, loc);
    const Eigen::VectorXd z1 = gen.vector(5), z2 = gen.vector(5);
    const double a = gen.uniform(-2.0, 2.0);
    const double lhs = predict_log_density(op, a * z1 + (1.0 - a) * z2).log10_density;
    const double rhs =
        a * predict_log_density(op, z1).log10_density + (1.0 - a) * predict_log_density(op, z2).log10_density;
    EXPECT_NEAR(lhs, rhs, 1e-11);
    // Central differences of the log prediction reproduce h_row.
    for (Eigen::Index i = 0; i < 5; ++i) {
      Eigen::VectorXd zp = z1, zm = z1;
      zp(i) += 1e-5;
      zm(i) -= 1e-5;
      const double fd =
          (predict_log_density(op, zp).log10_density - predict_log_density(op, zm).log10_density) / 2e-5;
      EXPECT_NEAR(fd, op.h_row(i), 1e-7 * std::max(1.0, std::abs(op.h_row(i))));
    }
    // H = w^T W exactly, independent of z.
    const auto w = trilinear_weights(g, loc.lat, loc.lt, loc.alt);
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(5);
    for (const auto& e : w.entries) h += e.weight * b.w.row(static_cast<Eigen::Index>(e.index));
    EXPECT_LT((h - op.h_row).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(ObsOperator, PositivityFlagUsesFloor) {
  ObsOperator op;
  op.h_row = Eigen::RowVectorXd::Ones(1);
  op.mu_scalar = -12.0;
  Eigen::VectorXd z(1);
  z << -400.0;  // 1e-412 underflows to zero
  EXPECT_TRUE(predict_log_density(op, z).non_positive);
  z << 0.0;
  EXPECT_FALSE(predict_log_density(op, z).non_positive);
  EXPECT_TRUE(predict_log_density(op, z, 1e-11).non_positive);
}

TEST(ObsOperator, GridMismatchRejected) {
  oracle::Gen gen(23);
  const auto b = random_basis(small_grid(), 2, gen);
  GridSpec other = small_grid();
  other.n_alt = 5;
  EXPECT_THROW((void)build_obs_operator(b, other, {0.0, 0.0, 300.0}), Error);
}

TEST(McNoise, ZeroRelativeErrorGivesZero) { EXPECT_EQ(mc_noise_variance(1e-12, 0.0, 100, 5), 0.0); }

TEST(McNoise, IndependentOfDensityLevel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double v = mc_noise_variance(1e-12, 0.05, 100, seed);
    EXPECT_EQ(mc_noise_variance(3.7e-9, 0.05, 100, seed), v);
    EXPECT_EQ(mc_noise_variance(42.0, 0.05, 100, seed), v);
  }
}

TEST(McNoise, DeterministicPerSeedAndCloseToAnalyticVariance) {
  const double analytic = (0.05 * 0.05 / 3.0) / (std::log(10.0) * std::log(10.0));
  EXPECT_EQ(mc_noise_variance(1e-11, 0.05, 1000, 9), mc_noise_variance(1e-11, 0.05, 1000, 9));
  EXPECT_NE(mc_noise_variance(1e-11, 0.05, 1000, 9), mc_noise_variance(1e-11, 0.05, 1000, 10));
  EXPECT_NEAR(mc_noise_variance(1e-11, 0.05, 200000, 3), analytic, 0.03 * analytic);
}

TEST(McNoise, RejectsInvalidInput) {
  EXPECT_THROW((void)mc_noise_variance(0.0), Error);
  EXPECT_THROW((void)mc_noise_variance(-1e-12), Error);
  EXPECT_THROW((void)mc_noise_variance(1e-12, 0.05, 1), Error);
  EXPECT_THROW((void)mc_noise_variance(1e-12, 1.5), Error);
}

TEST(McNoise, MeasurementSeedSeparatesSatellitesAndEpochs) {
  EXPECT_NE(measurement_seed(0, "CHAMP", 60), measurement_seed(0, "GRACE", 60));
  EXPECT_NE(measurement_seed(0, "CHAMP", 60), measurement_seed(0, "CHAMP", 120));
  EXPECT_NE(measurement_seed(0, "CHAMP", 60), measurement_seed(1, "CHAMP", 60));
  EXPECT_EQ(measurement_seed(4, "CHAMP", 60), measurement_seed(4, "CHAMP", 60));
}
