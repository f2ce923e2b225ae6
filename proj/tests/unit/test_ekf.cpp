// Companion-form EKF: prediction, Joseph updates, gaps and multi-satellite
// batches.
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "romda/romda.hpp"

using namespace romda;

namespace {

ObsOperator scalar_op(const Eigen::RowVectorXd& h, double mu = 0.0) {
  ObsOperator op;
  op.h_row = h;
  op.mu_scalar = mu;
  return op;
}

NoiseConfig noise_of(const Eigen::MatrixXd& q, const Eigen::MatrixXd& p0) {
  NoiseConfig n;
  n.q = q;
  n.p0 = p0;
  return n;
}

/// Model with every library term active, fitted to random data.
RomModel quadratic_model(std::size_t r, std::size_t n_u, std::size_t n_ar, oracle::Gen& gen) {
  const auto m = static_cast<Eigen::Index>(40 + 4 * library_size(r, n_u, 2));
  const Eigen::MatrixXd z = gen.matrix(static_cast<Eigen::Index>(r), m, 0.5);
  const Eigen::MatrixXd u = gen.matrix(static_cast<Eigen::Index>(n_u), m);
  return fit_sindyc_ar(z, u, n_ar, enumerate_terms(r, n_u, 2), {1.0, true});
}

}  // namespace

TEST(FilterInit, DefaultsAndDimensions) {
  const auto n = NoiseConfig::defaults(10);
  EXPECT_EQ(n.q(0, 0), 1e-2);
  EXPECT_EQ(n.q(1, 1), 1e-2);
  EXPECT_EQ(n.q(2, 2), 1e-3);
  EXPECT_EQ(n.q(9, 9), 1e-3);
  EXPECT_EQ(n.p0, 10.0 * Eigen::MatrixXd::Identity(10, 10));
  EXPECT_EQ(n.spin_up_s, 6.0 * 3600.0);

  oracle::Gen gen(301);
  const auto m5 = oracle::linear_model(gen.stable(10, 0.9), gen.matrix(10, 7), gen.vector(10),
                                       std::vector<Eigen::MatrixXd>(5, Eigen::MatrixXd::Zero(10, 10)));
  const auto st = init_filter(m5, n);
  EXPECT_EQ(st.n_aug(), 60u);
  EXPECT_EQ(st.p_aug, 10.0 * Eigen::MatrixXd::Identity(60, 60));
  EXPECT_EQ(st.zeta, Eigen::VectorXd::Zero(60));

  const auto m0 = oracle::linear_model(gen.stable(4, 0.9), gen.matrix(4, 7), gen.vector(4));
  EXPECT_EQ(init_filter(m0, NoiseConfig::defaults(4)).n_aug(), 4u);
  EXPECT_THROW((void)init_filter(m0, NoiseConfig::defaults(4), 60.0), Error);
  EXPECT_THROW((void)init_filter(m0, NoiseConfig::defaults(5)), Error);
}

TEST(FilterInit, CompanionOperatorsHaveShiftStructure) {
  oracle::Gen gen(302);
  const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 2), gen.vector(3),
                                      {gen.matrix(3, 3), gen.matrix(3, 3), gen.matrix(3, 3)});
  const Eigen::MatrixXd q = gen.spd(3);
  const auto ops = build_aug_operators(m, q);
  EXPECT_EQ(ops.a_aug, oracle::companion(m));
  Eigen::MatrixXd q_expected = Eigen::MatrixXd::Zero(12, 12);
  q_expected.topLeftCorner(3, 3) = q;
  EXPECT_EQ(ops.q_aug, q_expected);
}

TEST(Predict, LinearModelMatchesDirectKalmanPredict) {
  oracle::Gen gen(311);
  const auto m = oracle::linear_model(gen.stable(3, 0.95), gen.matrix(3, 2), gen.vector(3));
  const Eigen::MatrixXd q = gen.spd(3, 1e-3, 1e-2);
  auto st = init_filter(m, noise_of(q, gen.spd(3)));
  oracle::DirectKalman kf{st.zeta, st.p_aug};
  for (int k = 0; k < 50; ++k) {
    const Eigen::VectorXd u = gen.vector(2);
    st = predict(st, m, u);
    kf.predict(m.a, m.b * u + m.c, q);
    EXPECT_LE((st.zeta - kf.x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((st.p_aug - kf.p).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Predict, ZeroDynamicsInjectOnlyProcessNoise) {
  oracle::Gen gen(312);
  const auto m = oracle::linear_model(Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(3, 1), Eigen::VectorXd::Zero(3),
                                      {Eigen::MatrixXd::Zero(3, 3)});
  const Eigen::MatrixXd q = gen.spd(3);
  auto st = init_filter(m, noise_of(q, Eigen::MatrixXd::Zero(3, 3)));
  st = predict(st, m, Eigen::VectorXd::Zero(1));
  EXPECT_LE((st.p_aug.topLeftCorner(3, 3) - q).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(st.p_aug.bottomRows(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Predict, ProcessJacobianMatchesFiniteDifferences) {
  oracle::Gen gen(313);
  const auto model = quadratic_model(3, 2, 2, gen);
  for (std::size_t stride : {std::size_t{1}, std::size_t{4}}) {
    auto st = init_filter(model, NoiseConfig::defaults(3));
    st.lag_stride = stride;
    for (int t = 0; t < 40; ++t) {
      st.step = gen.index(0, 10);
      st.zeta = gen.vector(static_cast<Eigen::Index>(st.n_aug()));
      for (auto& uh : st.u_history) uh = gen.vector(2);
      const Eigen::VectorXd u = gen.vector(2);
      const auto ps = process_step(st, model, u);
      const auto n = static_cast<Eigen::Index>(st.n_aug());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(st.zeta(i)));
        FilterState sp = st, sm = st;
        sp.zeta(i) += h;
        sm.zeta(i) -= h;
        const Eigen::VectorXd fd = (process_step(sp, model, u).zeta_next - process_step(sm, model, u).zeta_next) / (2 * h);
        const double scale = std::max(1.0, ps.jacobian.col(i).cwiseAbs().maxCoeff());
        EXPECT_LE((fd - ps.jacobian.col(i)).cwiseAbs().maxCoeff() / scale, 1e-6);
      }
    }
  }
}

TEST(Predict, LagBlocksShiftOnceEveryStride) {
  oracle::Gen gen(314);
  const auto hourly = oracle::linear_model(gen.stable_principal(2, 0.9), gen.matrix(2, 1), gen.vector(2),
                                           {gen.matrix(2, 2, 0.1)});
  const auto model = rescale_cadence(hourly, 600.0);
  ASSERT_EQ(model.lag_stride, 6u);
  auto st = init_filter(model, NoiseConfig::defaults(2));
  st.zeta = gen.vector(4);
  Eigen::VectorXd lag = st.zeta.tail(2);
  for (int k = 0; k < 18; ++k) {
    const Eigen::VectorXd before = st.current();
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, k);
    const bool shifts = (k + 1) % 6 == 0;
    st = predict(st, model, u);
    if (shifts) {
      EXPECT_EQ(st.zeta.tail(2), before);
      EXPECT_EQ(st.u_history[0](0), k);
      lag = before;
    } else {
      EXPECT_EQ(st.zeta.tail(2), lag);
    }
  }
}

TEST(Predict, DivergenceRaisesNonFiniteState) {
  const auto m = oracle::linear_model(Eigen::MatrixXd::Identity(1, 1) * 1e200, Eigen::MatrixXd::Zero(1, 1),
                                      Eigen::VectorXd::Zero(1));
  auto st = init_filter(m, NoiseConfig::defaults(1));
  st.zeta(0) = 1.0;
  try {
    for (int k = 0; k < 5; ++k) st = predict(st, m, Eigen::VectorXd::Zero(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteState);
  }
}

TEST(Update, ScalarTextbookCase) {
  const auto m = oracle::linear_model(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1));
  auto st = init_filter(m, noise_of(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1)));
  st.zeta(0) = 0.3;
  const auto res = update_single(st, scalar_op(Eigen::RowVectorXd::Ones(1)), 1.3, 1.0);
  EXPECT_NEAR(res.state.zeta(0), 0.8, 1e-15);
  EXPECT_NEAR(res.state.p_aug(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(res.innovation.nu(0), 1.0, 1e-15);
  EXPECT_NEAR(res.innovation.s(0, 0), 2.0, 1e-15);
}

TEST(Update, ZeroInnovationKeepsMeanAndContractsCovariance) {
  oracle::Gen gen(321);
  const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 1), gen.vector(3), {gen.matrix(3, 3)});
  auto st = init_filter(m, noise_of(gen.spd(3), gen.spd(3)));
  st.zeta = gen.vector(6);
  const auto op = scalar_op(gen.vector(3).transpose(), -11.0);
  const double y = op.h_row.dot(st.current()) + op.mu_scalar;
  const auto res = update_single(st, op, y, 0.01);
  EXPECT_LE((res.state.zeta - st.zeta).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(res.state.p_aug.trace(), st.p_aug.trace());
  const Eigen::MatrixXd diff = st.p_aug - res.state.p_aug;
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(diff).eigenvalues().minCoeff(), -1e-12);
}

TEST(Update, HugeNoiseLeavesPriorUnchanged) {
  oracle::Gen gen(322);
  const auto m = oracle::linear_model(gen.stable(4, 0.9), gen.matrix(4, 1), gen.vector(4));
  auto st = init_filter(m, noise_of(gen.spd(4), gen.spd(4)));
  const auto res = update_single(st, scalar_op(gen.vector(4).transpose()), 5.0, 1e30);
  EXPECT_LE((res.state.zeta - st.zeta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((res.state.p_aug - st.p_aug).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Update, JosephFormMatchesStandardForm) {
  oracle::Gen gen(323);
  for (int t = 0; t < 50; ++t) {
    const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 1), gen.vector(3), {gen.matrix(3, 3)});
    auto st = init_filter(m, noise_of(gen.spd(3), gen.spd(3)));
    st.p_aug = gen.spd(6);
    st.zeta = gen.vector(6);
    std::vector<ObsOperator> ops;
    std::vector<double> y, s2;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 6);
    for (int i = 0; i < 3; ++i) {
      ops.push_back(scalar_op(gen.vector(3).transpose()));
      h.row(i).head(3) = ops.back().h_row;
      y.push_back(gen.normal());
      s2.push_back(gen.uniform(0.01, 1.0));
    }
    const auto res = update_multi(st, ops, y, s2);
    oracle::DirectKalman kf{st.zeta, st.p_aug};
    kf.update(h, Eigen::Map<Eigen::VectorXd>(y.data(), 3), Eigen::MatrixXd(Eigen::Map<Eigen::VectorXd>(s2.data(), 3).asDiagonal()));
    EXPECT_LE((res.state.zeta - kf.x).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((res.state.p_aug - kf.p).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Update, SingleObservationBatchIsBitIdentical) {
  oracle::Gen gen(324);
  const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 1), gen.vector(3), {gen.matrix(3, 3)});
  auto st = init_filter(m, noise_of(gen.spd(3), gen.spd(3)));
  st.zeta = gen.vector(6);
  const auto op = scalar_op(gen.vector(3).transpose(), -10.0);
  const std::vector<ObsOperator> ops{op};
  const std::vector<double> y{-9.7}, s2{0.02};
  const auto a = update_multi(st, ops, y, s2);
  const auto b = update_single(st, op, -9.7, 0.02);
  EXPECT_EQ(a.state.zeta, b.state.zeta);
  EXPECT_EQ(a.state.p_aug, b.state.p_aug);
}

TEST(Update, DuplicateObservationHalvesVariance) {
  oracle::Gen gen(325);
  const auto m = oracle::linear_model(gen.stable(4, 0.9), gen.matrix(4, 1), gen.vector(4), {gen.matrix(4, 4)});
  auto st = init_filter(m, noise_of(gen.spd(4), gen.spd(4)));
  st.p_aug = gen.spd(8);
  const auto op = scalar_op(gen.vector(4).transpose(), -11.0);
  const std::vector<ObsOperator> twice{op, op};
  const std::vector<double> y{-10.5, -10.5}, s2{0.04, 0.04};
  const auto dup = update_multi(st, twice, y, s2);
  const auto half = update_single(st, op, -10.5, 0.02);
  EXPECT_LE((dup.state.zeta - half.state.zeta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((dup.state.p_aug - half.state.p_aug).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Update, SequentialScalarUpdatesEqualBatch) {
  oracle::Gen gen(326);
  for (int t = 0; t < 20; ++t) {
    const auto m = oracle::linear_model(gen.stable(5, 0.9), gen.matrix(5, 1), gen.vector(5), {gen.matrix(5, 5)});
    auto st = init_filter(m, noise_of(gen.spd(5), gen.spd(5)));
    st.p_aug = gen.spd(10);
    st.zeta = gen.vector(10);
    std::vector<ObsOperator> ops;
    std::vector<double> y, s2;
    for (int i = 0; i < 3; ++i) {
      ops.push_back(scalar_op(gen.vector(5).transpose(), gen.uniform(-12.0, -10.0)));
      y.push_back(gen.uniform(-12.0, -10.0));
      s2.push_back(gen.uniform(1e-3, 1e-1));
    }
    const auto batch = update_multi(st, ops, y, s2);
    FilterState seq = st;
    for (int i = 0; i < 3; ++i) seq = update_single(seq, ops[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)], s2[static_cast<std::size_t>(i)]).state;
    EXPECT_LE((batch.state.zeta - seq.zeta).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((batch.state.p_aug - seq.p_aug).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Update, GateRejectsOutliersOnlyWhenEnabled) {
  const auto m = oracle::linear_model(Eigen::MatrixXd::Identity(2, 2) * 0.5, Eigen::MatrixXd::Zero(2, 1),
                                      Eigen::VectorXd::Zero(2));
  auto st = init_filter(m, noise_of(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2) * 0.01));
  const auto op = scalar_op(Eigen::RowVector2d(1.0, 0.0));
  UpdateOptions gate;
  gate.gate_enabled = true;
  gate.gate_sigma = 5.0;
  const auto gated = update_single(st, op, 100.0, 0.01, gate);
  EXPECT_TRUE(gated.innovation.gated[0]);
  EXPECT_EQ(gated.state.zeta, st.zeta);
  EXPECT_EQ(gated.state.p_aug, st.p_aug);
  const auto open = update_single(st, op, 100.0, 0.01);
  EXPECT_FALSE(open.innovation.gated[0]);
  EXPECT_GT(open.state.zeta(0), 1.0);
  const auto small = update_single(st, op, 0.1, 0.01, gate);
  EXPECT_FALSE(small.innovation.gated[0]);
}

TEST(Update, PositivityFlagAndInputChecks) {
  const auto m = oracle::linear_model(Eigen::MatrixXd::Identity(1, 1) * 0.5, Eigen::MatrixXd::Zero(1, 1),
                                      Eigen::VectorXd::Zero(1));
  auto st = init_filter(m, NoiseConfig::defaults(1));
  const auto op = scalar_op(Eigen::RowVectorXd::Ones(1), -12.0);
  UpdateOptions floor;
  floor.positivity_floor = 1e-11;
  EXPECT_TRUE(update_single(st, op, -12.0, 0.01, floor).innovation.non_positive);
  EXPECT_FALSE(update_single(st, op, -12.0, 0.01).innovation.non_positive);
  EXPECT_THROW((void)update_single(st, op, -12.0, 0.0), Error);
  EXPECT_THROW((void)update_multi(st, {}, {}, {}), Error);
  EXPECT_THROW((void)update_single(st, scalar_op(Eigen::RowVectorXd::Ones(2)), -12.0, 0.01), Error);
}

TEST(Gaps, SkipUpdateIsIdentity) {
  oracle::Gen gen(331);
  const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 1), gen.vector(3), {gen.matrix(3, 3)});
  auto st = init_filter(m, NoiseConfig::defaults(3));
  st.zeta = gen.vector(6);
  const auto same = skip_update(st);
  EXPECT_EQ(same.zeta, st.zeta);
  EXPECT_EQ(same.p_aug, st.p_aug);
  EXPECT_EQ(same.step, st.step);
}

TEST(Gaps, CovarianceFollowsRepeatedLinearPropagation) {
  oracle::Gen gen(332);
  const auto m = oracle::linear_model(gen.stable(2, 0.9), gen.matrix(2, 1), gen.vector(2), {gen.matrix(2, 2, 0.3)});
  const Eigen::MatrixXd q = gen.spd(2, 1e-3, 1e-2);
  auto st = init_filter(m, noise_of(q, gen.spd(2)));
  const auto ops = build_aug_operators(m, q);
  Eigen::MatrixXd p = st.p_aug;
  for (int k = 0; k < 25; ++k) {
    st = skip_update(predict(st, m, gen.vector(1)));
    p = ops.a_aug * p * ops.a_aug.transpose() + ops.q_aug;
  }
  EXPECT_LE((st.p_aug - p).cwiseAbs().maxCoeff(), 1e-10 * p.cwiseAbs().maxCoeff());
}

TEST(Gaps, GainGrowsAfterAGap) {
  oracle::Gen gen(333);
  const auto m = oracle::linear_model(gen.stable(2, 0.7), gen.matrix(2, 1), gen.vector(2));
  auto st = init_filter(m, noise_of(Eigen::MatrixXd::Identity(2, 2) * 0.05, Eigen::MatrixXd::Identity(2, 2) * 0.01));
  const auto op = scalar_op(Eigen::RowVector2d(1.0, 0.5));
  auto gain = [&](const FilterState& s) {
    const auto r = update_single(s, op, 1.0 + op.h_row.dot(s.current()), 0.01);
    return (r.state.zeta - s.zeta).norm();
  };
  auto no_gap = update_single(predict(st, m, Eigen::VectorXd::Zero(1)), op, 0.0, 0.01).state;
  FilterState gap = no_gap;
  for (int k = 0; k < 10; ++k) gap = predict(gap, m, Eigen::VectorXd::Zero(1));
  FilterState tight = predict(no_gap, m, Eigen::VectorXd::Zero(1));
  EXPECT_GT(gain(gap), gain(tight));
}

TEST(Extract, ReturnsCurrentBlock) {
  oracle::Gen gen(341);
  const auto m = oracle::linear_model(gen.stable(3, 0.9), gen.matrix(3, 1), gen.vector(3),
                                      {gen.matrix(3, 3), gen.matrix(3, 3)});
  auto st = init_filter(m, NoiseConfig::defaults(3));
  st.zeta = gen.vector(9);
  st.p_aug = gen.spd(9);
  const auto cur = extract_current(st);
  EXPECT_EQ(cur.z, st.zeta.head(3));
  EXPECT_EQ(cur.p, st.p_aug.topLeftCorner(3, 3));
  EXPECT_EQ(cur.p, cur.p.transpose());
}

TEST(Joseph, CovarianceStaysSymmetricPsdAcrossRandomScenarios) {
  oracle::Gen gen(351);
  for (int scenario = 0; scenario < 10; ++scenario) {
    const auto model = quadratic_model(3, 1, 1, gen);
    auto st = init_filter(model, NoiseConfig::defaults(3));
    for (int k = 0; k < 300; ++k) {
      st = predict(st, model, gen.vector(1));
      st.zeta = st.zeta.cwiseMax(-3.0).cwiseMin(3.0);
      if (gen.uniform(0.0, 1.0) < 0.5) {
        const double s2 = std::pow(10.0, gen.uniform(-8.0, 2.0));
        st = update_single(st, scalar_op(gen.vector(3).transpose()), gen.normal(), s2).state;
      }
      EXPECT_LE((st.p_aug - st.p_aug.transpose()).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, st.p_aug.trace()));
      const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(st.p_aug).eigenvalues().minCoeff();
      ASSERT_GE(lmin, -1e-10 * st.p_aug.trace()) << "scenario " << scenario << " step " << k;
    }
  }
}

TEST(Companion, LagCrossCovarianceMatchesMonteCarlo) {
  oracle::Gen gen(361);
  const Eigen::MatrixXd a = gen.stable(2, 0.6), a1 = gen.matrix(2, 2, 0.3);
  const auto m = oracle::linear_model(a, Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2), {a1});
  const Eigen::MatrixXd q = gen.spd(2, 0.1, 0.5);
  auto st = init_filter(m, noise_of(q, Eigen::MatrixXd::Identity(2, 2)));
  const int steps = 3;
  for (int k = 0; k < steps; ++k) st = predict(st, m, Eigen::VectorXd::Zero(1));

  const Eigen::MatrixXd lq = Eigen::LLT<Eigen::MatrixXd>(q).matrixL();
  const int n_mem = 100000;
  Eigen::MatrixXd cur(2, n_mem), lag(2, n_mem);
  for (int e = 0; e < n_mem; ++e) {
    Eigen::Vector2d z = gen.vector(2), zl = gen.vector(2);
    for (int k = 0; k < steps; ++k) {
      const Eigen::Vector2d next = a * z + a1 * zl + lq * gen.vector(2);
      zl = z;
      z = next;
    }
    cur.col(e) = z;
    lag.col(e) = zl;
  }
  const Eigen::MatrixXd dc = cur.colwise() - cur.rowwise().mean();
  const Eigen::MatrixXd dl = lag.colwise() - lag.rowwise().mean();
  const Eigen::MatrixXd cross = dc * dl.transpose() / (n_mem - 1.0);
  const Eigen::MatrixXd var_c = dc * dc.transpose() / (n_mem - 1.0);
  const Eigen::MatrixXd var_l = dl * dl.transpose() / (n_mem - 1.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((var_c(i, i) * var_l(j, j) + cross(i, j) * cross(i, j)) / n_mem);
      EXPECT_NEAR(st.p_aug(i, 2 + j), cross(i, j), 4.0 * se);
    }
}

TEST(Companion, NormalizedInnovationsAreWhite) {
  oracle::Gen gen(362);
  const Eigen::MatrixXd a = gen.stable(3, 0.9);
  const Eigen::MatrixXd q = gen.spd(3, 1e-3, 1e-2);
  const Eigen::MatrixXd p0 = Eigen::MatrixXd::Identity(3, 3) * 0.5;
  const auto m = oracle::linear_model(a, Eigen::MatrixXd::Zero(3, 1), Eigen::VectorXd::Zero(3));
  auto st = init_filter(m, noise_of(q, p0));
  const Eigen::MatrixXd lq = Eigen::LLT<Eigen::MatrixXd>(q).matrixL();
  Eigen::VectorXd truth = std::sqrt(0.5) * gen.vector(3);
  const double s2 = 0.01;
  double sum = 0.0, sum2 = 0.0;
  const int n = 2000;
  for (int k = 0; k < n; ++k) {
    truth = a * truth + lq * gen.vector(3);
    st = predict(st, m, Eigen::VectorXd::Zero(1));
    const auto op = scalar_op(gen.vector(3).transpose());
    const double y = op.h_row.dot(truth) + std::sqrt(s2) * gen.normal();
    const auto res = update_single(st, op, y, s2);
    const double v = res.innovation.nu(0) / std::sqrt(res.innovation.s(0, 0));
    sum += v;
    sum2 += v * v;
    st = res.state;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_GT(var, 0.8);
  EXPECT_LT(var, 1.2);
  EXPECT_LT(std::abs(mean), 0.1);
}
