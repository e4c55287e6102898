#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracle.hpp"
#include "qfdg/tensors.hpp"

using namespace qfdg;

namespace {

const RefTensors& tensors(int k) {
  static std::array<RefTensors, 4> cache;
  static std::array<bool, 4> built{};
  auto i = static_cast<std::size_t>(k);
  if (!built[i]) {
    cache[i] = build_ref_tensors(k);
    built[i] = true;
  }
  return cache[i];
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); }

}  // namespace

TEST(Tensors, Shapes) {
  for (int k = 0; k <= 3; ++k) {
    const auto& t = tensors(k);
    const int K = num_basis(k), L = k + 1;
    EXPECT_EQ(t.mass.extents(), (std::vector<int>{K, K}));
    EXPECT_EQ(t.stiff.extents(), (std::vector<int>{2, K, K}));
    EXPECT_EQ(t.stiff_triple.extents(), (std::vector<int>{2, K, K, K}));
    EXPECT_EQ(t.vol_triple.extents(), (std::vector<int>{K, K, K}));
    EXPECT_EQ(t.edge_pair.extents(), (std::vector<int>{3, K, K}));
    EXPECT_EQ(t.edge_pair_x.extents(), (std::vector<int>{3, 3, K, K}));
    EXPECT_EQ(t.edge_triple.extents(), (std::vector<int>{3, K, K, K}));
    EXPECT_EQ(t.edge_triple_x.extents(), (std::vector<int>{3, 3, K, K, K}));
    EXPECT_EQ(t.bnd_pair.extents(), (std::vector<int>{3, K, L}));
    EXPECT_EQ(t.bnd_triple.extents(), (std::vector<int>{3, K, L, L}));
  }
  EXPECT_THROW(build_ref_tensors(4), UnsupportedOrder);
}

TEST(Tensors, MassIsIdentityExactly) {
  for (int k = 0; k <= 3; ++k) {
    ExactTensors e = build_exact_tensors(k);
    const auto& t = tensors(k);
    const int K = num_basis(k);
    for (int p = 0; p < K; ++p) {
      for (int i = 0; i < K; ++i) {
        EXPECT_EQ(e.mass(p, i), RootCoeff(p == i ? 1 : 0));
        EXPECT_EQ(t.mass(p, i), p == i ? 1.0 : 0.0);
      }
    }
  }
}

TEST(Tensors, Examples) {
  EXPECT_EQ(tensors(0).stiff(0, 0, 0), 0.0);
  EXPECT_NEAR(tensors(1).stiff(0, 1, 0), -3.0 * std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(tensors(1).vol_triple(0, 0, 0), std::sqrt(2.0), 1e-15);
}

TEST(Tensors, IndexSymmetriesAreExact) {
  for (int k = 0; k <= 3; ++k) {
    const auto& t = tensors(k);
    const int K = num_basis(k);
    for (int p = 0; p < K; ++p) {
      for (int i = 0; i < K; ++i) {
        for (int m = 0; m < K; ++m) {
          const double g = t.vol_triple(p, i, m);
          EXPECT_EQ(g, t.vol_triple(p, m, i));
          EXPECT_EQ(g, t.vol_triple(i, p, m));
          EXPECT_EQ(g, t.vol_triple(i, m, p));
          EXPECT_EQ(g, t.vol_triple(m, p, i));
          EXPECT_EQ(g, t.vol_triple(m, i, p));
          for (int l = 0; l < 2; ++l) EXPECT_EQ(t.stiff_triple(l, p, i, m), t.stiff_triple(l, p, m, i));
          for (int e = 0; e < 3; ++e) EXPECT_EQ(t.edge_triple(e, p, i, m), t.edge_triple(e, p, m, i));
        }
      }
    }
  }
}

// Every entry against nested Gauss-Legendre integration of the closed-form
// basis; both routes share nothing but the index conventions.
class TensorOracle : public ::testing::TestWithParam<int> {};

TEST_P(TensorOracle, AllEntriesMatchQuadrature) {
  const int k = GetParam();
  const auto& t = tensors(k);
  const int K = num_basis(k), L = k + 1;
  double worst = 0.0;
  auto check = [&](double a, double b) { worst = std::max(worst, rel(a, b)); };
  for (int p = 0; p < K; ++p) {
    for (int i = 0; i < K; ++i) {
      check(t.mass(p, i), oracle::triangle([&](double x, double y) {
        return oracle::value(p, x, y) * oracle::value(i, x, y);
      }));
      for (int l = 0; l < 2; ++l) {
        check(t.stiff(l, p, i), oracle::triangle([&](double x, double y) {
          return oracle::grad(p, l, x, y) * oracle::value(i, x, y);
        }));
      }
      for (int m = 0; m < K; ++m) {
        check(t.vol_triple(p, i, m), oracle::triangle([&](double x, double y) {
          return oracle::value(p, x, y) * oracle::value(i, x, y) * oracle::value(m, x, y);
        }));
        for (int l = 0; l < 2; ++l) {
          check(t.stiff_triple(l, p, i, m), oracle::triangle([&](double x, double y) {
            return oracle::grad(p, l, x, y) * oracle::value(i, x, y) * oracle::value(m, x, y);
          }));
        }
      }
      for (int e = 0; e < 3; ++e) {
        auto own = [&](int n, double s) {
          auto x = oracle::edge_point(e, s);
          return oracle::value(n, x[0], x[1]);
        };
        check(t.edge_pair(e, p, i), oracle::line([&](double s) { return own(p, s) * own(i, s); }));
        for (int m = 0; m < K; ++m) {
          check(t.edge_triple(e, p, i, m),
                oracle::line([&](double s) { return own(p, s) * own(i, s) * own(m, s); }));
        }
        for (int en = 0; en < 3; ++en) {
          auto nb = [&](int n, double s) {
            auto x = oracle::edge_point(en, 1.0 - s);
            return oracle::value(n, x[0], x[1]);
          };
          check(t.edge_pair_x(e, en, p, i), oracle::line([&](double s) { return own(p, s) * nb(i, s); }));
          for (int m = 0; m < K; ++m) {
            check(t.edge_triple_x(e, en, p, i, m),
                  oracle::line([&](double s) { return own(p, s) * nb(i, s) * nb(m, s); }));
          }
        }
        for (int r = 0; r < L; ++r) {
          check(t.bnd_pair(e, p, r),
                oracle::line([&](double s) { return own(p, s) * oracle::legendre(r, s); }));
          for (int q = 0; q < L; ++q) {
            check(t.bnd_triple(e, p, r, q), oracle::line([&](double s) {
              return own(p, s) * oracle::legendre(r, s) * oracle::legendre(q, s);
            }));
          }
        }
      }
    }
  }
  EXPECT_LE(worst, k <= 1 ? 1e-13 : 1e-12);
}

TEST_P(TensorOracle, VerifyTensorsReport) {
  const int k = GetParam();
  TensorReport r = verify_tensors(tensors(k));
  EXPECT_LE(r.max_rel, k <= 1 ? 1e-13 : 1e-12) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Orders, TensorOracle, ::testing::Values(0, 1, 2, 3));

TEST(Tensors, StiffnessMatchesDivergenceTheorem) {
  // sum_i S[l][p][i] * (coefficients of 1) = int d_l phi_p = int_boundary phi_p n_l
  for (int k = 0; k <= 3; ++k) {
    const auto& t = tensors(k);
    const double one = 1.0 / std::sqrt(2.0);  // 1 = phi_0 / sqrt(2)
    const std::array<std::array<double, 2>, 3> n{{{1.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}}};
    const std::array<double, 3> len{std::sqrt(2.0), 1.0, 1.0};
    for (int p = 0; p < num_basis(k); ++p) {
      for (int l = 0; l < 2; ++l) {
        double lhs = t.stiff(l, p, 0) * one;
        double rhs = 0.0;
        for (int e = 0; e < 3; ++e) {
          // unit normal of the hypotenuse is (1, 1)/sqrt(2); |e| n_l
          double nl = e == 0 ? n[0][static_cast<std::size_t>(l)] / std::sqrt(2.0) : n[static_cast<std::size_t>(e)][static_cast<std::size_t>(l)];
          rhs += len[static_cast<std::size_t>(e)] * nl * t.edge_pair(e, p, 0) * one;
        }
        EXPECT_NEAR(lhs, rhs, 1e-13);
      }
    }
  }
}

TEST(Tensors, CrossPairingMatchesReversedTrace) {
  // sum_i EX[e][en][p][i] v_i = int phi_p|e(s) v|en(1-s) ds for random v
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 1; k <= 3; ++k) {
    const auto& t = tensors(k);
    const int K = num_basis(k);
    std::vector<double> v(static_cast<std::size_t>(K));
    for (auto& x : v) x = u(rng);
    for (int e = 0; e < 3; ++e) {
      for (int en = 0; en < 3; ++en) {
        for (int p = 0; p < K; ++p) {
          double lhs = 0.0;
          for (int i = 0; i < K; ++i) lhs += t.edge_pair_x(e, en, p, i) * v[static_cast<std::size_t>(i)];
          double rhs = oracle::line([&](double s) {
            auto a = oracle::edge_point(e, s);
            auto b = oracle::edge_point(en, 1.0 - s);
            double vb = 0.0;
            for (int i = 0; i < K; ++i) vb += v[static_cast<std::size_t>(i)] * oracle::value(i, b[0], b[1]);
            return oracle::value(p, a[0], a[1]) * vb;
          });
          EXPECT_NEAR(lhs, rhs, 1e-13 * std::max(1.0, std::abs(rhs)));
        }
      }
    }
  }
}

TEST(Tensors, CsvDumpHasHeaderAndAllEntries) {
  auto dir = std::filesystem::temp_directory_path() / "qfdg_tensor_csv";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto& t = tensors(1);
  write_tensors_csv(t, dir);
  for (TensorId id : kAllTensors) {
    TensorInfo info = tensor_info(id);
    std::ifstream is(dir / (std::string(info.name) + ".csv"));
    ASSERT_TRUE(is) << info.name;
    std::string header;
    std::getline(is, header);
    EXPECT_NE(header.find("value"), std::string::npos);
    std::size_t rows = 0;
    std::string line;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, t.get(id).size()) << info.name;
  }
  std::filesystem::remove_all(dir);
}
