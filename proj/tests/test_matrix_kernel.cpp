#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "structdrop/structdrop.hpp"

using namespace structdrop;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) { return max_abs(subtract(a, b)); }

Matrix orthogonality_defect(const Matrix& q) { return subtract(gram(q), Matrix::identity(q.cols())); }

}  // namespace

TEST(Matrix, RejectsBadShapesAndValues) {
  EXPECT_THROW(Matrix(0, 3), DimensionError);
  EXPECT_THROW(Matrix(2, 2, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Matrix(1, 2, {1.0, std::nan("")}), NonFiniteError);
  EXPECT_THROW(Matrix(1, 1, {INFINITY}), NonFiniteError);
  EXPECT_THROW(Matrix::from_rows({{1.0, 2.0}, {3.0}}), DimensionError);
}

TEST(Matrix, IdentityTimesMatrix) {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matrix, HandProduct) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{0}, {1}});
  EXPECT_EQ(matmul(a, b), Matrix::from_rows({{2}, {4}}));
}

TEST(Matrix, ProductMatchesTripleLoop) {
  SeededRng rng(11);
  const Matrix a = gaussian_matrix(rng, 7, 5);
  const Matrix b = gaussian_matrix(rng, 5, 3);
  const Matrix c = matmul(a, b);
  const auto ref = oracle::naive_matmul(oracle::to_grid(a), oracle::to_grid(b));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(c(i, j), ref[i][j], 1e-12);
}

TEST(Matrix, ProductDimensionMismatch) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
  EXPECT_THROW(add(Matrix(2, 3), Matrix(3, 2)), DimensionError);
}

TEST(Matrix, Associativity) {
  SeededRng rng(12);
  const Matrix a = gaussian_matrix(rng, 6, 4);
  const Matrix b = gaussian_matrix(rng, 4, 5);
  const Matrix c = gaussian_matrix(rng, 5, 3);
  const double scale = frobenius_norm(a) * frobenius_norm(b) * frobenius_norm(c);
  EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-10 * scale);
}

TEST(Matrix, GramMatchesTransposeProduct) {
  SeededRng rng(13);
  const Matrix a = gaussian_matrix(rng, 9, 4);
  EXPECT_LE(max_abs_diff(gram(a), matmul(transpose(a), a)), 1e-12);
}

TEST(Matrix, ColumnBlockAndConcat) {
  const Matrix a = Matrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
  EXPECT_EQ(column_block(a, 1, 2), Matrix::from_rows({{2, 3}, {6, 7}}));
  EXPECT_EQ(hconcat(column_block(a, 0, 2), column_block(a, 2, 2)), a);
  EXPECT_THROW(column_block(a, 3, 2), DimensionError);
}

TEST(Svd, Identity) {
  const SvdResult s = svd(Matrix::identity(3));
  for (double v : s.singular_values) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Svd, DiagonalSortedDescending) {
  const std::vector<double> diag = {1.0, 3.0, 2.0};
  const SvdResult s = svd(Matrix::diagonal(diag));
  ASSERT_EQ(s.singular_values.size(), 3u);
  EXPECT_DOUBLE_EQ(s.singular_values[0], 3.0);
  EXPECT_DOUBLE_EQ(s.singular_values[1], 2.0);
  EXPECT_DOUBLE_EQ(s.singular_values[2], 1.0);
}

TEST(Svd, RandomTallMatchesGramEigenvalues) {
  SeededRng rng(21);
  const Matrix a = gaussian_matrix(rng, 6, 4);
  const SvdResult s = svd(a);
  EXPECT_LE(frobenius_norm(subtract(reconstruct(s), a)), 1e-9 * (1.0 + frobenius_norm(a)));
  EXPECT_LE(max_abs(orthogonality_defect(s.left)), 1e-10);
  EXPECT_LE(max_abs(orthogonality_defect(s.right)), 1e-10);
  const std::vector<double> ref = oracle::singular_values_via_gram(a);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.singular_values[i], ref[i], 1e-8);
}

TEST(Svd, WideAndRankDeficientInputs) {
  SeededRng rng(22);
  const Matrix wide = gaussian_matrix(rng, 3, 7);
  const SvdResult w = svd(wide);
  EXPECT_EQ(w.left.rows(), 3u);
  EXPECT_EQ(w.right.rows(), 7u);
  EXPECT_LE(frobenius_norm(subtract(reconstruct(w), wide)), 1e-9 * (1.0 + frobenius_norm(wide)));

  // Rank two, 6 x 5: the null directions still get orthonormal completions.
  const Matrix low = matmul(gaussian_matrix(rng, 6, 2), gaussian_matrix(rng, 2, 5));
  const SvdResult s = svd(low);
  EXPECT_LE(max_abs(orthogonality_defect(s.left)), 1e-10);
  EXPECT_LE(max_abs(orthogonality_defect(s.right)), 1e-10);
  EXPECT_LE(frobenius_norm(subtract(reconstruct(s), low)), 1e-9 * (1.0 + frobenius_norm(low)));
  EXPECT_LE(s.singular_values[2], 1e-10 * s.singular_values[0]);

  const SvdResult z = svd(Matrix(4, 3));
  for (double v : z.singular_values) EXPECT_EQ(v, 0.0);
  EXPECT_LE(max_abs(orthogonality_defect(z.left)), 1e-12);
}

TEST(Svd, SpectralProperties) {
  SeededRng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = gaussian_matrix(rng, 5, 4);
    const SvdResult s = svd(a);
    for (std::size_t i = 1; i < s.singular_values.size(); ++i)
      EXPECT_GE(s.singular_values[i - 1], s.singular_values[i]);
    double sq = 0.0;
    for (double v : s.singular_values) sq += v * v;
    EXPECT_NEAR(std::sqrt(sq), frobenius_norm(a), 1e-9);
    const std::vector<double> again = singular_values(reconstruct(s));
    for (std::size_t i = 0; i < again.size(); ++i) EXPECT_NEAR(again[i], s.singular_values[i], 1e-9);
  }
}

TEST(Svd, Deterministic) {
  SeededRng rng(24);
  const Matrix a = gaussian_matrix(rng, 8, 5);
  const SvdResult s1 = svd(a);
  const SvdResult s2 = svd(a);
  EXPECT_EQ(s1.left, s2.left);
  EXPECT_EQ(s1.right, s2.right);
  EXPECT_EQ(s1.singular_values, s2.singular_values);
}

TEST(Svd, ExhaustedSweepsReportOffDiagonalMass) {
  SeededRng rng(25);
  const Matrix a = gaussian_matrix(rng, 6, 5);
  try {
    (void)svd(a, SvdOptions{1e-12, 1});
    FAIL() << "one sweep should not converge";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.off_diagonal_mass(), 1e-12);
  }
}

TEST(Rng, SameSeedSameStream) {
  SeededRng r1(7), r2(7);
  EXPECT_EQ(gaussian_matrix(r1, 3, 3), gaussian_matrix(r2, 3, 3));
  SeededRng s1(7, 1), s2(7, 2);
  EXPECT_NE(s1.next_u64(), s2.next_u64());
}

TEST(Rng, GaussianMoments) {
  SeededRng rng(7);
  const Matrix g = gaussian_matrix(rng, 200, 200);
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, UniformRange) {
  SeededRng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  EXPECT_THROW(gaussian_matrix(rng, 0, 2), DimensionError);
}
