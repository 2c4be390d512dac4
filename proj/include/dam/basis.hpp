#pragma once

#include "dam/common.hpp"
#include "dam/quantiles.hpp"
#include "dam/series.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <string>
#include <vector>

namespace dam {

inline constexpr int kNumFrequencies = 437;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// The fixed 437-frequency basis. Frequencies are in cycles per day and are
// ordered by coverage class — minutes, hours, days, weeks, years — i.e.
// descending frequency, periods from 1 minute up to 10 years (1 year
// counted as 52 weeks = 364 days).
struct BasisSpec {
    std::vector<double> frequencies;

    // Per-class sizes, in order: minutes, hours, days, weeks, years.
    std::vector<int> class_sizes;

    static const char* version() { return "fset-437-v1"; }
};

BasisSpec build_frequency_set();

// Robust per-datum normalization: v' = (v - med)/iqr with the IQR floored
// at 1e-6 so constant contexts stay finite.
struct RobustNorm {
    double med = 0.0;
    double iqr = 1.0;
};

inline constexpr double kIqrFloor = 1e-6;

RobustNorm robust_norm_of(const std::vector<double>& values);

std::pair<std::vector<double>, RobustNorm> robust_standardize(
    const std::vector<double>& values);

// Affine adjustment applied when de-standardizing a basis sum. Two
// parameterizations exist and both are supported:
//   eq2:  f = IQR * (a * sum - b) + MED           (standalone form)
//   appb: f = IQR * ((sum - b) / a) + MED          (a = scale, b = offset)
// The appb ordering is canonical for backbone output; for pure fits
// (a=1, b=0) the two coincide.
enum class AffineForm { eq2, appb };

struct AffineParams {
    double a = 1.0;
    double b = 0.0;
};

// Continuous, horizon-free function of time: 437 sin/cos pairs plus the
// robust de-standardization and affine adjustment. Evaluable at any real
// t (days), past or future; smooth by construction. Query times are in
// the same "now"-relative frame the coefficients were produced in.
struct ForecastFunction {
    BasisSpec spec;
    MatrixD theta;  // 437 x 2: column 0 = sin coefficients, column 1 = cos
    RobustNorm norm;
    AffineParams affine;
    AffineForm form = AffineForm::eq2;
};

std::vector<double> evaluate(const ForecastFunction& fn,
                             const std::vector<double>& query_times);

// Flat single-record CSV: version+form tag, med, iqr, a, b, then the 874
// coefficients (sin block, cos block). Round-trips bit-identically.
void save_forecast_function(const std::string& path, const ForecastFunction& fn);
ForecastFunction load_forecast_function(const std::string& path);

// The 50 interior percentile fractions linspace(0,1,52)[1:-1] used by the
// affine token embedding.
std::vector<double> interior_percentile_fractions();

// Build the regression design matrix X = [sin(2*pi*nu*t) | cos(2*pi*nu*t)]
// of shape n x 874.
template <typename S>
Matrix<S> basis_design_matrix(const std::vector<double>& times, const BasisSpec& spec) {
    const auto n = static_cast<Eigen::Index>(times.size());
    const auto k = static_cast<Eigen::Index>(spec.frequencies.size());
    Matrix<S> X(n, 2 * k);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index f = 0; f < k; ++f) {
            const double arg = kTwoPi * spec.frequencies[static_cast<std::size_t>(f)] *
                               times[static_cast<std::size_t>(i)];
            X(i, f) = static_cast<S>(std::sin(arg));
            X(i, k + f) = static_cast<S>(std::cos(arg));
        }
    }
    return X;
}

// Fit basis coefficients to (times, standardized values) by regularized
// least squares:  (X'X + lambda*I') theta = X'v,  where I' is the identity
// with entry (0,0) zeroed (the first sin coefficient is unregularized).
// Solved exactly via Cholesky on the SPD normal matrix, falling back to
// LDL' (and raising on rank deficiency) when lambda == 0.
//
// Returns n_frequencies x 2: column 0 = sin coefficients, column 1 = cos.
template <typename S>
Matrix<S> init_theta(const std::vector<double>& times, const std::vector<S>& values,
                     const BasisSpec& spec, double lambda = 1.0) {
    if (times.size() != values.size() || times.empty()) {
        throw std::invalid_argument("init_theta: times/values must be non-empty and equal length");
    }
    if (lambda < 0.0) throw std::invalid_argument("init_theta: lambda must be >= 0");

    const auto k = static_cast<Eigen::Index>(spec.frequencies.size());
    const Matrix<S> X = basis_design_matrix<S>(times, spec);
    const Eigen::Map<const Vector<S>> v(values.data(), static_cast<Eigen::Index>(values.size()));

    // Only the lower triangle is filled; LLT/LDLT consume exactly that.
    Matrix<S> A = Matrix<S>::Zero(2 * k, 2 * k);
    A.template selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    A.diagonal().array() += static_cast<S>(lambda);
    A(0, 0) -= static_cast<S>(lambda);
    const Vector<S> b = X.transpose() * v;

    Vector<S> sol;
    bool solved = false;
    if (lambda > 0.0) {
        Eigen::LLT<Matrix<S>> llt(A);
        if (llt.info() == Eigen::Success) {
            sol = llt.solve(b);
            solved = true;
        }
    }
    if (!solved) {
        Eigen::LDLT<Matrix<S>> ldlt(A);
        if (ldlt.info() != Eigen::Success) {
            throw std::runtime_error("init_theta: normal matrix factorization failed (rank deficient)");
        }
        sol = ldlt.solve(b);
        // LDL' happily "solves" singular systems; reject solutions that do
        // not actually satisfy the normal equations.
        const S resid = (A.template selfadjointView<Eigen::Lower>() * sol - b)
                            .template lpNorm<Eigen::Infinity>();
        const S scale = std::max(b.template lpNorm<Eigen::Infinity>(), static_cast<S>(1));
        const S tol = static_cast<S>(std::is_same_v<S, double> ? 1e-6 : 1e-2);
        if (!(resid <= tol * scale)) {
            throw std::runtime_error(
                "init_theta: rank-deficient system at lambda=0 (degenerate times)");
        }
    }

    Matrix<S> theta(k, 2);
    theta.col(0) = sol.head(k);  // sin
    theta.col(1) = sol.tail(k);  // cos
    return theta;
}

// Standardize the unmasked points of a window and fit theta0 to them; the
// returned function (a=1, b=0, eq2 form) imputes the masked points when
// evaluated at their times. Times are taken in the series' current
// "now"-relative frame. `masked[i]` hides series index i; invalid samples
// are always excluded.
ForecastFunction imputation_fit(const TimeValueSeries& series,
                                const std::vector<bool>& masked, IndexRange window,
                                double lambda = 1.0);

}  // namespace dam
