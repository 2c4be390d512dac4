#include "dam/basis.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace dam {

namespace {

// Fixed basis periods per coverage class. These exact values are part of
// the model contract (checkpoints created with them are only valid against
// the same table, hence the version tag).
const double kMinutePeriods[] = {1, 6, 11, 16, 21, 25, 31, 36, 41, 45, 50, 55};

const double kHourPeriods[] = {
    1.0,  1.2,  1.5,  1.7,  2.0,  2.2,  2.5,  2.7,  3.0,  3.2,  3.5,  3.7,
    4.0,  4.2,  4.5,  4.8,  5.0,  5.2,  5.5,  5.8,  6.0,  6.3,  6.5,  6.7,
    7.0,  7.3,  7.5,  7.8,  8.0,  8.2,  8.5,  8.7,  9.0,  9.2,  9.5,  9.7,
    10.0, 10.3, 10.5, 10.7, 11.0, 11.2, 11.5, 11.8, 12.0, 12.2, 12.5, 12.7,
    13.0, 13.2, 13.5, 13.7, 14.0, 14.2, 14.5, 14.8, 15.0, 15.3, 15.5, 15.7,
    16.0, 16.2, 16.5, 16.8, 17.0, 17.2, 17.5, 17.8, 18.0, 18.3, 18.5, 18.8,
    19.0, 19.3, 19.5, 19.7, 20.0, 20.2, 20.5, 20.8, 21.0, 21.2, 21.5, 21.8,
    22.0, 22.3, 22.5, 22.7, 23.0, 23.3, 23.5, 23.7};

const double kDayPeriods[] = {
    1.00, 1.01, 1.02, 1.03, 1.04, 1.05, 1.06, 1.07, 1.08, 1.09, 1.10, 1.11,
    1.12, 1.14, 1.15, 1.16, 1.17, 1.18, 1.19, 1.20, 1.21, 1.22, 1.23, 1.24,
    1.25, 1.26, 1.27, 1.28, 1.29, 1.30, 1.31, 1.32, 1.33, 1.34, 1.35, 1.36,
    1.37, 1.39, 1.40, 1.41, 1.42, 1.43, 1.44, 1.45, 1.46, 1.47, 1.48, 1.49,
    1.50, 1.51, 1.52, 1.53, 1.54, 1.55, 1.56, 1.57, 1.58, 1.59, 1.60, 1.61,
    1.62, 1.64, 1.65, 1.66, 1.67, 1.68, 1.69, 1.70, 1.71, 1.72, 1.73, 1.74,
    1.75, 1.76, 1.77, 1.78, 1.79, 1.80, 1.81, 1.82, 1.83, 1.84, 1.85, 1.86,
    1.87, 1.89, 1.90, 1.91, 1.92, 1.93, 1.94, 1.95, 1.96, 1.97, 1.98, 1.99,
    2.00, 2.25, 2.50, 2.75, 3.00, 3.25, 3.50, 3.75, 4.00, 4.25, 4.50, 4.75,
    5.00, 5.25, 5.50, 5.75, 6.00, 6.25, 6.50, 6.75, 7.00};

const double kWeekPeriods[] = {
    1.04,  1.07,  1.11,  1.14,  1.18,  1.21,  1.25,  1.29,  1.32,  1.36,
    1.39,  1.43,  1.46,  1.50,  1.54,  1.57,  1.61,  1.64,  1.68,  1.71,
    1.75,  1.79,  1.82,  1.86,  1.89,  1.93,  1.96,  2.00,  2.04,  2.07,
    2.11,  2.14,  2.18,  2.21,  2.25,  2.29,  2.32,  2.36,  2.39,  2.43,
    2.46,  2.50,  2.54,  2.57,  2.61,  2.64,  2.68,  2.71,  2.75,  2.79,
    2.82,  2.86,  2.89,  2.93,  2.96,  3.00,  3.04,  3.07,  3.11,  3.14,
    3.18,  3.21,  3.25,  3.29,  3.32,  3.36,  3.39,  3.43,  3.46,  3.50,
    3.54,  3.57,  3.61,  3.64,  3.68,  3.71,  3.75,  3.79,  3.82,  3.86,
    3.89,  3.93,  3.96,  4.00,  4.50,  5.00,  5.50,  6.00,  6.50,  7.00,
    7.50,  8.00,  8.50,  9.00,  9.50,  10.00, 10.50, 11.00, 11.50, 12.00,
    12.50, 13.00, 13.50, 14.00, 14.50, 15.00, 15.50, 16.00, 16.50, 17.00,
    17.50, 18.00, 18.50, 19.00, 19.50, 20.00, 20.50, 21.00, 21.50, 22.00,
    22.50, 23.00, 23.50, 24.00, 24.50, 25.00, 25.50, 26.00, 26.50, 27.00,
    27.50, 28.00, 28.50, 29.00, 29.50, 30.00, 30.50, 31.00, 31.50, 32.00,
    32.50, 33.00, 33.50, 34.00, 34.50, 35.00, 35.50, 36.00, 36.50, 37.00,
    37.50, 38.00, 38.50, 39.00, 39.50, 40.00, 40.50, 41.00, 41.50, 42.00,
    42.50, 43.00, 43.50, 44.00, 44.50, 45.00, 45.50, 46.00, 46.50, 47.00,
    47.50, 48.00, 48.50, 49.00, 49.50, 50.00, 50.50, 51.00, 51.50, 52.00};

const double kYearPeriods[] = {
    1.25, 1.50, 1.75, 2.00, 2.25, 2.50, 2.75, 3.00, 3.25, 3.50, 3.75, 4.00,
    4.25, 4.50, 4.75, 5.00, 5.25, 5.50, 5.75, 6.00, 6.25, 6.50, 6.75, 7.00,
    7.25, 7.50, 7.75, 8.00, 8.25, 8.50, 8.75, 9.00, 9.25, 9.50, 9.75, 10.00};

// Days per unit of each class; a year is 52 weeks = 364 days.
constexpr double kMinuteDays = 1.0 / 1440.0;
constexpr double kHourDays = 1.0 / 24.0;
constexpr double kWeekDays = 7.0;
constexpr double kYearDays = 364.0;

void append_class(BasisSpec& spec, const double* periods, int count, double to_days) {
    for (int i = 0; i < count; ++i) {
        spec.frequencies.push_back(1.0 / (periods[i] * to_days));
    }
    spec.class_sizes.push_back(count);
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("double formatting failed");
    return std::string(buf, p);
}

double parse_double_exact(const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::runtime_error("forecast function record: malformed number '" + s + "'");
    }
    return v;
}

}  // namespace

BasisSpec build_frequency_set() {
    BasisSpec spec;
    spec.frequencies.reserve(kNumFrequencies);
    append_class(spec, kMinutePeriods, static_cast<int>(std::size(kMinutePeriods)), kMinuteDays);
    append_class(spec, kHourPeriods, static_cast<int>(std::size(kHourPeriods)), kHourDays);
    append_class(spec, kDayPeriods, static_cast<int>(std::size(kDayPeriods)), 1.0);
    append_class(spec, kWeekPeriods, static_cast<int>(std::size(kWeekPeriods)), kWeekDays);
    append_class(spec, kYearPeriods, static_cast<int>(std::size(kYearPeriods)), kYearDays);
    return spec;
}

RobustNorm robust_norm_of(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("robust_norm_of: empty vector");
    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    RobustNorm n;
    n.med = quantile_sorted(sorted, 0.5);
    n.iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    if (n.iqr < kIqrFloor) n.iqr = kIqrFloor;
    return n;
}

std::pair<std::vector<double>, RobustNorm> robust_standardize(
    const std::vector<double>& values) {
    const RobustNorm n = robust_norm_of(values);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - n.med) / n.iqr;
    return {std::move(out), n};
}

std::vector<double> interior_percentile_fractions() {
    std::vector<double> q(50);
    for (int k = 1; k <= 50; ++k) q[static_cast<std::size_t>(k - 1)] = static_cast<double>(k) / 51.0;
    return q;
}

std::vector<double> evaluate(const ForecastFunction& fn,
                             const std::vector<double>& query_times) {
    const auto k = static_cast<Eigen::Index>(fn.spec.frequencies.size());
    if (fn.theta.rows() != k || fn.theta.cols() != 2) {
        throw std::invalid_argument("evaluate: theta shape does not match the frequency set");
    }
    std::vector<double> out(query_times.size());
    for (std::size_t i = 0; i < query_times.size(); ++i) {
        const double t = query_times[i];
        double sum = 0.0;
        for (Eigen::Index f = 0; f < k; ++f) {
            const double arg = kTwoPi * fn.spec.frequencies[static_cast<std::size_t>(f)] * t;
            sum += fn.theta(f, 0) * std::sin(arg) + fn.theta(f, 1) * std::cos(arg);
        }
        double adjusted = 0.0;
        if (fn.form == AffineForm::eq2) {
            adjusted = fn.affine.a * sum - fn.affine.b;
        } else {
            // a is a divisor here; keep it away from zero, preserving sign.
            double a = fn.affine.a;
            if (a >= 0.0 && a < 1e-6) a = 1e-6;
            if (a < 0.0 && a > -1e-6) a = -1e-6;
            adjusted = (sum - fn.affine.b) / a;
        }
        out[i] = fn.norm.iqr * adjusted + fn.norm.med;
    }
    return out;
}

void save_forecast_function(const std::string& path, const ForecastFunction& fn) {
    std::ofstream out(path);
    if (!out) throw user_error("cannot write forecast function record '" + path + "'");
    out << "version,form,med,iqr,a,b";
    const auto k = fn.theta.rows();
    for (Eigen::Index f = 0; f < k; ++f) out << ",s" << f;
    for (Eigen::Index f = 0; f < k; ++f) out << ",c" << f;
    out << '\n';
    out << BasisSpec::version() << ',' << (fn.form == AffineForm::eq2 ? "eq2" : "appb");
    out << ',' << format_double(fn.norm.med) << ',' << format_double(fn.norm.iqr);
    out << ',' << format_double(fn.affine.a) << ',' << format_double(fn.affine.b);
    for (Eigen::Index f = 0; f < k; ++f) out << ',' << format_double(fn.theta(f, 0));
    for (Eigen::Index f = 0; f < k; ++f) out << ',' << format_double(fn.theta(f, 1));
    out << '\n';
}

ForecastFunction load_forecast_function(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw user_error("cannot open forecast function record '" + path + "'");
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row)) {
        throw user_error("forecast function record '" + path + "' is truncated");
    }
    std::vector<std::string> fields;
    {
        std::stringstream ss(row);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
    }
    if (fields.size() != 6 + 2 * kNumFrequencies) {
        throw user_error("forecast function record '" + path + "': wrong field count");
    }
    if (fields[0] != BasisSpec::version()) {
        throw user_error("forecast function record '" + path + "': frequency-set version '" +
                         fields[0] + "' does not match this build (" + BasisSpec::version() + ")");
    }

    ForecastFunction fn;
    fn.spec = build_frequency_set();
    if (fields[1] == "eq2") {
        fn.form = AffineForm::eq2;
    } else if (fields[1] == "appb") {
        fn.form = AffineForm::appb;
    } else {
        throw user_error("forecast function record '" + path + "': unknown form '" + fields[1] + "'");
    }
    fn.norm.med = parse_double_exact(fields[2]);
    fn.norm.iqr = parse_double_exact(fields[3]);
    fn.affine.a = parse_double_exact(fields[4]);
    fn.affine.b = parse_double_exact(fields[5]);
    fn.theta.resize(kNumFrequencies, 2);
    for (Eigen::Index f = 0; f < kNumFrequencies; ++f) {
        fn.theta(f, 0) = parse_double_exact(fields[6 + static_cast<std::size_t>(f)]);
        fn.theta(f, 1) = parse_double_exact(fields[6 + kNumFrequencies + static_cast<std::size_t>(f)]);
    }
    return fn;
}

ForecastFunction imputation_fit(const TimeValueSeries& series,
                                const std::vector<bool>& masked, IndexRange window,
                                double lambda) {
    if (masked.size() != series.size()) {
        throw std::invalid_argument("imputation_fit: mask length must match the series");
    }
    if (window.end > series.size() || window.begin >= window.end) {
        throw std::invalid_argument("imputation_fit: window out of range");
    }

    std::vector<double> times;
    std::vector<double> raw;
    for (std::size_t i = window.begin; i < window.end; ++i) {
        if (!series.valid[i] || masked[i]) continue;
        times.push_back(series.time(i));
        raw.push_back(series.values[i]);
    }
    if (raw.empty()) {
        throw user_error("imputation_fit: window contains no unmasked points");
    }

    auto [standardized, norm] = robust_standardize(raw);
    ForecastFunction fn;
    fn.spec = build_frequency_set();
    fn.theta = init_theta<double>(times, standardized, fn.spec, lambda);
    fn.norm = norm;
    fn.affine = {1.0, 0.0};
    fn.form = AffineForm::eq2;
    return fn;
}

}  // namespace dam
