#include "dam/csv.hpp"

#include "dam/common.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>

namespace dam {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) {
    return s.empty() || s == "nan" || s == "NaN" || s == "NAN" || s == "null";
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
    if (n != 7) {
        h = mi = s = 0;
        n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d", &y, &mo, &d, &sep, &h, &mi);
        if (n != 6) {
            n = std::sscanf(text.c_str(), "%d-%d-%d", &y, &mo, &d);
            if (n != 3) throw user_error("unparseable timestamp '" + text + "'");
            sep = ' ';
        }
    }
    if ((sep != ' ' && sep != 'T') || mo < 1 || mo > 12 || d < 1 || d > 31 ||
        h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
        throw user_error("unparseable timestamp '" + text + "'");
    }
    return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
           h * 3600 + mi * 60 + s;
}

std::vector<TimeValueSeries> load_csv(const std::string& path, const TimeUnitConfig& units) {
    std::ifstream in(path);
    if (!in) throw user_error("cannot open CSV file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw user_error("CSV file '" + path + "' is empty");
    const std::vector<std::string> header = split_fields(line);
    if (header.size() < 2) {
        throw user_error("CSV file '" + path + "' needs a time column and at least one value column");
    }

    const std::size_t n_cols = header.size() - 1;
    std::vector<TimeValueSeries> series(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) {
        series[c].name = trim(header[c + 1]);
        series[c].resolution = units.days_per_tick();
    }

    bool use_timestamps = false;
    bool first_row = true;
    std::int64_t epoch0 = 0;
    std::int64_t prev_tick = 0;
    std::size_t row = 1;  // header was row 1
    const std::int64_t res_seconds = std::llround(units.base_seconds);

    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw user_error("CSV row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        }

        const std::string tfield = trim(fields[0]);
        std::int64_t tick = 0;
        if (first_row) use_timestamps = !parse_int(tfield, tick);
        if (use_timestamps) {
            std::int64_t epoch = 0;
            try {
                epoch = parse_timestamp(tfield);
            } catch (const user_error& e) {
                throw user_error("CSV row " + std::to_string(row) + ": " + e.what());
            }
            if (first_row) epoch0 = epoch;
            const std::int64_t delta = epoch - epoch0;
            if (res_seconds <= 0 || delta % res_seconds != 0) {
                throw user_error("CSV row " + std::to_string(row) +
                                 ": timestamp not on the declared resolution grid");
            }
            tick = delta / res_seconds;
        } else if (!parse_int(tfield, tick)) {
            throw user_error("CSV row " + std::to_string(row) + ": malformed tick '" +
                             tfield + "'");
        }
        if (!first_row && tick <= prev_tick) {
            throw user_error("CSV row " + std::to_string(row) +
                             ": non-monotonic timestamps");
        }
        prev_tick = tick;
        first_row = false;

        for (std::size_t c = 0; c < n_cols; ++c) {
            const std::string cell = trim(fields[c + 1]);
            series[c].ticks.push_back(tick);
            if (is_missing(cell)) {
                series[c].values.push_back(std::numeric_limits<double>::quiet_NaN());
                series[c].valid.push_back(false);
                continue;
            }
            double v = 0.0;
            if (!parse_double(cell, v)) {
                throw user_error("CSV row " + std::to_string(row) + ": malformed value '" +
                                 cell + "' in column '" + series[c].name + "'");
            }
            series[c].values.push_back(v);
            series[c].valid.push_back(true);
        }
    }

    if (series.empty() || series[0].ticks.empty()) {
        throw user_error("CSV file '" + path + "' contains no data rows");
    }
    for (auto& s : series) s.validate();
    return series;
}

void save_csv(const std::string& path, const std::vector<TimeValueSeries>& series) {
    if (series.empty()) throw std::invalid_argument("save_csv: no series");
    const std::size_t n = series[0].size();
    for (const auto& s : series) {
        if (s.size() != n || s.ticks != series[0].ticks) {
            throw std::invalid_argument("save_csv: series are not on one tick grid");
        }
    }

    std::ofstream out(path);
    if (!out) throw user_error("cannot write CSV file '" + path + "'");
    out << "tick";
    for (const auto& s : series) out << ',' << s.name;
    out << '\n';

    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
        out << series[0].ticks[i];
        for (const auto& s : series) {
            out << ',';
            if (!s.valid[i]) continue;
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, s.values[i]);
            if (ec != std::errc()) throw std::runtime_error("save_csv: value formatting failed");
            out.write(buf, p - buf);
        }
        out << '\n';
    }
}

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw user_error("cannot open dataset manifest '" + manifest_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw user_error("dataset manifest '" + manifest_path + "': " + e.what());
    }

    for (const auto& [key, _] : j.items()) {
        if (key != "name" && key != "csv" && key != "resolution_seconds" &&
            key != "time_scaling" && key != "splits") {
            throw user_error("dataset manifest: unknown key '" + key + "'");
        }
    }
    for (const std::string required : {"name", "csv", "resolution_seconds"}) {
        if (!j.contains(required)) {
            throw user_error("dataset manifest: missing key '" + required + "'");
        }
    }

    Dataset ds;
    ds.name = j.at("name").get<std::string>();
    ds.units.base_seconds = j.at("resolution_seconds").get<double>();
    ds.units.scaling = j.value("time_scaling", 1.0);
    if (ds.units.base_seconds <= 0 || ds.units.scaling <= 0) {
        throw user_error("dataset manifest: resolution_seconds and time_scaling must be > 0");
    }

    const auto csv_path =
        std::filesystem::path(manifest_path).parent_path() / j.at("csv").get<std::string>();
    ds.channels = load_csv(csv_path.string(), ds.units);

    const std::size_t n = ds.channels[0].size();
    if (j.contains("splits")) {
        const auto& sp = j.at("splits");
        for (const auto& [key, _] : sp.items()) {
            if (key != "fractions" && key != "boundaries") {
                throw user_error("dataset manifest: unknown splits key '" + key + "'");
            }
        }
        if (sp.contains("fractions")) {
            const auto f = sp.at("fractions").get<std::vector<double>>();
            if (f.size() != 2) throw user_error("splits.fractions needs [train, valid]");
            ds.split = split_by_fractions(n, f[0], f[1]);
        } else if (sp.contains("boundaries")) {
            const auto b = sp.at("boundaries").get<std::vector<std::size_t>>();
            if (b.size() != 2 || b[0] > b[1] || b[1] > n) {
                throw user_error("splits.boundaries needs [train_end, valid_end] within the data");
            }
            ds.split.train = {0, b[0]};
            ds.split.valid = {b[0], b[1]};
            ds.split.test = {b[1], n};
        } else {
            throw user_error("dataset manifest: splits needs fractions or boundaries");
        }
    } else {
        ds.split = split_by_fractions(n, 0.7, 0.1);
    }
    ds.split.validate(n);
    return ds;
}

}  // namespace dam
