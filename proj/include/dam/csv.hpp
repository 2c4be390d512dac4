#pragma once

#include "dam/series.hpp"

#include <string>
#include <vector>

namespace dam {

// Load a CSV whose first column is a timestamp ("YYYY-MM-DD[ T]HH:MM[:SS]"
// or date-only) or an integer tick, and whose remaining columns are numeric
// or empty. Returns one series per value column; empty (or NaN) cells get
// valid=false and are never filled. Ticks are derived from timestamps via
// units.base_seconds; rows must be strictly increasing in time, but gaps
// (absent ticks) are allowed.
std::vector<TimeValueSeries> load_csv(const std::string& path, const TimeUnitConfig& units);

// Write aligned series (same tick grid, e.g. the channels of one file) back
// to CSV with an integer tick column. Values use shortest round-trip
// formatting, so load_csv(save_csv(x)) is bit-identical; invalid cells are
// written empty.
void save_csv(const std::string& path, const std::vector<TimeValueSeries>& series);

// A dataset manifest binds a CSV to its time units and split boundaries:
//   {
//     "name": "etth1",
//     "csv": "etth1.csv",              // relative to the manifest file
//     "resolution_seconds": 3600,
//     "time_scaling": 1.0,             // stretches days for slow datasets
//     "splits": {"fractions": [0.7, 0.1]}   // or {"boundaries": [b0, b1]}
//   }
// Unknown keys are rejected.
struct Dataset {
    std::string name;
    std::vector<TimeValueSeries> channels;
    DatasetSplit split;
    TimeUnitConfig units;
};

Dataset load_dataset(const std::string& manifest_path);

// Parse an ISO-8601 style timestamp to epoch seconds (UTC, no zone suffix).
// Exposed for tests.
std::int64_t parse_timestamp(const std::string& text);

}  // namespace dam
