#pragma once

// Trace files: CSV with header `t,x,f,label`, floats written with 9
// significant digits, labels as their integer encoding. Layer geometry and
// puncture timestamps live in an optional JSON sidecar so a trace can be
// relabeled later.

#include <filesystem>
#include <string>
#include <string_view>

#include "needle/mechanics.hpp"

namespace needle::dataset {

/// printf "%.9g".
std::string format_sample(double value);

void write_trace_csv(const std::filesystem::path& path, const mechanics::InsertionTrace& trace);

/// Reads `t,x,f,label` records. The sample rate is recovered from the time
/// step and the commanded velocity from position differences.
/// Throws FormatError on malformed content.
mechanics::InsertionTrace read_trace_csv(const std::filesystem::path& path);

/// Same as read_trace_csv, from an in-memory document.
mechanics::InsertionTrace parse_trace_csv(std::string_view text, const std::string& name = "trace");

void write_trace_metadata(const std::filesystem::path& path, const mechanics::InsertionTrace& trace);
/// Fills layers, puncture timestamps and sample rate from a sidecar.
void read_trace_metadata(const std::filesystem::path& path, mechanics::InsertionTrace& trace);

}  // namespace needle::dataset
