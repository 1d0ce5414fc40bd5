#include "needle/trace_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "csv.hpp"
#include "needle/dataset.hpp"

namespace needle::dataset {

using nlohmann::json;

std::string format_sample(double value) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.9g", value);
  return std::string(buf, static_cast<std::size_t>(n));
}

void write_trace_csv(const std::filesystem::path& path, const mechanics::InsertionTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "t,x,f,label\n";
  char line[128];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const int label = i < trace.label.size() ? to_index(trace.label[i]) : 0;
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g,%d\n", trace.t[i], trace.x[i], trace.f[i],
                  label);
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

mechanics::InsertionTrace parse_trace_csv(std::string_view text, const std::string& name) {
  mechanics::InsertionTrace trace;
  csv::LineReader reader(text);
  std::string_view line;
  if (!reader.next(line) || csv::trim(line) != "t,x,f,label") {
    throw FormatError(name, 1, "expected header 't,x,f,label'");
  }
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    std::array<std::string_view, 4> fields;
    if (csv::split(line, fields) != 4) {
      throw FormatError(name, reader.line_number(), "expected 4 fields");
    }
    double t = 0, x = 0, f = 0;
    int label = 0;
    if (!csv::parse_number(fields[0], t) || !csv::parse_number(fields[1], x) ||
        !csv::parse_number(fields[2], f) || !csv::parse_int(fields[3], label)) {
      throw FormatError(name, reader.line_number(), "unparsable field");
    }
    if (!std::isfinite(t) || !std::isfinite(x) || !std::isfinite(f)) {
      throw FormatError(name, reader.line_number(), "non-finite value");
    }
    if (label < 0 || label >= kNumClasses) {
      throw FormatError(name, reader.line_number(), "label " + std::to_string(label) + " outside 0..7");
    }
    if (!trace.t.empty() && !(t > trace.t.back())) {
      throw FormatError(name, reader.line_number(), "timestamps must strictly increase");
    }
    trace.t.push_back(t);
    trace.x.push_back(x);
    trace.f.push_back(f);
    trace.label.push_back(static_cast<ClassLabel>(label));
  }
  if (trace.t.empty()) throw FormatError(name, reader.line_number(), "no samples");

  const std::size_t n = trace.t.size();
  if (n > 1) {
    trace.sample_rate = std::round(static_cast<double>(n - 1) / (trace.t.back() - trace.t.front()) * 1e6) / 1e6;
  }
  trace.velocity.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    trace.velocity[i] = (trace.x[i] - trace.x[i - 1]) * trace.sample_rate;
  }
  if (n > 1) trace.velocity[0] = trace.velocity[1];
  return trace;
}

mechanics::InsertionTrace read_trace_csv(const std::filesystem::path& path) {
  return parse_trace_csv(csv::read_file(path), path.string());
}

void write_trace_metadata(const std::filesystem::path& path,
                          const mechanics::InsertionTrace& trace) {
  json j;
  j["sample_rate_hz"] = trace.sample_rate;
  j["puncture_timestamps"] = trace.puncture_timestamps;
  j["layers"] = json::array();
  for (const auto& span : trace.layers) {
    json layer{{"surface", span.surface}, {"exit", span.exit}, {"relax_samples", span.relax_samples}};
    layer["tissue"] = span.tissue ? json(std::string(to_string(*span.tissue))) : json(nullptr);
    j["layers"].push_back(layer);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void read_trace_metadata(const std::filesystem::path& path, mechanics::InsertionTrace& trace) {
  json j;
  try {
    j = json::parse(csv::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string(), 0, e.what());
  }
  trace.sample_rate = j.value("sample_rate_hz", trace.sample_rate);
  trace.puncture_timestamps = j.value("puncture_timestamps", std::vector<double>{});
  trace.layers.clear();
  std::size_t index = 0;
  for (const auto& layer : j.at("layers")) {
    mechanics::LayerSpan span;
    try {
      span.surface = layer.at("surface").get<double>();
      span.exit = layer.at("exit").get<double>();
      span.relax_samples = layer.value("relax_samples", 0);
      if (!layer.at("tissue").is_null()) span.tissue = parse_tissue(layer.at("tissue").get<std::string>());
    } catch (const std::exception& e) {
      throw FormatError(path.string(), index, e.what());
    }
    trace.layers.push_back(span);
    ++index;
  }
}

}  // namespace needle::dataset
