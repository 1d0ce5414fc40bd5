#include <cmath>
#include <cstdio>
#include <fstream>

#include "csv.hpp"
#include "json.hpp"
#include "needle/dataset.hpp"

namespace needle::dataset {

using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kWindows = "windows.csv";
constexpr const char* kFormatName = "needle-dataset";
constexpr int kFormatVersion = 1;

json manifest_json(const Dataset& data) {
  json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["sample_rate_hz"] = data.sample_rate;
  j["window_length"] = data.window_length;
  j["frames"] = json::array();
  for (const auto& info : data.frames) {
    j["frames"].push_back(json{{"id", info.id},
                               {"tissue", std::string(to_string(info.tissue))},
                               {"scene", info.scene},
                               {"seed", info.seed},
                               {"puncture_timestamps", info.puncture_timestamps}});
  }
  j["examples"] = json::array();
  for (const auto& ex : data.examples) {
    j["examples"].push_back(json::array({ex.frame_id, ex.start, to_index(ex.label)}));
  }
  j["class_counts"] = data.class_counts;
  if (data.normalization) {
    j["normalization"] = json{{"mean", data.normalization->mean},
                              {"std", data.normalization->stddev}};
  } else {
    j["normalization"] = nullptr;
  }
  return j;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  data.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kManifest);
    if (!out) throw std::runtime_error("cannot write " + (dir / kManifest).string());
    out << manifest_json(data).dump(1) << '\n';
  }
  std::ofstream out(dir / kWindows, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / kWindows).string());
  out << "t,x,f,label\n";
  std::string block;
  char line[96];
  for (const auto& ex : data.examples) {
    block.clear();
    for (const auto& s : ex.samples) {
      const int n = std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g,%d\n", static_cast<double>(s.t),
                                  static_cast<double>(s.x), static_cast<double>(s.f),
                                  to_index(s.label));
      block.append(line, static_cast<std::size_t>(n));
    }
    out << block;
  }
  if (!out) throw std::runtime_error("write failed for " + (dir / kWindows).string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const std::string manifest_name = (dir / kManifest).string();
  const std::string windows_name = (dir / kWindows).string();

  json j;
  try {
    j = json::parse(csv::read_file(dir / kManifest));
  } catch (const json::exception& e) {
    throw FormatError(manifest_name, 0, e.what());
  }
  if (j.value("format", std::string()) != kFormatName) {
    throw FormatError(manifest_name, 0, "not a needle dataset manifest");
  }
  if (j.value("version", 0) != kFormatVersion) {
    throw FormatError(manifest_name, 0, "unsupported dataset version");
  }

  Dataset data;
  struct ExampleHeader {
    std::uint32_t frame_id;
    std::uint32_t start;
    int label;
  };
  std::vector<ExampleHeader> headers;
  std::size_t entry = 0;
  try {
    data.sample_rate = j.at("sample_rate_hz").get<double>();
    data.window_length = j.at("window_length").get<int>();
    for (const auto& f : j.at("frames")) {
      FrameInfo info;
      info.id = f.at("id").get<std::uint32_t>();
      info.tissue = parse_tissue(f.at("tissue").get<std::string>());
      info.scene = f.at("scene").get<std::string>();
      info.seed = f.at("seed").get<std::uint64_t>();
      info.puncture_timestamps = f.at("puncture_timestamps").get<std::vector<double>>();
      data.frames.push_back(std::move(info));
      ++entry;
    }
    entry = 0;
    for (const auto& e : j.at("examples")) {
      headers.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>(), e.at(2).get<int>()});
      if (headers.back().label < 0 || headers.back().label >= kNumClasses) {
        throw std::out_of_range("label " + std::to_string(headers.back().label) + " outside 0..7");
      }
      ++entry;
    }
    if (!j.at("normalization").is_null()) {
      Normalization norm;
      norm.mean = j.at("normalization").at("mean").get<std::array<double, kChannels>>();
      norm.stddev = j.at("normalization").at("std").get<std::array<double, kChannels>>();
      data.normalization = norm;
    }
    data.class_counts = j.at("class_counts").get<std::array<std::size_t, kNumClasses>>();
  } catch (const std::exception& e) {
    throw FormatError(manifest_name, entry, e.what());
  }
  if (data.window_length < 1) throw FormatError(manifest_name, 0, "window_length must be positive");

  const std::string text = csv::read_file(dir / kWindows);
  csv::LineReader reader(text);
  std::string_view line;
  if (!reader.next(line) || csv::trim(line) != "t,x,f,label") {
    throw FormatError(windows_name, 1, "expected header 't,x,f,label'");
  }
  const auto length = static_cast<std::size_t>(data.window_length);
  data.examples.reserve(headers.size());
  TrainingExample current;
  const auto finish_block = [&](std::size_t line_no) {
    const std::size_t index = data.examples.size();
    if (current.samples.size() != length) {
      throw FormatError(windows_name, line_no,
                        "window " + std::to_string(index) + " has " +
                            std::to_string(current.samples.size()) + " samples, expected " +
                            std::to_string(length));
    }
    if (index >= headers.size()) {
      throw FormatError(windows_name, line_no, "more windows than manifest examples");
    }
    current.frame_id = headers[index].frame_id;
    current.start = headers[index].start;
    current.label = current.samples.back().label;
    if (to_index(current.label) != headers[index].label) {
      throw FormatError(windows_name, line_no,
                        "window " + std::to_string(index) + " final label disagrees with manifest");
    }
    data.examples.push_back(std::move(current));
    current = TrainingExample{};
    current.samples.reserve(length);
  };

  current.samples.reserve(length);
  while (reader.next(line)) {
    if (csv::trim(line).empty()) continue;
    std::array<std::string_view, 4> fields;
    if (csv::split(line, fields) != 4) {
      throw FormatError(windows_name, reader.line_number(), "expected 4 fields");
    }
    WindowSample s;
    int label = -1;
    if (!csv::parse_number(fields[0], s.t) || !csv::parse_number(fields[1], s.x) ||
        !csv::parse_number(fields[2], s.f) || !csv::parse_int(fields[3], label)) {
      throw FormatError(windows_name, reader.line_number(), "unparsable field");
    }
    if (!std::isfinite(s.t) || !std::isfinite(s.x) || !std::isfinite(s.f)) {
      throw FormatError(windows_name, reader.line_number(), "non-finite value");
    }
    if (label < 0 || label >= kNumClasses) {
      throw FormatError(windows_name, reader.line_number(),
                        "label " + std::to_string(label) + " outside 0..7");
    }
    s.label = static_cast<ClassLabel>(label);
    // Timestamps rise within a window; a drop marks the next window.
    if (!current.samples.empty() && !(s.t > current.samples.back().t)) {
      finish_block(reader.line_number());
    }
    current.samples.push_back(s);
  }
  if (!current.samples.empty()) finish_block(reader.line_number());
  if (data.examples.size() != headers.size()) {
    throw FormatError(windows_name, reader.line_number(),
                      "found " + std::to_string(data.examples.size()) + " windows, manifest lists " +
                          std::to_string(headers.size()));
  }

  std::array<std::size_t, kNumClasses> stored = data.class_counts;
  data.recount();
  if (stored != data.class_counts) {
    throw FormatError(manifest_name, 0, "class_counts do not match the examples");
  }
  return data;
}

}  // namespace needle::dataset
