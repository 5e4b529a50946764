#include "magcal/io.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace magcal {

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", value);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view text, std::size_t line, std::string_view column) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw Error(ErrorCode::kParse, fmt::format("line {}: column '{}': cannot parse '{}' as a number",
                                               line, column, text));
  }
  return value;
}

}  // namespace

SensorLog parse_sensor_log(std::istream& in) {
  static constexpr std::array<std::string_view, 7> kRequired = {"timestamp", "ax", "ay", "az",
                                                                 "mx",        "my", "mz"};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::array<std::size_t, 7> column{};
  std::optional<std::size_t> set_column;
  std::size_t width = 0;
  SensorLog log;
  double last_time = -std::numeric_limits<double>::infinity();

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (!have_header) {
      std::map<std::string, std::size_t, std::less<>> index;
      for (std::size_t k = 0; k < fields.size(); ++k) {
        std::string name(fields[k]);
        std::transform(name.begin(), name.end(), name.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        index[name] = k;
      }
      for (std::size_t k = 0; k < kRequired.size(); ++k) {
        const auto it = index.find(kRequired[k]);
        if (it == index.end()) {
          throw Error(ErrorCode::kParse,
                      fmt::format("line {}: header is missing column '{}'", line_no, kRequired[k]));
        }
        column[k] = it->second;
      }
      if (const auto it = index.find("set_id"); it != index.end()) {
        set_column = it->second;
        log.set_ids.emplace();
      }
      width = fields.size();
      have_header = true;
      continue;
    }
    if (fields.size() != width) {
      throw Error(ErrorCode::kParse, fmt::format("line {}: expected {} fields, found {}", line_no,
                                                 width, fields.size()));
    }
    const double t = parse_number<double>(fields[column[0]], line_no, "timestamp");
    if (t < last_time) {
      throw Error(ErrorCode::kParse, fmt::format("line {}: timestamps must be non-decreasing", line_no));
    }
    last_time = t;
    ReadingPair pair;
    for (int k = 0; k < 3; ++k) {
      pair.accel(k) = parse_number<double>(fields[column[1 + k]], line_no, kRequired[1 + k]);
      pair.mag(k) = parse_number<double>(fields[column[4 + k]], line_no, kRequired[4 + k]);
    }
    log.timestamps.emplace_back(fields[column[0]]);
    log.readings.push_back(pair);
    if (set_column) {
      const long id = parse_number<long>(fields[*set_column], line_no, "set_id");
      if (!log.set_ids->empty() && id < log.set_ids->back()) {
        throw Error(ErrorCode::kParse, fmt::format("line {}: set_id must be non-decreasing", line_no));
      }
      log.set_ids->push_back(id);
    }
  }
  if (!have_header) throw Error(ErrorCode::kParse, "input is empty (no header row)");
  if (log.readings.empty()) throw Error(ErrorCode::kParse, "input has a header but no data rows");
  return log;
}

SensorLog read_sensor_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return parse_sensor_log(in);
}

void write_sensor_log(std::ostream& out, const SensorLog& log) {
  out << "timestamp,ax,ay,az,mx,my,mz";
  if (log.set_ids) out << ",set_id";
  out << '\n';
  for (std::size_t k = 0; k < log.readings.size(); ++k) {
    const ReadingPair& r = log.readings[k];
    out << log.timestamps[k];
    for (int c = 0; c < 3; ++c) out << ',' << format_real(r.accel(c));
    for (int c = 0; c < 3; ++c) out << ',' << format_real(r.mag(c));
    if (log.set_ids) out << ',' << (*log.set_ids)[k];
    out << '\n';
  }
}

namespace {

using Json = nlohmann::ordered_json;

Json matrix_json(const Matrix3d& m) {
  Json a = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  }
  return a;
}

Json sensor_json(const SensorParamsd& p) {
  Json j;
  j["K"] = matrix_json(p.gain);
  j["b"] = {p.bias(0), p.bias(1), p.bias(2)};
  j["Sigma"] = matrix_json(p.covariance);
  return j;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::kSchema, std::string("calibration file is missing '") + key + "'");
  }
  return j.at(key);
}

std::vector<double> numbers(const Json& j, std::size_t expected, const char* what) {
  if (!j.is_array() || j.size() != expected) {
    throw Error(ErrorCode::kSchema,
                fmt::format("'{}' must be an array of {} numbers", what, expected));
  }
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::kSchema, fmt::format("'{}' holds a non-number", what));
    out.push_back(v.get<double>());
  }
  return out;
}

SensorParamsd sensor_from_json(const Json& j) {
  SensorParamsd p;
  const auto k = numbers(field(j, "K"), 9, "K");
  const auto b = numbers(field(j, "b"), 3, "b");
  const auto s = numbers(field(j, "Sigma"), 9, "Sigma");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      p.gain(r, c) = k[static_cast<std::size_t>(3 * r + c)];
      p.covariance(r, c) = s[static_cast<std::size_t>(3 * r + c)];
    }
    p.bias(r) = b[static_cast<std::size_t>(r)];
  }
  return p;
}

}  // namespace

std::string serialize_calibration(const CalibrationFile& file) {
  const CalibrationState& s = file.state;
  Json j;
  j["schema"] = kCalibrationSchema;
  j["version"] = kCalibrationVersion;
  j["gauge"] = {{"g_z", -1.0}, {"h_x", 1.0}, {"accelerometer_gain", "upper-triangular"}};
  j["accelerometer"] = sensor_json(s.accel);
  j["magnetometer"] = sensor_json(s.mag);
  j["fields"] = {{"g_z", s.fields.g_z}, {"h_x", s.fields.h_x}, {"h_z", s.fields.h_z}};
  Json rotations = Json::array();
  for (const auto& q : s.rotations) rotations.push_back({q.w(), q.x(), q.y(), q.z()});
  j["rotations"] = rotations;
  const Provenance& p = file.provenance;
  j["provenance"] = {{"input_digest", p.input_digest}, {"seed", p.seed},
                     {"variant", p.variant},           {"gamma", p.gamma},
                     {"iterations", p.iterations},     {"final_cost", p.final_cost}};
  return j.dump(2) + "\n";
}

CalibrationFile parse_calibration(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("calibration file is not valid JSON: ") + e.what());
  }
  const Json& schema = field(j, "schema");
  if (!schema.is_string() || schema.get<std::string>() != kCalibrationSchema) {
    throw Error(ErrorCode::kSchema, "not a magcal calibration file");
  }
  const Json& version = field(j, "version");
  if (!version.is_number_integer() || version.get<int>() != kCalibrationVersion) {
    throw Error(ErrorCode::kSchema, fmt::format("unsupported calibration schema version {} (expected {})",
                                                version.dump(), kCalibrationVersion));
  }

  CalibrationFile file;
  CalibrationState& s = file.state;
  s.accel = sensor_from_json(field(j, "accelerometer"));
  s.mag = sensor_from_json(field(j, "magnetometer"));
  const Json& fields = field(j, "fields");
  s.fields.g_z = field(fields, "g_z").get<double>();
  s.fields.h_x = field(fields, "h_x").get<double>();
  s.fields.h_z = field(fields, "h_z").get<double>();
  const Json& rotations = field(j, "rotations");
  if (!rotations.is_array()) throw Error(ErrorCode::kSchema, "'rotations' must be an array");
  for (const auto& r : rotations) {
    const auto q = numbers(r, 4, "rotation");
    s.rotations.emplace_back(q[0], q[1], q[2], q[3]);
  }
  const Json& p = field(j, "provenance");
  file.provenance.input_digest = field(p, "input_digest").get<std::string>();
  file.provenance.seed = field(p, "seed").get<std::uint64_t>();
  file.provenance.variant = field(p, "variant").get<std::string>();
  file.provenance.gamma = field(p, "gamma").get<double>();
  file.provenance.iterations = field(p, "iterations").get<int>();
  file.provenance.final_cost = field(p, "final_cost").get<double>();
  return file;
}

void write_calibration(const std::filesystem::path& path, const CalibrationFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << serialize_calibration(file);
}

CalibrationFile read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open calibration file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_calibration(buffer.str());
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> chunk{};
  while (in.read(chunk.data(), chunk.size()) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), chunk.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex = "sha256:";
  for (unsigned int k = 0; k < len; ++k) hex += fmt::format("{:02x}", md[k]);
  return hex;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  out << "run,seed,variant,gamma,sets,train_delta_a,train_delta_m,test_delta_a,test_delta_m,iters,"
         "switch_iter,final_cost,status\n";
  for (const RunReport& r : reports) {
    const std::string test_a = r.has_test ? format_real(r.test.accel) : "";
    const std::string test_m = r.has_test ? format_real(r.test.mag) : "";
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.run, r.seed, r.variant,
                       format_real(r.gamma), r.sets, format_real(r.train.accel),
                       format_real(r.train.mag), test_a, test_m, r.iterations, r.switch_iteration,
                       format_real(r.final_cost), r.failed ? "failed" : "ok");
  }
}

void write_timing_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  out << "run,variant,gamma,sets,time_s\n";
  for (const RunReport& r : reports) {
    out << fmt::format("{},{},{},{},{}\n", r.run, r.variant, format_real(r.gamma), r.sets,
                       format_real(r.time_s));
  }
}

void write_summary_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  using Key = std::tuple<std::string, double, std::size_t>;
  std::vector<Key> order;
  std::map<Key, std::vector<const RunReport*>> groups;
  for (const RunReport& r : reports) {
    const Key key{r.variant, r.gamma, r.sets};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }

  out << "variant,gamma,sets,metric,runs,failures,min,q25,median,q75,max,frac_below_0.1\n";
  struct Metric {
    const char* name;
    double (*get)(const RunReport&);
    bool needs_test;
  };
  static constexpr std::array<Metric, 4> kMetrics = {{
      {"train_delta_a", [](const RunReport& r) { return r.train.accel; }, false},
      {"train_delta_m", [](const RunReport& r) { return r.train.mag; }, false},
      {"test_delta_a", [](const RunReport& r) { return r.test.accel; }, true},
      {"test_delta_m", [](const RunReport& r) { return r.test.mag; }, true},
  }};
  for (const Key& key : order) {
    const auto& group = groups.at(key);
    for (const Metric& m : kMetrics) {
      if (m.needs_test && !group.front()->has_test) continue;
      std::vector<double> values;
      int failures = 0;
      int below = 0;
      for (const RunReport* r : group) {
        if (r->failed) {
          ++failures;
          continue;
        }
        const double v = m.get(*r);
        values.push_back(v);
        if (v < 0.1) ++below;
      }
      const double frac = static_cast<double>(below) / static_cast<double>(group.size());
      out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", std::get<0>(key),
                         format_real(std::get<1>(key)), std::get<2>(key), m.name, group.size(),
                         failures, format_real(quantile(values, 0.0)),
                         format_real(quantile(values, 0.25)), format_real(quantile(values, 0.5)),
                         format_real(quantile(values, 0.75)), format_real(quantile(values, 1.0)),
                         format_real(frac));
    }
  }
}

}  // namespace magcal
