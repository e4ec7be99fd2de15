#include "ugsr/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "ugsr/errors.hpp"

namespace ugsr {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

const char* const kMetricNames[] = {"tpr", "tnr", "f2", "gmean", "macc"};

std::vector<Metric> metric_values(const MetricSet& m) { return {m.tpr, m.tnr, m.f2, m.gmean, m.macc}; }

void write_file(const std::filesystem::path& path, const auto& writer) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  writer(out);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string format_metric(const Metric& m) {
  if (!m) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *m);
  return buf;
}

const std::vector<std::string>& per_month_header() {
  static const std::vector<std::string> h{"month", "tpr",  "tnr",         "f2",
                                          "gmean", "macc", "labels_used", "codebook_total"};
  return h;
}

const std::vector<std::string>& summary_header() {
  static const std::vector<std::string> h{"metric", "value"};
  return h;
}

void write_per_month(std::ostream& out, const RunReport& report) {
  const auto& h = per_month_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  for (const auto& m : report.months) {
    out << m.month;
    for (const auto& v : metric_values(m.metrics)) out << ',' << format_metric(v);
    out << ',' << m.labels_used << ',' << m.codebook_total << '\n';
  }
}

void write_summary(std::ostream& out, const RunReport& report) {
  out << "metric,value\n";
  const auto values = metric_values(report.averages);
  for (std::size_t i = 0; i < values.size(); ++i) out << kMetricNames[i] << ',' << format_metric(values[i]) << '\n';
}

void write_run_report(const std::string& dir, const RunReport& report) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  write_file(root / kPerMonthFile, [&](std::ostream& o) { write_per_month(o, report); });
  write_file(root / kSummaryFile, [&](std::ostream& o) { write_summary(o, report); });
  write_file(root / kConfigFile, [&](std::ostream& o) { write_config(o, report.config); });
}

CsvTable read_table(std::istream& in, const std::vector<std::string>& expected_header) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty report file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split_csv(line);
  if (t.header != expected_header) throw ParseError("unexpected report header", 1);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto row = split_csv(line);
    if (row.size() != t.header.size())
      throw ParseError("expected " + std::to_string(t.header.size()) + " cells", lineno);
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable load_table(const std::string& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return read_table(in, expected_header);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_merged_per_month(std::ostream& out, const std::vector<RunDirectory>& runs) {
  out << "run_id,month,metric,value\n";
  for (const auto& run : runs) {
    const auto t = load_table((std::filesystem::path(run.path) / kPerMonthFile).string(), per_month_header());
    for (const auto& row : t.rows)
      for (std::size_t c = 1; c < row.size(); ++c)
        out << run.run_id << ',' << row[0] << ',' << t.header[c] << ',' << row[c] << '\n';
  }
}

void write_merged_summary(std::ostream& out, const std::vector<RunDirectory>& runs) {
  out << "run_id,metric,value\n";
  for (const auto& run : runs) {
    const auto t = load_table((std::filesystem::path(run.path) / kSummaryFile).string(), summary_header());
    for (const auto& row : t.rows) out << run.run_id << ',' << row[0] << ',' << row[1] << '\n';
  }
}

}  // namespace ugsr
