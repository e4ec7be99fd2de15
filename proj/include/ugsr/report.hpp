#pragma once

// Run report files:
//   per_month.csv  month,tpr,tnr,f2,gmean,macc,labels_used,codebook_total
//   summary.csv    metric,value   (unweighted means over months)
//   config.txt     resolved RunConfig as key=value
// Absent metrics are written as empty cells. Values use 6 decimals.

#include <iosfwd>
#include <string>
#include <vector>

#include "ugsr/pipeline.hpp"

namespace ugsr {

inline constexpr const char* kPerMonthFile = "per_month.csv";
inline constexpr const char* kSummaryFile = "summary.csv";
inline constexpr const char* kConfigFile = "config.txt";

std::string format_metric(const Metric& m);

void write_per_month(std::ostream& out, const RunReport& report);
void write_summary(std::ostream& out, const RunReport& report);
void write_run_report(const std::string& dir, const RunReport& report);

// A CSV as header + string rows, cells kept verbatim.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_table(std::istream& in, const std::vector<std::string>& expected_header);
CsvTable load_table(const std::string& path, const std::vector<std::string>& expected_header);

const std::vector<std::string>& per_month_header();
const std::vector<std::string>& summary_header();

struct RunDirectory {
  std::string run_id;
  std::string path;
};

// Long format run_id,month,metric,value from every per_month.csv.
void write_merged_per_month(std::ostream& out, const std::vector<RunDirectory>& runs);
// run_id,metric,value from every summary.csv.
void write_merged_summary(std::ostream& out, const std::vector<RunDirectory>& runs);

}  // namespace ugsr
