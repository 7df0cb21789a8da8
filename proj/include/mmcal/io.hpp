#ifndef MMCAL_IO_HPP
#define MMCAL_IO_HPP

#include <map>
#include <string>
#include <vector>

namespace mmcal::io {

// One parsed tabular file: first non-comment line is the header, fields are
// tab-separated, '#' starts a comment line.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const;           // -1 if absent
  int require_col(const std::string& name) const;   // throws if absent
  const std::string& cell(size_t row, int col) const;
};

Table read_tsv(const std::string& path);
void write_tsv(const std::string& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<std::string>>& rows);
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<std::string>>& rows);

// key=value file, '#' comments, whitespace trimmed.
std::map<std::string, std::string> read_kv(const std::string& path);
void write_kv(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& entries);

double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

std::string format_double(double v);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace mmcal::io

#endif  // MMCAL_IO_HPP
