#include "apv/metrics.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "apv/errors.hpp"

namespace apv {

void MetricLog::log(long step, const std::string& key, double value) {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->key == key) {
      if (it->step > step) throw ValidationError("metric steps must be non-decreasing per key");
      break;
    }
  }
  rows_.push_back(Row{step, key, value});
}

std::vector<std::pair<long, double>> MetricLog::series(const std::string& key) const {
  std::vector<std::pair<long, double>> out;
  for (const Row& r : rows_)
    if (r.key == key) out.emplace_back(r.step, r.value);
  return out;
}

bool MetricLog::has_key(const std::string& key) const {
  for (const Row& r : rows_)
    if (r.key == key) return true;
  return false;
}

double MetricLog::last(const std::string& key, double fallback) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
    if (it->key == key) return it->value;
  return fallback;
}

void MetricLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metric log " + path.string());
  out << "step,key,value\n";
  char buf[64];
  for (const Row& r : rows_) {
    std::snprintf(buf, sizeof(buf), "%.12g", r.value);
    out << r.step << "," << r.key << "," << buf << "\n";
  }
}

MetricLog MetricLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metric log " + path.string());
  MetricLog log;
  std::string line;
  if (!std::getline(in, line) || line != "step,key,value")
    throw FormatError("metric log missing header: " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError("malformed metric row: " + line);
    Row r;
    r.step = std::stol(line.substr(0, c1));
    r.key = line.substr(c1 + 1, c2 - c1 - 1);
    r.value = std::stod(line.substr(c2 + 1));
    log.rows_.push_back(std::move(r));
  }
  return log;
}

}  // namespace apv
