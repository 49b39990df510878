#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace apv {

// Append-only (step, key, value) rows, serialized as comma-delimited text.
// Steps must be non-decreasing per key.
class MetricLog {
 public:
  struct Row {
    long step;
    std::string key;
    double value;
    bool operator==(const Row&) const = default;
  };

  void log(long step, const std::string& key, double value);
  const std::vector<Row>& rows() const { return rows_; }

  std::vector<std::pair<long, double>> series(const std::string& key) const;
  bool has_key(const std::string& key) const;
  double last(const std::string& key, double fallback) const;

  void save(const std::filesystem::path& path) const;
  static MetricLog load(const std::filesystem::path& path);

  bool operator==(const MetricLog&) const = default;

 private:
  std::vector<Row> rows_;
};

}  // namespace apv
