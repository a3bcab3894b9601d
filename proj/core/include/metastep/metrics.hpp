#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

namespace metastep {

/// One row of metrics.csv. Wall-clock time is deliberately not part of the
/// record: the CSV is byte-reproducible for a fixed config and seed, and
/// timings go to summary.json instead.
struct MetricsRecord {
  int outer_iter = 0;
  std::optional<double> train_loss;
  std::optional<double> eval_loss;
  std::optional<double> post_adapt_metric;
  int64_t hvp_count = 0;
  int64_t cross_vp_count = 0;
  int64_t first_order_grad_count = 0;
  uint64_t peak_tape_bytes = 0;
  std::optional<double> grad_diff_median;
};

/// Streams RFC-4180-style CSV (header row, CRLF line ends). Numeric fields
/// use shortest-round-trip formatting; absent optionals are empty fields.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const MetricsRecord& record);
  static const char* header();

 private:
  std::ofstream out_;
};

std::string format_g17(double v);

}  // namespace metastep
