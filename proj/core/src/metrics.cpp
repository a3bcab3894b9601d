#include "metastep/metrics.hpp"

#include <cstdio>

#include "metastep/errors.hpp"

namespace metastep {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* MetricsWriter::header() {
  return "outer_iter,train_loss,eval_loss,post_adapt_metric,hvp_count,cross_vp_count,"
         "first_order_grad_count,peak_tape_bytes,grad_diff_median";
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::binary) {
  if (!out_) throw IoError("cannot open metrics file '" + path + "'");
  out_ << header() << "\r\n";
}

void MetricsWriter::write(const MetricsRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_g17(*v) : std::string(); };
  out_ << r.outer_iter << ',' << opt(r.train_loss) << ',' << opt(r.eval_loss) << ','
       << opt(r.post_adapt_metric) << ',' << r.hvp_count << ',' << r.cross_vp_count << ','
       << r.first_order_grad_count << ',' << r.peak_tape_bytes << ',' << opt(r.grad_diff_median)
       << "\r\n";
  if (!out_) throw IoError("failed writing metrics row");
}

}  // namespace metastep
