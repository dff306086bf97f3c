#include <ostream>

#include "ttc/benchmark.hpp"

namespace ttc {

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json doc = nlohmann::json::object();
  doc["strategy"] = report.strategy;
  doc["corruption"] = report.corruption;
  doc["severity"] = report.severity;
  doc["seed"] = report.seed;
  doc["n_test"] = report.n_test;
  doc["accuracy"] = report.accuracy;
  doc["per_batch_accuracy"] = report.per_batch_accuracy;
  doc["config"] = report.config;
  doc["samples_seen"] = report.samples_seen;
  doc["optimizer_steps"] = report.optimizer_steps;
  doc["params_digest"] = report.params_digest;
  doc["predictions"] = report.predictions;
  doc["labels"] = report.labels;
  return doc;
}

void write_per_batch_csv(std::ostream& out, const RunReport& report) {
  out << "batch,batch_size,running_accuracy\n";
  for (std::size_t b = 0; b < report.per_batch_accuracy.size(); ++b) {
    out << b << ',' << report.batch_sizes[b] << ',' << format_real(report.per_batch_accuracy[b])
        << '\n';
  }
}

}  // namespace ttc
