#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hallu/metrics.hpp"
#include "hallu/table.hpp"

namespace hallu {

struct TemperatureMetrics {
  double temperature = 0.0;
  double fvs_rate = 0.0;
  double ivs_rate = 0.0;
  double precision = 0.0;  // FVS prompts
  double recall = 0.0;
};

struct LmRunRecord {
  std::string run_id;
  std::string model;
  std::size_t params = 0;  // non-embedding
  int epochs = 0;
  double level = 0.0;
  double flops = 0.0;
  double loss = 0.0;  // final training-set loss, nats per token
  std::vector<TemperatureMetrics> temperatures;
};

struct DetectorRunRecord {
  std::string run_id;
  std::string lm_run_id;
  std::string model;
  std::size_t params = 0;
  int epochs = 0;
  double level = 0.0;
  std::string task;
  std::string type;
  int layer = 0;
  bool top_layer = true;
  std::string eval_set;  // "fvs_test" or "pvs"
  double lm_rate = 0.0;  // LM hallucination rate on the detector data
  double prevalence = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc_pr;
  std::vector<PRCurvePoint> curve;
};

struct ReportInput {
  std::vector<LmRunRecord> lms;
  std::vector<DetectorRunRecord> detectors;
  // Temperature used for the rate-vs-FLOPs figure.
  double rate_temperature = 1.0;
};

// Figure name -> table. Throws Error naming every run whose provenance
// (model, params, epochs, level, flops) is incomplete.
std::map<std::string, Table> aggregate_scaling(const ReportInput& in);

struct PlotSpec {
  std::string title;
  std::string x;
  std::vector<std::string> ys;
  // Rows sharing these columns form one line, ordered by x.
  std::vector<std::string> series;
  bool log_x = false;
  std::string size_by;    // numeric column mapped to marker size
  std::string marker_by;  // column mapped to marker shape
};

PlotSpec plot_spec(std::string_view figure);

// Static SVG with the table embedded verbatim as CSV in <metadata>.
std::string render_svg(const Table& table, const PlotSpec& spec);
Table extract_svg_table(std::string_view svg);

// Writes <name>.csv and <name>.svg for every figure into `dir`.
void write_report(const std::filesystem::path& dir, const ReportInput& in);

}  // namespace hallu
