#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "helpers.hpp"
#include "xmodal/report.hpp"

using Catch::Approx;
using xmodal::AggregateRecord;
using xmodal::ConfusionMatrix;
using xmodal::DiagnosticRecord;
using xmodal::DiagnosticResult;
using xmodal::SweepResult;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    path = "/tmp/xmodal_report_test_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return path + "/" + name; }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream s(text);
  std::string line;
  while (std::getline(s, line)) out.push_back(line);
  return out;
}

int count_occurrences(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

DiagnosticResult sample_result() {
  DiagnosticResult r;
  DiagnosticRecord a;
  a.datapoint_id = 0;
  a.diagnostic = "v4l";
  a.setup = "none";
  a.tau = -1.0;
  a.measure = "-";
  a.loss_bits = 1.0 / 3.0;
  a.target_region = -1;
  a.num_ablated = 0;
  DiagnosticRecord b;
  b.datapoint_id = 1;
  b.diagnostic = "l4v";
  b.setup = "phrase";
  b.tau = 0.5;
  b.measure = "iot";
  b.loss_bits = 2.7182818284590452;
  b.target_region = 3;
  b.num_ablated = 2;
  r.records = {a, b};
  return r;
}

std::vector<AggregateRecord> sample_aggregates() {
  std::vector<AggregateRecord> aggs(3);
  aggs[0].diagnostic = "l4v";
  aggs[0].setup = "none";
  aggs[0].tau = 0.5;
  aggs[0].measure = "iot";
  aggs[0].mean_bits = 1.25;
  aggs[0].std_bits = 0.5;
  aggs[0].count = 8;
  aggs[0].p_vs_none = 1.0;
  aggs[1].diagnostic = "v4l";
  aggs[1].setup = "none";
  aggs[1].tau = -1.0;
  aggs[1].measure = "-";
  aggs[1].mean_bits = 2.0;
  aggs[1].std_bits = 0.0;
  aggs[1].count = 8;
  aggs[1].p_vs_none = 1.0;
  aggs[2].diagnostic = "v4l";
  aggs[2].setup = "all";
  aggs[2].tau = -1.0;
  aggs[2].measure = "-";
  aggs[2].mean_bits = 6.5;
  aggs[2].std_bits = 1.5;
  aggs[2].count = 8;
  aggs[2].rel_change_pct = 225.0;
  aggs[2].t_vs_none = 9.5;
  aggs[2].p_vs_none = 1e-6;
  return aggs;
}

SweepResult sample_sweep() {
  SweepResult s;
  s.measure = xmodal::OverlapMeasure::IoT;
  s.taus = {0.1, 0.3, 0.5, 0.7, 0.9};
  s.none_mean = 1.5;
  s.all_mean = 6.0;
  for (double tau : s.taus) {
    s.object_means.push_back({tau, 6.0 - 4.0 * tau});
  }
  return s;
}

ConfusionMatrix sample_confusion() {
  ConfusionMatrix cm;
  cm.categories = {"animals", "scene", "vehicles"};
  cm.proportions = xmodal::Mat::Zero(3, 3);
  cm.proportions(0, 2) = 0.25;
  cm.proportions(2, 0) = 0.05;
  return cm;
}

}  // namespace

TEST_CASE("result csv carries every record with full precision") {
  TempDir dir;
  const auto r = sample_result();
  xmodal::write_result_csv(r, dir.file("results.csv"));
  const auto lines = lines_of(slurp(dir.file("results.csv")));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "datapoint_id,diagnostic,setup,tau,measure,loss_bits,target_region,num_ablated");
  CHECK(lines[1].substr(0, 16) == "0,v4l,none,-1,-,");
  CHECK(lines[2].substr(0, 18) == "1,l4v,phrase,0.5,i");

  // The loss field must round-trip to the exact double that was written.
  const auto fields = lines_of(lines[1]);  // reuse: split on commas instead
  std::istringstream row(lines[1]);
  std::string cell;
  for (int i = 0; i < 6; ++i) std::getline(row, cell, ',');
  CHECK(std::strtod(cell.c_str(), nullptr) == 1.0 / 3.0);
  CHECK(lines[1].back() == '0');  // target -1, ablated 0
}

TEST_CASE("csv and svg writers are deterministic byte for byte") {
  TempDir dir;
  const auto r = sample_result();
  const auto aggs = sample_aggregates();
  const auto sweep = sample_sweep();
  const auto cm = sample_confusion();

  xmodal::write_result_csv(r, dir.file("r1.csv"));
  xmodal::write_result_csv(r, dir.file("r2.csv"));
  CHECK(slurp(dir.file("r1.csv")) == slurp(dir.file("r2.csv")));

  xmodal::write_aggregate_csv(aggs, dir.file("a1.csv"));
  xmodal::write_aggregate_csv(aggs, dir.file("a2.csv"));
  CHECK(slurp(dir.file("a1.csv")) == slurp(dir.file("a2.csv")));

  xmodal::write_aggregate_svg(aggs, dir.file("a1.svg"));
  xmodal::write_aggregate_svg(aggs, dir.file("a2.svg"));
  CHECK(slurp(dir.file("a1.svg")) == slurp(dir.file("a2.svg")));

  xmodal::write_sweep_svg(sweep, dir.file("s1.svg"));
  xmodal::write_sweep_svg(sweep, dir.file("s2.svg"));
  CHECK(slurp(dir.file("s1.svg")) == slurp(dir.file("s2.svg")));

  xmodal::write_confusion_svg(cm, dir.file("c1.svg"));
  xmodal::write_confusion_svg(cm, dir.file("c2.svg"));
  CHECK(slurp(dir.file("c1.svg")) == slurp(dir.file("c2.svg")));
}

TEST_CASE("aggregate csv layout") {
  TempDir dir;
  xmodal::write_aggregate_csv(sample_aggregates(), dir.file("agg.csv"));
  const auto lines = lines_of(slurp(dir.file("agg.csv")));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] ==
        "diagnostic,setup,tau,measure,mean_bits,std_bits,count,rel_change_pct,"
        "t_vs_none,p_vs_none");
  CHECK(lines[1] == "l4v,none,0.5,iot,1.25,0.5,8,0,0,1");
  CHECK(lines[2] == "v4l,none,-1,-,2,0,8,0,0,1");
  CHECK(lines[3] == "v4l,all,-1,-,6.5,1.5,8,225,9.5,9.9999999999999995e-07");
}

TEST_CASE("sweep csv brackets the object rows with the references") {
  TempDir dir;
  xmodal::write_sweep_csv(sample_sweep(), dir.file("sweep.csv"));
  const auto lines = lines_of(slurp(dir.file("sweep.csv")));
  REQUIRE(lines.size() == 8);
  CHECK(lines[0] == "setup,tau,measure,mean_bits");
  CHECK(lines[1] == "none,-1,-,1.5");
  CHECK(lines[2] == "object,0.10000000000000001,iot,5.5999999999999996");
  CHECK(lines[6] == "object,0.90000000000000002,iot,2.3999999999999999");
  CHECK(lines[7] == "all,-1,-,6");
}

TEST_CASE("agreement csv pairs each k with its rate") {
  TempDir dir;
  xmodal::write_agreement_csv({1, 5, 10}, {0.5, 0.75, 1.0}, dir.file("k.csv"));
  const auto lines = lines_of(slurp(dir.file("k.csv")));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "k,agreement");
  CHECK(lines[1] == "1,0.5");
  CHECK(lines[3] == "10,1");
  CHECK_THROWS_AS(xmodal::write_agreement_csv({1, 2}, {0.5}, dir.file("bad.csv")),
                  std::invalid_argument);
}

TEST_CASE("seed summary csv layout") {
  TempDir dir;
  std::vector<xmodal::SeedSummaryRecord> rows(1);
  rows[0].diagnostic = "v4l";
  rows[0].setup = "all";
  rows[0].tau = -1.0;
  rows[0].measure = "-";
  rows[0].mean_bits = 4.5;
  rows[0].min_bits = 4.0;
  rows[0].max_bits = 5.0;
  rows[0].num_seeds = 3;
  xmodal::write_seed_summary_csv(rows, dir.file("seeds.csv"));
  const auto lines = lines_of(slurp(dir.file("seeds.csv")));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "diagnostic,setup,tau,measure,mean_bits,min_bits,max_bits,num_seeds");
  CHECK(lines[1] == "v4l,all,-1,-,4.5,4,5,3");
}

TEST_CASE("aggregate chart draws one bar per group and embeds the data") {
  TempDir dir;
  const auto aggs = sample_aggregates();
  xmodal::write_aggregate_svg(aggs, dir.file("agg.svg"));
  const auto body = slurp(dir.file("agg.svg"));

  CHECK(body.substr(0, 4) == "<svg");
  // One orange bar for the l4v group, two blue bars for the v4l groups.
  CHECK(count_occurrences(body, "fill=\"#d2813c\"") == 1);
  CHECK(count_occurrences(body, "fill=\"#4878a8\"") == 2);
  // Whiskers only where std is nonzero (two of the three groups).
  CHECK(count_occurrences(body, "stroke=\"#333333\"") >= 4);
  // The numbers can be recovered from the embedded comment.
  CHECK(body.find(xmodal::aggregate_csv_string(aggs)) != std::string::npos);
  CHECK(body.find("v4l,all,-1,-,6.5,1.5,8,225,9.5,") != std::string::npos);
  // Bars are labeled by diagnostic and setup, with tau where it applies.
  CHECK(body.find(">none @0.5<") != std::string::npos);
  CHECK(body.find(">all<") != std::string::npos);

  CHECK_THROWS_AS(xmodal::write_aggregate_svg({}, dir.file("empty.svg")),
                  std::invalid_argument);
}

TEST_CASE("sweep chart plots the threshold curve between the reference lines") {
  TempDir dir;
  const auto sweep = sample_sweep();
  xmodal::write_sweep_svg(sweep, dir.file("sweep.svg"));
  const auto body = slurp(dir.file("sweep.svg"));

  // One polyline through five points, plus a marker circle per threshold.
  REQUIRE(count_occurrences(body, "<polyline") == 1);
  const auto start = body.find("points=\"");
  const auto end = body.find('"', start + 8);
  const std::string pts = body.substr(start + 8, end - start - 8);
  CHECK(count_occurrences(pts, ",") == 5);
  CHECK(count_occurrences(body, "<circle") == 5);
  // Dashed none/all reference lines.
  CHECK(count_occurrences(body, "stroke-dasharray") == 2);
  CHECK(body.find(">none<") != std::string::npos);
  CHECK(body.find(">all<") != std::string::npos);
  // Embedded data block mirrors the sweep csv.
  CHECK(body.find("none,-1,-,1.5\n") != std::string::npos);
  CHECK(body.find("all,-1,-,6\n") != std::string::npos);
  CHECK(body.find("object,0.5,iot,4\n") != std::string::npos);
  // The x axis names the measure.
  CHECK(body.find("object ablation threshold (iot)") != std::string::npos);

  SweepResult empty;
  CHECK_THROWS_AS(xmodal::write_sweep_svg(empty, dir.file("e.svg")),
                  std::invalid_argument);
}

TEST_CASE("confusion chart draws a full grid with labels") {
  TempDir dir;
  const auto cm = sample_confusion();
  xmodal::write_confusion_svg(cm, dir.file("cm.svg"));
  const auto body = slurp(dir.file("cm.svg"));

  CHECK(count_occurrences(body, "stroke=\"#cccccc\"") == 9);  // 3x3 cells
  CHECK(count_occurrences(body, ">animals<") == 2);           // row and column label
  CHECK(body.find("silver argmax category") != std::string::npos);
  CHECK(body.find("animals,vehicles,0.25\n") != std::string::npos);
  // Cells with zero mass carry no number.
  CHECK(count_occurrences(body, ">0.25<") == 1);
  CHECK(count_occurrences(body, ">0<") == 0);

  ConfusionMatrix empty;
  CHECK_THROWS_AS(xmodal::write_confusion_svg(empty, dir.file("e.svg")),
                  std::invalid_argument);
}

TEST_CASE("confusion csv is one row per category pair") {
  TempDir dir;
  xmodal::write_confusion_csv(sample_confusion(), dir.file("cm.csv"));
  const auto lines = lines_of(slurp(dir.file("cm.csv")));
  REQUIRE(lines.size() == 10);
  CHECK(lines[0] == "gold_category,pred_category,proportion");
  CHECK(lines[1] == "animals,animals,0");
  CHECK(lines[3] == "animals,vehicles,0.25");
  CHECK(lines[7] == "vehicles,animals,0.050000000000000003");
}

TEST_CASE("emit_report dispatches on the requested format") {
  TempDir dir;
  const auto aggs = sample_aggregates();
  xmodal::emit_report(aggs, xmodal::ReportFormat::Csv, dir.file("rep.csv"));
  xmodal::emit_report(aggs, xmodal::ReportFormat::Svg, dir.file("rep.svg"));
  CHECK(slurp(dir.file("rep.csv")).substr(0, 10) == "diagnostic");
  CHECK(slurp(dir.file("rep.svg")).substr(0, 4) == "<svg");
}
