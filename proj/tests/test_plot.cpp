#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "probid/plot.hpp"

using namespace probid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "probid_plot_test";
  fs::create_directories(dir);
  return dir / name;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Plot, EmptyCsvIsErrorAndWritesNothing) {
  const fs::path csv = scratch("empty.csv"), out = scratch("empty.svg");
  fs::remove(out);
  write(csv, "");
  EXPECT_THROW(plot_scatter_files(csv.string(), {}, {}, out.string()), ConfigError);
  EXPECT_FALSE(fs::exists(out));
  write(csv, "target,value,ar,er,score\n");
  EXPECT_THROW(plot_sweep_files({csv.string()}, {"a"}, "target", "score", out.string()), ConfigError);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Plot, MissingInputNamed) {
  try {
    plot_sweep_files({"/nonexistent/sweep.csv"}, {}, "target", "score", scratch("x.svg").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/sweep.csv"), std::string::npos);
  }
}

TEST(Plot, ScatterMarksFrontierDistinctly) {
  const fs::path csv = scratch("pareto.csv"), ep = scratch("episodes.csv"), out = scratch("scatter.svg");
  write(csv,
        "r,c,r_norm,c_norm,on_frontier,s_eff,s_com,s_len,q,prob\n"
        "1,1,0,0,1,1,1,1,1,0.4\n3,4,1,1,1,1,1,1,1,0.4\n2,4,0.5,1,0,0.1,1,1,0.1,0.2\n");
  write(ep, "episode,value,cost,realized_cpa,ar,exceeded,score\n0,2,3,1.5,0.5,0,2\nmean,2,3,,0.5,0,2\n");
  plot_scatter_files(csv.string(), {ep.string()}, {"model"}, out.string());
  const std::string svg = slurp(out);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(count(svg, "<polygon"), 3u);  // two frontier diamonds plus the legend marker
  EXPECT_NE(svg.find("Pareto frontier"), std::string::npos);
  EXPECT_NE(svg.find(">model<"), std::string::npos);
  EXPECT_NE(svg.find("#d62728"), std::string::npos);
}

TEST(Plot, SweepHasOneSeriesPerCsv) {
  const fs::path a = scratch("a.csv"), b = scratch("b.csv"), out = scratch("sweep.svg");
  write(a, "target,value,ar,er,score\n6,10,0.9,0.1,9\n8,12,1.0,0.3,11\n10,13,1.1,0.5,11.5\n");
  write(b, "target,value,ar,er,score\n6,9,0.8,0.1,8\n8,11,0.9,0.2,10\n10,12,1.0,0.4,11\n");
  plot_sweep_files({a.string(), b.string()}, {"ckpt-a", "ckpt-b"}, "target", "score", out.string());
  const std::string svg = slurp(out);
  EXPECT_EQ(count(svg, "<polyline"), 2u);
  EXPECT_NE(svg.find("ckpt-a"), std::string::npos);
  EXPECT_NE(svg.find("ckpt-b"), std::string::npos);
}

TEST(Plot, CsvNumbersAndAxes) {
  const fs::path p = scratch("n.csv");
  write(p, "x,y\n1,\n2,3\n");
  const CsvTable t = read_csv(p.string());
  const auto y = t.numbers("y");
  EXPECT_TRUE(std::isnan(y[0]));
  EXPECT_EQ(y[1], 3.0);
  EXPECT_THROW(t.column("z"), ConfigError);
  const auto axis = detail::nice_axis(0.3, 9.7);
  EXPECT_LE(axis.lo, 0.3);
  EXPECT_GE(axis.hi, 9.7);
  EXPECT_GE(axis.ticks.size(), 3u);
}
