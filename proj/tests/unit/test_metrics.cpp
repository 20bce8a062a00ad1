#include <doctest.h>

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "d2c/metrics.hpp"
#include "fixtures.hpp"
#include "xml_check.hpp"

using namespace d2c;
using metrics::MetricsRow;

namespace {

MetricsRow sample_row(std::int64_t i) {
  MetricsRow r;
  r.iter = i;
  r.steps = 120 * (i + 1);
  r.curr_dist = 5.0 / (i + 1);
  if (i % 10 == 9) r.success = 0.5;
  r.mean_reward = 0.1 * i;
  r.critic_loss = 1.0 / 3.0;
  r.alpha = 0.3;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("header and column names are fixed") {
  CHECK(metrics::kHeader == "iter,steps,curr_dist,success,mean_reward,clf_loss,critic_loss,actor_loss,alpha");
  CHECK(metrics::column_names().size() == 9);
  CHECK(metrics::schema_version_of(metrics::kHeader) == 1);
  CHECK(metrics::schema_version_of("iter,steps") == 0);
}

TEST_CASE("missing values are empty, never zero") {
  MetricsRow r;
  r.iter = 3;
  r.steps = 40;
  CHECK(metrics::format_row(r) == "3,40,,,,,,,");
  CHECK(metrics::parse_row("3,40,,,,,,,") == r);
  r.success = 0.0;
  CHECK(metrics::format_row(r) == "3,40,,0,,,,,");
}

TEST_CASE("write then read one row; empty input reads as no rows") {
  std::stringstream ss;
  const std::vector<MetricsRow> rows{sample_row(0)};
  metrics::write_metrics(ss, rows);
  CHECK(metrics::read_metrics(ss) == rows);
  std::stringstream empty;
  CHECK(metrics::read_metrics(empty).empty());
}

TEST_CASE("10^4-row round trip keeps every double bit-exact") {
  Rng rng(1);
  std::vector<MetricsRow> rows;
  for (int i = 0; i < 10000; ++i) {
    MetricsRow r;
    r.iter = i;
    r.steps = static_cast<std::int64_t>(rng.next_u64() >> 20);
    r.curr_dist = rng.uniform(0, 40);
    if (rng.bernoulli(0.3)) r.success = rng.uniform();
    r.mean_reward = rng.normal() * 1e-300;
    r.clf_loss = std::ldexp(rng.uniform(), static_cast<int>(rng.index(600)) - 300);
    r.critic_loss = rng.normal();
    if (rng.bernoulli(0.5)) r.actor_loss = -rng.uniform(0, 100);
    r.alpha = 1.0 / 3.0;
    rows.push_back(r);
  }
  std::stringstream ss;
  metrics::write_metrics(ss, rows);
  const auto back = metrics::read_metrics(ss);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) REQUIRE(back[i] == rows[i]);
}

TEST_CASE("version mismatch names both versions") {
  std::stringstream ss("iter,steps,old\n1,2,3\n");
  CHECK_THROWS_WITH_AS(metrics::read_metrics(ss), doctest::Contains("version 0"), metrics::SchemaError);
  std::stringstream ss2("iter,steps,old\n1,2,3\n");
  CHECK_THROWS_WITH_AS(metrics::read_metrics(ss2), doctest::Contains("version 1"), metrics::SchemaError);
  CHECK_THROWS_AS(metrics::parse_row("1,2,3"), metrics::SchemaError);
  CHECK_THROWS_AS(metrics::parse_row("1,2,x,,,,,,"), metrics::SchemaError);
}

TEST_CASE("writer appends and writes the header once") {
  const auto dir = test::scratch_dir("writer");
  const auto path = dir / "m.csv";
  {
    metrics::MetricsWriter w(path);
    w.write(sample_row(0));
  }
  {
    metrics::MetricsWriter w(path);
    w.write(sample_row(1));
  }
  const auto text = slurp(path);
  CHECK(text.find(metrics::kHeader) == 0);
  CHECK(text.find(metrics::kHeader, 1) == std::string::npos);
  CHECK(metrics::read_metrics(path) == std::vector<MetricsRow>{sample_row(0), sample_row(1)});

  std::ofstream(dir / "other.csv") << "a,b\n";
  CHECK_THROWS_AS(metrics::MetricsWriter(dir / "other.csv"), metrics::SchemaError);
}

TEST_CASE("aggregate: mean, sample standard deviation and smoothing") {
  std::vector<std::vector<MetricsRow>> runs(2);
  for (int i = 0; i < 4; ++i) {
    MetricsRow a, b;
    a.iter = b.iter = i;
    a.steps = b.steps = 10 * i;
    a.success = 0.0;
    b.success = 1.0;
    if (i == 1) b.success.reset();
    runs[0].push_back(a);
    runs[1].push_back(b);
  }
  const auto s = metrics::aggregate(runs, "success", 1);
  REQUIRE(s.size() == 3);  // the row missing in one seed is skipped
  CHECK(s[0].steps == 0);
  CHECK(s[1].steps == 20);
  CHECK(s[0].mean == 0.5);
  CHECK(s[0].stddev == doctest::Approx(std::sqrt(0.5)));

  std::vector<std::vector<MetricsRow>> one(1);
  for (int i = 0; i < 4; ++i) {
    MetricsRow r;
    r.iter = i;
    r.steps = i;
    r.curr_dist = static_cast<double>(i);
    one[0].push_back(r);
  }
  const auto sm = metrics::aggregate(one, "curr_dist", 2);
  CHECK(sm[0].mean == 0.0);
  CHECK(sm[1].mean == 0.5);
  CHECK(sm[3].mean == 2.5);
  CHECK(sm[3].stddev == 0.0);
  CHECK_THROWS(metrics::aggregate(one, "curr_dist", 0));
  CHECK_THROWS_AS(metrics::aggregate(one, "bogus", 1), metrics::SchemaError);
}

TEST_CASE("plot: deterministic well-formed SVG without touching inputs") {
  const auto dir = test::scratch_dir("plot");
  std::vector<MetricsRow> rows;
  for (int i = 0; i < 30; ++i) rows.push_back(sample_row(i));
  for (const char* name : {"a.csv", "b.csv"}) {
    std::ofstream os(dir / name);
    metrics::write_metrics(os, rows);
  }
  const auto before = slurp(dir / "a.csv");
  metrics::PlotSpec spec;
  spec.inputs = {dir / "a.csv", dir / "b.csv"};
  spec.column = "curr_dist";
  spec.smoothing = 3;
  spec.output = dir / "p1.svg";
  spec.title = "distance <& test>";
  metrics::plot(spec);
  spec.output = dir / "p2.svg";
  metrics::plot(spec);
  const auto svg = slurp(dir / "p1.svg");
  CHECK(svg == slurp(dir / "p2.svg"));
  CHECK(test::xml_error(svg).empty());
  CHECK(slurp(dir / "a.csv") == before);
}

TEST_CASE("plot: mismatched schemas are reported per file") {
  const auto dir = test::scratch_dir("plot_bad");
  {
    std::ofstream os(dir / "good.csv");
    metrics::write_metrics(os, std::vector<MetricsRow>{sample_row(0)});
  }
  std::ofstream(dir / "bad.csv") << "iter,steps,curr_dist\n0,1,2\n";
  metrics::PlotSpec spec;
  spec.inputs = {dir / "good.csv", dir / "bad.csv"};
  spec.output = dir / "x.svg";
  CHECK_THROWS_WITH_AS(metrics::plot(spec), doctest::Contains("bad.csv: 'iter,steps,curr_dist'  <-- differs"),
                       metrics::SchemaError);
  CHECK_FALSE(std::filesystem::exists(dir / "x.svg"));
}

TEST_CASE("snapshot: affine world-to-pixel map hits the corners") {
  const auto maze = env::preset("complex-maze");
  const double ppu = 16.0;
  const double hw = maze.half_width(), hh = maze.half_height();
  const auto tl = metrics::world_to_pixel(maze, ppu, {-hw, hh});
  const auto br = metrics::world_to_pixel(maze, ppu, {hw, -hh});
  const auto c = metrics::world_to_pixel(maze, ppu, {0, 0});
  CHECK(std::abs(tl.x - 0) < 0.5);
  CHECK(std::abs(tl.y - 0) < 0.5);
  CHECK(std::abs(br.x - maze.width() * ppu) < 0.5);
  CHECK(std::abs(br.y - maze.height() * ppu) < 0.5);
  CHECK(std::abs(c.x - hw * ppu) < 0.5);
  CHECK(std::abs(c.y - hh * ppu) < 0.5);
  // Top-left wall cell maps to the top-left pixel block.
  int col = -1, row = -1;
  maze.cell_of({-hw + 0.1, hh - 0.1}, col, row);
  CHECK(col == 0);
  CHECK(row == 0);
}

TEST_CASE("snapshot: walls, buffer, desired and proposed markers") {
  const auto maze = env::preset("test-umaze");
  metrics::SnapshotInput in;
  in.maze = &maze;
  in.desired = maze.desired_outcomes;

  const auto empty = metrics::render_snapshot_svg(in);
  CHECK(test::xml_error(empty).empty());
  int walls = 0;
  for (auto w : maze.walls) walls += w;
  const std::regex rect("<rect x=");
  const auto rects = std::distance(std::sregex_iterator(empty.begin(), empty.end(), rect), std::sregex_iterator());
  CHECK(rects == walls + 1);  // walls plus the background
  CHECK(empty.find("<circle") == std::string::npos);

  in.buffer = {{-4.5, 4.5}, {-4.5, 0}, {-4.5, -4.5}};
  in.proposed = {maze.desired_outcomes[0]};
  const auto svg = metrics::render_snapshot_svg(in);
  CHECK(test::xml_error(svg).empty());
  const auto px = metrics::world_to_pixel(maze, in.pixels_per_unit, maze.desired_outcomes[0]);
  char buf[128];
  std::snprintf(buf, sizeof buf, "class=\"proposed\" cx=\"%.2f\" cy=\"%.2f\"", px.x, px.y);
  CHECK(svg.find(buf) != std::string::npos);
  std::snprintf(buf, sizeof buf, "class=\"desired\" data-x=\"%.2f\" data-y=\"%.2f\"", px.x, px.y);
  CHECK(svg.find(buf) != std::string::npos);
  CHECK(svg.find("#0040ff") != std::string::npos);  // earliest buffer point
  CHECK(svg.find("#ff4000") != std::string::npos);  // latest buffer point
  CHECK(svg == metrics::render_snapshot_svg(in));

  CHECK_THROWS(metrics::render_snapshot(in, "/nonexistent-dir/x.svg"));
}

TEST_CASE("xml checker rejects broken documents") {
  CHECK_FALSE(test::xml_error("<a><b></a>").empty());
  CHECK_FALSE(test::xml_error("<a x=1/>").empty());
  CHECK_FALSE(test::xml_error("<a>&</a>").empty());
  CHECK(test::xml_error("<a x=\"1\"><b/>t&amp;</a>").empty());
}
