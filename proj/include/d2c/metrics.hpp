#pragma once

// Metrics CSV logs and SVG artifacts (learning curves, maze snapshots).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "d2c/envs.hpp"

namespace d2c::metrics {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kHeader = "iter,steps,curr_dist,success,mean_reward,clf_loss,critic_loss,actor_loss,alpha";

struct MetricsRow {
  std::int64_t iter = 0;
  std::int64_t steps = 0;
  std::optional<double> curr_dist;
  std::optional<double> success;
  std::optional<double> mean_reward;
  std::optional<double> clf_loss;
  std::optional<double> critic_loss;
  std::optional<double> actor_loss;
  std::optional<double> alpha;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip representation ("%.17g"); empty for missing values.
std::string format_value(const std::optional<double>& v);

std::string format_row(const MetricsRow& row);
MetricsRow parse_row(std::string_view line);

/// Append-only CSV writer; the header is written once for a new or empty file.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::filesystem::path path);
  void write(const MetricsRow& row);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

void write_metrics(std::ostream& os, std::span<const MetricsRow> rows, bool header = true);
std::vector<MetricsRow> read_metrics(std::istream& is);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Schema version of a header line, or 0 if unknown.
int schema_version_of(std::string_view header_line);

std::vector<std::string> column_names();

/// Column by name; missing values are returned as nullopt.
std::vector<std::optional<double>> column(std::span<const MetricsRow> rows, std::string_view name);

struct PlotSpec {
  std::vector<std::filesystem::path> inputs;  // one CSV per seed
  std::string column = "success";
  int smoothing = 1;
  std::filesystem::path output;
  std::string title;
};

struct SeriesPoint {
  double steps = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across seeds (0 for one seed)
};

/// Aligns seeds by row index over rows where every seed has the column, then
/// applies a trailing moving average of width `smoothing`.
std::vector<SeriesPoint> aggregate(std::span<const std::vector<MetricsRow>> runs, std::string_view column,
                                   int smoothing);

/// SVG line chart with a +-1 standard deviation band.
std::string render_plot_svg(std::span<const SeriesPoint> series, std::string_view column, std::string_view title);

/// Reads, validates (identical schema across inputs) and writes the plot.
/// Throws SchemaError listing the differing headers.
void plot(const PlotSpec& spec);

struct SnapshotInput {
  const env::MazeSpec* maze = nullptr;
  std::vector<env::Point> buffer;  // in insertion order (coloured by progress)
  std::vector<env::Point> proposed;
  std::vector<env::Point> desired;
  double pixels_per_unit = 16.0;
};

/// World (x, y) -> SVG pixel; y grows downwards.
env::Point world_to_pixel(const env::MazeSpec& maze, double pixels_per_unit, env::Point p);

std::string render_snapshot_svg(const SnapshotInput& input);
void render_snapshot(const SnapshotInput& input, const std::filesystem::path& path);

}  // namespace d2c::metrics
