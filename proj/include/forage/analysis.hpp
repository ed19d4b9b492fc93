#pragma once

// Foraging maps, conditional maps, sequential foraging profiles and their
// PNG / CSV / JSON exports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <png.h>

#include "forage/error.hpp"
#include "forage/fitness.hpp"
#include "forage/foragingtask.hpp"
#include "forage/morphogenome.hpp"
#include "forage/physsim.hpp"

namespace forage {

struct MapCell {
  int row = 0, col = 0;
  double x = 0.0, y = 0.0;  // offset of the cell center from the map center
  double speed = 0.0;       // mean approach speed, positive toward the target
  bool reached = false;
  bool excluded = false;
  bool unstable = false;  // excluded because the simulation blew up

  bool operator==(const MapCell&) const = default;
};

struct ForagingMap {
  int resolution = 11;
  double extent = kDomainExtent;
  double timer = 30.0;
  std::vector<MapCell> cells;  // row-major, row 0 at +y
  std::optional<Vec2> conditional_on;
  Vec2 center;  // world position the offsets are measured from
  std::uint64_t simulated_steps = 0;

  double spacing() const { return extent / static_cast<double>(resolution - 1); }
  const MapCell& at(int row, int col) const { return cells[static_cast<std::size_t>(row * resolution + col)]; }
  std::size_t active() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const MapCell& c) { return !c.excluded; }));
  }
  double max_abs_speed() const {
    double m = 0.0;
    for (const auto& c : cells)
      if (!c.excluded) m = std::max(m, std::abs(c.speed));
    return m;
  }
};

/// Empty lattice: centers every extent/(resolution-1) meters, cells closer
/// than the exclusion radius to the center marked excluded.
inline ForagingMap map_lattice(int resolution, double extent = kDomainExtent) {
  if (resolution < 2) throw Error(ErrorCode::InvalidConfig, "map resolution must be at least 2");
  ForagingMap m;
  m.resolution = resolution;
  m.extent = extent;
  const double h = m.spacing();
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) {
      MapCell cell;
      cell.row = r;
      cell.col = c;
      const double mid = (resolution - 1) / 2.0;
      cell.x = (c - mid) * h;
      cell.y = (mid - r) * h;
      // lattice points exactly on the circle stay active
      cell.excluded = std::hypot(cell.x, cell.y) < kExclusionRadius - 1e-9;
      m.cells.push_back(cell);
    }
  return m;
}

/// Net approach speed over a leg: (first distance - last distance) / time.
inline double approach_speed(double d_first, double d_last, std::size_t steps, double dt) {
  if (steps == 0) return 0.0;
  return (d_first - d_last) / (static_cast<double>(steps) * dt);
}

namespace detail {

template <class Fn>
void for_each_parallel(std::size_t n, unsigned threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

struct MapOptions {
  int resolution = 11;
  double timer = 30.0;
  unsigned threads = 1;
  PhysicsConfig physics;
};

/// One trial per active cell with the target at the cell center; trials stop
/// at absorption.
inline ForagingMap foraging_map(const Organism& org, const MapOptions& opt, const EpisodeRunner& runner) {
  ForagingMap m = map_lattice(opt.resolution);
  m.timer = opt.timer;
  std::vector<std::uint64_t> steps(m.cells.size(), 0);
  detail::for_each_parallel(m.cells.size(), opt.threads, [&](std::size_t i) {
    MapCell& cell = m.cells[i];
    if (cell.excluded) return;
    EpisodeSpec spec;
    spec.first_target = {cell.x, cell.y};
    spec.timer = opt.timer;
    spec.stop_on_final_absorption = true;
    EpisodeRecord rec = runner(org, spec);
    steps[i] = rec.simulated_steps;
    if (rec.unstable || rec.rows.empty()) {
      cell.excluded = cell.unstable = true;
      return;
    }
    cell.speed = approach_speed(rec.rows.front().sensor_distance, rec.rows.back().sensor_distance, rec.rows.size() - 1,
                                opt.physics.dt);
    cell.reached = rec.reached() > 0;
  });
  for (auto s : steps) m.simulated_steps += s;
  return m;
}

inline ForagingMap foraging_map(const Organism& org, const MapOptions& opt = {}) {
  return foraging_map(org, opt, physics_runner(opt.physics));
}

/// Map of second targets given a fixed first one. The lattice is centered on
/// the position where the first target was absorbed; the controller carries
/// its state across the two legs.
inline ForagingMap conditional_map(const Organism& org, const Vec2& first_target, const MapOptions& opt,
                                   const EpisodeRunner& runner) {
  EpisodeSpec first;
  first.first_target = first_target;
  first.timer = opt.timer;
  first.stop_on_final_absorption = true;
  const EpisodeRecord lead = runner(org, first);
  if (lead.unstable || lead.absorptions.empty())
    throw Error(ErrorCode::FirstTargetMissed, "organism does not reach the first target");

  ForagingMap m = map_lattice(opt.resolution);
  m.timer = opt.timer;
  m.conditional_on = first_target;
  m.center = lead.absorptions.front().position.xy();
  m.simulated_steps = lead.simulated_steps;
  std::vector<std::uint64_t> steps(m.cells.size(), 0);
  detail::for_each_parallel(m.cells.size(), opt.threads, [&](std::size_t i) {
    MapCell& cell = m.cells[i];
    if (cell.excluded) return;
    EpisodeSpec spec = first;
    spec.next_offsets = {{cell.x, cell.y}};
    EpisodeRecord rec = runner(org, spec);
    steps[i] = rec.simulated_steps;
    if (rec.unstable || rec.absorptions.empty()) {
      // the first leg is replayed identically, so this only happens on blow-up
      cell.excluded = cell.unstable = true;
      return;
    }
    std::size_t legs = 0;
    double last = std::hypot(cell.x, cell.y);
    for (const auto& row : rec.rows)
      if (row.target_index == 1) {
        ++legs;
        last = row.sensor_distance;
      }
    cell.speed = approach_speed(std::hypot(cell.x, cell.y), last, legs, opt.physics.dt);
    cell.reached = rec.reached() > 1;
  });
  for (auto s : steps) m.simulated_steps += s;
  return m;
}

inline ForagingMap conditional_map(const Organism& org, const Vec2& first_target, const MapOptions& opt = {}) {
  return conditional_map(org, first_target, opt, physics_runner(opt.physics));
}

struct ForagingProfile {
  int trials = 0;
  int sequence_length = 10;
  std::vector<double> success_rate;        // index k-1: fraction reaching at least k targets
  std::vector<double> consecutive_ratios;  // rate(k+1) / rate(k); 0 when rate(k) is 0
  std::vector<int> deepest;                // per trial
};

/// Success rates over `trials` sequences of K uniformly placed targets.
inline ForagingProfile profile_from_depths(const std::vector<int>& deepest, int K) {
  ForagingProfile p;
  p.trials = static_cast<int>(deepest.size());
  p.sequence_length = K;
  p.deepest = deepest;
  for (int k = 1; k <= K; ++k) {
    const auto n = std::count_if(deepest.begin(), deepest.end(), [k](int d) { return d >= k; });
    p.success_rate.push_back(p.trials ? static_cast<double>(n) / p.trials : 0.0);
  }
  for (int k = 1; k < K; ++k) {
    const double a = p.success_rate[static_cast<std::size_t>(k - 1)];
    p.consecutive_ratios.push_back(a > 0.0 ? p.success_rate[static_cast<std::size_t>(k)] / a : 0.0);
  }
  return p;
}

struct ProfileOptions {
  int trials = 100;
  int sequence_length = 10;
  double timer = 60.0;
  std::uint64_t rng_seed = 1;
  unsigned threads = 1;
  PhysicsConfig physics;
};

inline ForagingProfile foraging_profile(const Organism& org, const ProfileOptions& opt, const EpisodeRunner& runner) {
  if (opt.trials < 1) throw Error(ErrorCode::InvalidConfig, "profile needs at least one trial");
  if (opt.sequence_length < 1) throw Error(ErrorCode::InvalidConfig, "profile needs at least one target");
  std::vector<int> deepest(static_cast<std::size_t>(opt.trials), 0);
  detail::for_each_parallel(deepest.size(), opt.threads, [&](std::size_t t) {
    Rng rng(derive_seed({opt.rng_seed, t, 0x70726f66ULL}));
    EpisodeSpec spec;
    spec.first_target = uniform_placement(rng);
    for (int k = 1; k < opt.sequence_length; ++k) spec.next_offsets.push_back(uniform_placement(rng));
    spec.timer = opt.timer;
    spec.stop_on_final_absorption = true;
    EpisodeRecord rec = runner(org, spec);
    deepest[t] = rec.unstable ? 0 : static_cast<int>(rec.reached());
  });
  return profile_from_depths(deepest, opt.sequence_length);
}

inline ForagingProfile foraging_profile(const Organism& org, const ProfileOptions& opt = {}) {
  return foraging_profile(org, opt, physics_runner(opt.physics));
}

inline ordered_json profile_to_json(const ForagingProfile& p) {
  ordered_json j;
  j["trials"] = p.trials;
  j["sequence_length"] = p.sequence_length;
  j["success_rate"] = p.success_rate;
  j["consecutive_ratios"] = p.consecutive_ratios;
  j["deepest"] = p.deepest;
  return j;
}

// ---------------------------------------------------------------------------
// Rendering and files.

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kZeroColor{30, 30, 30};
inline constexpr Rgb kTowardColor{255, 190, 190};
inline constexpr Rgb kAwayColor{190, 190, 255};
inline constexpr Rgb kExcludedColor{0, 0, 0};

/// Red toward, blue away, lightness growing with |speed| / scale.
inline Rgb speed_color(double speed, double scale) {
  const double t = scale > 0.0 ? std::clamp(std::abs(speed) / scale, 0.0, 1.0) : 0.0;
  const Rgb end = speed >= 0.0 ? kTowardColor : kAwayColor;
  auto mix = [t](std::uint8_t a, std::uint8_t b) {
    return static_cast<std::uint8_t>(std::lround(a + (static_cast<double>(b) - a) * t));
  };
  return {mix(kZeroColor.r, end.r), mix(kZeroColor.g, end.g), mix(kZeroColor.b, end.b)};
}

/// Cell colors in row-major order, normalized to the map's own max |speed|.
inline std::vector<Rgb> map_colors(const ForagingMap& m) {
  const double scale = m.max_abs_speed();
  std::vector<Rgb> out;
  for (const auto& c : m.cells) out.push_back(c.excluded ? kExcludedColor : speed_color(c.speed, scale));
  return out;
}

inline int pixels_per_cell(int resolution) { return std::max(1, 440 / resolution); }

inline void write_png(const std::filesystem::path& path, const ForagingMap& m) {
  const int px = pixels_per_cell(m.resolution);
  const int side = px * m.resolution;
  const std::vector<Rgb> colors = map_colors(m);

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw Error(ErrorCode::Io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(ErrorCode::Io, "libpng failed on " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(side), static_cast<png_uint_32>(side), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> line(static_cast<std::size_t>(side) * 3);
  for (int y = 0; y < side; ++y) {
    const int row = y / px;
    for (int x = 0; x < side; ++x) {
      const Rgb& c = colors[static_cast<std::size_t>(row * m.resolution + x / px)];
      line[static_cast<std::size_t>(x) * 3 + 0] = c.r;
      line[static_cast<std::size_t>(x) * 3 + 1] = c.g;
      line[static_cast<std::size_t>(x) * 3 + 2] = c.b;
    }
    png_write_row(png, line.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Decoded RGB pixels, row-major. Used by tests and the map endpoint.
inline std::vector<Rgb> read_png(const std::filesystem::path& path, int& width, int& height) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw Error(ErrorCode::Io, "cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(ErrorCode::Parse, "not a readable PNG: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(ErrorCode::Parse, "expected 8-bit RGB: " + path.string());
  }
  std::vector<Rgb> pixels;
  std::vector<png_byte> line(static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, line.data(), nullptr);
    for (int x = 0; x < width; ++x)
      pixels.push_back({line[static_cast<std::size_t>(x) * 3], line[static_cast<std::size_t>(x) * 3 + 1],
                        line[static_cast<std::size_t>(x) * 3 + 2]});
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return pixels;
}

inline void write_map_csv(std::ostream& os, const ForagingMap& m) {
  os << "row,col,x,y,speed,reached,excluded\n";
  char buf[256];
  for (const auto& c : m.cells) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%d,%d\n", c.row, c.col, c.x, c.y, c.speed, c.reached ? 1 : 0,
                  c.excluded ? 1 : 0);
    os << buf;
  }
}

/// Cells from a map CSV; the lattice size is inferred from the row count.
inline ForagingMap read_map_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "row,col,x,y,speed,reached,excluded")
    throw Error(ErrorCode::Parse, "unexpected map CSV header");
  ForagingMap m;
  m.cells.clear();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MapCell c;
    int reached = 0, excluded = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%d,%d", &c.row, &c.col, &c.x, &c.y, &c.speed, &reached, &excluded) != 7)
      throw Error(ErrorCode::Parse, "bad map CSV line: " + line);
    c.reached = reached != 0;
    c.excluded = excluded != 0;
    m.cells.push_back(c);
  }
  const auto n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m.cells.size()))));
  if (n < 2 || static_cast<std::size_t>(n * n) != m.cells.size()) throw Error(ErrorCode::Parse, "map CSV is not square");
  m.resolution = n;
  m.extent = m.cells.back().x - m.cells.front().x;
  return m;
}

inline std::string map_basename(const std::string& organism, const ForagingMap& m) {
  std::string name = organism + "_map_" + std::to_string(m.resolution);
  if (m.conditional_on) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "_cond_%g_%g", m.conditional_on->x, m.conditional_on->y);
    name += buf;
  }
  return name;
}

inline ordered_json map_metadata(const std::string& organism, const ForagingMap& m) {
  ordered_json j;
  j["organism"] = organism;
  j["resolution"] = m.resolution;
  j["extent"] = m.extent;
  j["spacing"] = m.spacing();
  j["timer"] = m.timer;
  j["active_cells"] = m.active();
  j["normalization"] = "per_map";
  j["max_abs_speed"] = m.max_abs_speed();
  j["conditional_on"] = m.conditional_on ? ordered_json::array({m.conditional_on->x, m.conditional_on->y}) : ordered_json();
  j["center"] = {m.center.x, m.center.y};
  j["simulated_steps"] = m.simulated_steps;
  auto unstable = ordered_json::array();
  for (const auto& c : m.cells)
    if (c.unstable) unstable.push_back({c.row, c.col});
  j["unstable_cells"] = unstable;
  return j;
}

struct MapFiles {
  std::filesystem::path png, csv, json;
};

/// Writes `<organism>_map_<res>[_cond_<x>_<y>]` .png, .csv and .json into `dir`.
inline MapFiles render_map(const ForagingMap& m, const std::string& organism, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string base = map_basename(organism, m);
  MapFiles f{dir / (base + ".png"), dir / (base + ".csv"), dir / (base + ".json")};
  write_png(f.png, m);
  std::ofstream csv(f.csv);
  write_map_csv(csv, m);
  std::ofstream meta(f.json);
  meta << map_metadata(organism, m).dump(2) << "\n";
  if (!csv || !meta) throw Error(ErrorCode::Io, "cannot write map files in " + dir.string());
  return f;
}

}  // namespace forage
