#include "earlycls/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "earlycls/rng.hpp"

namespace earlycls {

namespace {

constexpr uint64_t kGenSalt = 0x67656e;    // "gen"
constexpr uint64_t kSplitSalt = 0x73706c74; // "splt"

void append_double(std::string& out, double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  out.append(buf, ptr);
}

double profile_value(const PhenologyClassSpec& spec, int band, double day, double peak_shift,
                     double amp_scale) {
  const double peak = spec.peak_day + peak_shift;
  double bump = 0.0;
  const bool harvested =
      spec.harvest_drop_day >= 0.0 && day > spec.harvest_drop_day + peak_shift;
  if (!harvested) {
    const double d = day - peak;
    bump = std::exp(-d * d / (2.0 * spec.season_width * spec.season_width));
  }
  return spec.base[static_cast<size_t>(band)] +
         amp_scale * spec.amplitude[static_cast<size_t>(band)] * bump;
}

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(std::string_view field, const std::string& path, int line) {
  double x = 0.0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, x);
  if (ec != std::errc() || ptr != end) {
    parse_fail(path, line, "bad number '" + std::string(field) + "'");
  }
  return x;
}

long parse_long(std::string_view field, const std::string& path, int line) {
  long x = 0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, x);
  if (ec != std::errc() || ptr != end) {
    parse_fail(path, line, "bad integer '" + std::string(field) + "'");
  }
  return x;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<PhenologyClassSpec> default_crop_catalogue() {
  constexpr int kBands = 13;
  // shared bare-soil baseline and a vegetation response curve over the bands
  const double soil[kBands] = {0.12, 0.13, 0.15, 0.18, 0.20, 0.22, 0.23,
                               0.23, 0.24, 0.24, 0.10, 0.20, 0.16};
  const double veg[kBands] = {0.04, 0.05, 0.08, 0.10, 0.28, 0.42, 0.48,
                              0.50, 0.38, 0.32, 0.08, 0.25, 0.15};

  struct Entry {
    const char* name;
    double peak, width, harvest, scale;
  };
  const Entry entries[] = {
      {"meadow", 120.0, 55.0, -1.0, 0.75},
      {"rapeseed", 135.0, 24.0, 195.0, 1.00},
      {"winter_barley", 150.0, 22.0, 185.0, 0.85},
      {"winter_triticale", 162.0, 24.0, 205.0, 0.80},
      {"winter_wheat", 175.0, 24.0, 215.0, 0.90},
      {"summer_barley", 190.0, 24.0, 230.0, 0.85},
      {"summer_oat", 205.0, 26.0, 245.0, 0.80},
      {"corn", 225.0, 30.0, 285.0, 1.00},
      {"fallow", 250.0, 70.0, -1.0, 0.25},
  };

  std::vector<PhenologyClassSpec> specs;
  int class_index = 0;
  for (const Entry& e : entries) {
    PhenologyClassSpec s;
    s.name = e.name;
    s.peak_day = e.peak;
    s.season_width = e.width;
    s.harvest_drop_day = e.harvest;
    s.base.assign(soil, soil + kBands);
    s.amplitude.resize(kBands);
    for (int b = 0; b < kBands; ++b) {
      // class-specific spectral tilt so no single band separates everything
      const double tilt = 1.0 + 0.35 * std::sin(0.9 * b + 0.7 * class_index);
      s.amplitude[static_cast<size_t>(b)] = e.scale * veg[b] * tilt;
    }
    specs.push_back(std::move(s));
    ++class_index;
  }
  return specs;
}

static void validate_specs(const std::vector<PhenologyClassSpec>& specs, int samples_per_class,
                           int regions, double noise_std) {
  std::vector<std::string> problems;
  if (specs.size() < 2) problems.push_back("need at least 2 classes");
  if (samples_per_class < 1) problems.push_back("samples_per_class must be >= 1");
  if (regions < 3) problems.push_back("need at least 3 regions for a 3-way split");
  if (!(noise_std >= 0.0)) problems.push_back("noise_std must be nonnegative");
  const size_t bands = specs.empty() ? 0 : specs[0].amplitude.size();
  for (const PhenologyClassSpec& s : specs) {
    if (!(s.season_width > 0.0)) {
      problems.push_back("class '" + s.name + "': season_width must be positive");
    }
    if (s.amplitude.size() != bands || s.base.size() != bands || bands == 0) {
      problems.push_back("class '" + s.name + "': amplitude/base band counts disagree");
      continue;
    }
    if (!(s.peak_day >= 0.0 && s.peak_day < 365.0)) {
      problems.push_back("class '" + s.name + "': peak_day outside [0, 365)");
    }
    if (s.harvest_drop_day >= 365.0) {
      problems.push_back("class '" + s.name + "': harvest_drop_day outside [0, 365)");
    }
    for (size_t b = 0; b < bands; ++b) {
      const double peak_value = s.base[b] + s.amplitude[b];
      if (s.amplitude[b] < 0.0 || s.base[b] < 0.0 || peak_value > 1.5) {
        problems.push_back("class '" + s.name + "': band " + std::to_string(b) +
                           " leaves [0, 1.5] (peak value " + std::to_string(peak_value) + ")");
        break;
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "generate: invalid class specs:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }
}

std::vector<TimeSeriesSample> generate(const std::vector<PhenologyClassSpec>& specs,
                                       int samples_per_class, int regions, double noise_std,
                                       uint64_t seed, const GenerateOptions& opts) {
  validate_specs(specs, samples_per_class, regions, noise_std);
  if (!(opts.revisit_days > 0.0) || opts.cloud_fraction < 0.0 || opts.cloud_fraction >= 1.0) {
    throw std::invalid_argument("generate: invalid revisit/cloud options");
  }

  const int bands = static_cast<int>(specs[0].amplitude.size());
  const int grid_points = static_cast<int>(365.0 / opts.revisit_days);

  std::vector<TimeSeriesSample> samples;
  samples.reserve(specs.size() * static_cast<size_t>(samples_per_class));
  int next_id = 0;
  for (size_t c = 0; c < specs.size(); ++c) {
    const PhenologyClassSpec& spec = specs[c];
    for (int i = 0; i < samples_per_class; ++i) {
      Rng rng(mix_seed(seed, {kGenSalt, c, static_cast<uint64_t>(i)}));

      TimeSeriesSample s;
      s.sample_id = next_id++;
      s.label = static_cast<int>(c);
      s.region_id = rng.uniform_int(regions);
      const double peak_shift = rng.uniform(-opts.peak_jitter_days, opts.peak_jitter_days);
      const double amp_scale = 1.0 + rng.uniform(-opts.amplitude_jitter, opts.amplitude_jitter);

      std::vector<double> days(static_cast<size_t>(grid_points));
      for (int k = 0; k < grid_points; ++k) {
        days[static_cast<size_t>(k)] = k * opts.revisit_days + rng.uniform() * opts.revisit_days;
      }

      // cloud gaps: drop a fixed share of the grid but never go below the floor
      int drop = static_cast<int>(std::lround(opts.cloud_fraction * grid_points));
      drop = std::min(drop, std::max(0, grid_points - opts.min_observations));
      if (drop > 0) {
        const std::vector<int> dropped = rng.sample_indices(grid_points, drop);
        std::vector<double> kept;
        kept.reserve(days.size() - dropped.size());
        size_t di = 0;
        for (int k = 0; k < grid_points; ++k) {
          if (di < dropped.size() && dropped[di] == k) {
            ++di;
          } else {
            kept.push_back(days[static_cast<size_t>(k)]);
          }
        }
        days = std::move(kept);
      }

      const int rows = static_cast<int>(days.size());
      s.times = days;
      s.observations = Array(rows, bands);
      for (int r = 0; r < rows; ++r) {
        double* row = s.observations.row_ptr(r);
        for (int b = 0; b < bands; ++b) {
          row[b] = profile_value(spec, b, days[static_cast<size_t>(r)], peak_shift, amp_scale) +
                   noise_std * rng.normal();
        }
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

Subsampled subsample(const TimeSeriesSample& sample, int target_len, uint64_t seed) {
  const int raw = sample.observations.rows();
  if (target_len < 1 || raw < target_len) {
    throw std::invalid_argument("subsample: sample " + std::to_string(sample.sample_id) +
                                " has " + std::to_string(raw) + " observations, need " +
                                std::to_string(target_len));
  }
  Rng rng(seed);
  const std::vector<int> idx = rng.sample_indices(raw, target_len);
  Subsampled out;
  out.X = Array(target_len, sample.observations.cols());
  out.times.resize(static_cast<size_t>(target_len));
  for (int r = 0; r < target_len; ++r) {
    const int src = idx[static_cast<size_t>(r)];
    out.times[static_cast<size_t>(r)] = sample.times[static_cast<size_t>(src)];
    const double* from = sample.observations.row_ptr(src);
    double* to = out.X.row_ptr(r);
    for (int b = 0; b < sample.observations.cols(); ++b) to[b] = from[b];
  }
  return out;
}

DatasetSplit split_by_region(const std::vector<TimeSeriesSample>& samples, double train_frac,
                             double val_frac, double test_frac, uint64_t seed) {
  if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0) ||
      std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw std::invalid_argument("split_by_region: fractions must be positive and sum to 1");
  }
  std::map<int, std::vector<int>> by_region;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    by_region[samples[static_cast<size_t>(i)].region_id].push_back(i);
  }
  if (by_region.size() < 3) {
    throw std::invalid_argument("split_by_region: need at least 3 regions, got " +
                                std::to_string(by_region.size()));
  }

  std::vector<int> region_ids;
  region_ids.reserve(by_region.size());
  for (const auto& [rid, _] : by_region) region_ids.push_back(rid);
  Rng rng(mix_seed(seed, {kSplitSalt}));
  rng.shuffle(region_ids);

  const double total = static_cast<double>(samples.size());
  const double targets[3] = {train_frac * total, val_frac * total, test_frac * total};
  double counts[3] = {0.0, 0.0, 0.0};
  DatasetSplit split;
  std::vector<int>* index_lists[3] = {&split.train, &split.val, &split.test};
  std::vector<int>* region_lists[3] = {&split.train_regions, &split.val_regions,
                                       &split.test_regions};
  for (int rid : region_ids) {
    int best = 0;
    double best_deficit = targets[0] - counts[0];
    for (int part = 1; part < 3; ++part) {
      const double deficit = targets[part] - counts[part];
      if (deficit > best_deficit) {
        best = part;
        best_deficit = deficit;
      }
    }
    const std::vector<int>& members = by_region[rid];
    index_lists[best]->insert(index_lists[best]->end(), members.begin(), members.end());
    region_lists[best]->push_back(rid);
    counts[best] += static_cast<double>(members.size());
  }
  for (int part = 0; part < 3; ++part) {
    std::sort(index_lists[part]->begin(), index_lists[part]->end());
    std::sort(region_lists[part]->begin(), region_lists[part]->end());
  }
  return split;
}

std::pair<Array, Array> fit_normalization(const std::vector<TimeSeriesSample>& samples,
                                          std::span<const int> indices) {
  if (indices.empty()) {
    throw std::invalid_argument("fit_normalization: empty training split");
  }
  const int bands = samples[static_cast<size_t>(indices[0])].observations.cols();
  Array mean(1, bands);
  Array sigma(1, bands);
  long rows = 0;
  for (int i : indices) {
    const Array& obs = samples[static_cast<size_t>(i)].observations;
    for (int r = 0; r < obs.rows(); ++r) {
      const double* row = obs.row_ptr(r);
      for (int b = 0; b < bands; ++b) mean[b] += row[b];
    }
    rows += obs.rows();
  }
  for (int b = 0; b < bands; ++b) mean[b] /= static_cast<double>(rows);
  for (int i : indices) {
    const Array& obs = samples[static_cast<size_t>(i)].observations;
    for (int r = 0; r < obs.rows(); ++r) {
      const double* row = obs.row_ptr(r);
      for (int b = 0; b < bands; ++b) {
        const double d = row[b] - mean[b];
        sigma[b] += d * d;
      }
    }
  }
  for (int b = 0; b < bands; ++b) {
    sigma[b] = std::sqrt(sigma[b] / static_cast<double>(rows));
    if (sigma[b] < 1e-8) sigma[b] = 1e-8;
  }
  return {std::move(mean), std::move(sigma)};
}

void save_dataset(const std::string& path, const std::vector<TimeSeriesSample>& samples) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_dataset: cannot open " + path);
  }
  const int bands = samples.empty() ? 0 : samples[0].observations.cols();
  std::string header = "sample_id,region_id,label,day";
  for (int b = 0; b < bands; ++b) header += ",b" + std::to_string(b);
  out << header << "\n";

  std::string line;
  for (const TimeSeriesSample& s : samples) {
    for (int r = 0; r < s.observations.rows(); ++r) {
      line.clear();
      line += std::to_string(s.sample_id);
      line += ',';
      line += std::to_string(s.region_id);
      line += ',';
      line += std::to_string(s.label);
      line += ',';
      append_double(line, s.times[static_cast<size_t>(r)]);
      const double* row = s.observations.row_ptr(r);
      for (int b = 0; b < bands; ++b) {
        line += ',';
        append_double(line, row[b]);
      }
      line += '\n';
      out << line;
    }
  }
  if (!out) {
    throw std::runtime_error("save_dataset: write failed for " + path);
  }
}

std::vector<TimeSeriesSample> load_dataset(const std::string& path, int expected_bands) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_dataset: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_dataset: " + path + " is empty (missing header)");
  }
  const auto header = split_fields(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "region_id" ||
      header[2] != "label" || header[3] != "day") {
    parse_fail(path, 1, "bad header, expected sample_id,region_id,label,day,b0,...");
  }
  const int bands = static_cast<int>(header.size()) - 4;
  if (expected_bands >= 0 && bands != expected_bands) {
    parse_fail(path, 1,
               "dataset has " + std::to_string(bands) + " bands, expected " +
                   std::to_string(expected_bands));
  }

  struct Building {
    int region = 0, label = 0;
    std::vector<double> times;
    std::vector<double> values;  // row-major
  };
  std::map<int, Building> partial;
  std::vector<int> id_order;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) != 4 + bands) {
      parse_fail(path, line_no,
                 "expected " + std::to_string(4 + bands) + " fields, got " +
                     std::to_string(fields.size()));
    }
    const int id = static_cast<int>(parse_long(fields[0], path, line_no));
    const int region = static_cast<int>(parse_long(fields[1], path, line_no));
    const int label = static_cast<int>(parse_long(fields[2], path, line_no));
    if (label < 0) parse_fail(path, line_no, "negative class label");
    const double day = parse_double(fields[3], path, line_no);

    auto [it, inserted] = partial.try_emplace(id);
    Building& b = it->second;
    if (inserted) {
      b.region = region;
      b.label = label;
      id_order.push_back(id);
    } else if (b.region != region || b.label != label) {
      parse_fail(path, line_no,
                 "sample " + std::to_string(id) + " changes region or label mid-file");
    }
    if (!b.times.empty() && day <= b.times.back()) {
      parse_fail(path, line_no,
                 "sample " + std::to_string(id) + " days not strictly increasing");
    }
    b.times.push_back(day);
    for (int col = 0; col < bands; ++col) {
      b.values.push_back(parse_double(fields[static_cast<size_t>(4 + col)], path, line_no));
    }
  }

  std::vector<TimeSeriesSample> samples;
  samples.reserve(id_order.size());
  for (int id : id_order) {
    Building& b = partial[id];
    TimeSeriesSample s;
    s.sample_id = id;
    s.region_id = b.region;
    s.label = b.label;
    s.times = std::move(b.times);
    s.observations = Array(static_cast<int>(s.times.size()), bands);
    std::copy(b.values.begin(), b.values.end(), s.observations.begin());
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_class_specs(const std::string& path, const std::vector<PhenologyClassSpec>& specs) {
  nlohmann::json j = nlohmann::json::array();
  for (const PhenologyClassSpec& s : specs) {
    nlohmann::json e;
    e["name"] = s.name;
    e["peak_day"] = s.peak_day;
    e["season_width"] = s.season_width;
    e["amplitude"] = s.amplitude;
    e["base"] = s.base;
    if (s.harvest_drop_day >= 0.0) e["harvest_drop_day"] = s.harvest_drop_day;
    j.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_class_specs: cannot open " + path);
  }
  out << j.dump(1) << "\n";
}

std::vector<PhenologyClassSpec> load_class_specs(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_class_specs: cannot open " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_class_specs: " + path + ": " + e.what());
  }
  std::vector<PhenologyClassSpec> specs;
  for (const auto& e : j) {
    PhenologyClassSpec s;
    s.name = e.at("name").get<std::string>();
    s.peak_day = e.at("peak_day").get<double>();
    s.season_width = e.at("season_width").get<double>();
    s.amplitude = e.at("amplitude").get<std::vector<double>>();
    s.base = e.at("base").get<std::vector<double>>();
    s.harvest_drop_day = e.value("harvest_drop_day", -1.0);
    specs.push_back(std::move(s));
  }
  return specs;
}

int num_regions(const std::vector<TimeSeriesSample>& samples) {
  std::set<int> ids;
  for (const TimeSeriesSample& s : samples) ids.insert(s.region_id);
  return static_cast<int>(ids.size());
}

int num_classes_in(const std::vector<TimeSeriesSample>& samples) {
  int max_label = -1;
  for (const TimeSeriesSample& s : samples) max_label = std::max(max_label, s.label);
  return max_label + 1;
}

}  // namespace earlycls
