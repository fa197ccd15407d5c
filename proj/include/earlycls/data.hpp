#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "earlycls/array.hpp"

namespace earlycls {

// One labeled sequence: reflectance-like observations on irregular days.
struct TimeSeriesSample {
  int sample_id = 0;
  int region_id = 0;
  int label = 0;
  std::vector<double> times;  // day-of-year in [0, 365), strictly increasing
  Array observations;         // T_raw x D
};

// Seasonal profile of one class: per band, base + amplitude * gaussian bump
// centered at peak_day, cut back to base after the harvest day.
struct PhenologyClassSpec {
  std::string name;
  double peak_day = 180.0;
  double season_width = 30.0;         // days
  std::vector<double> amplitude;      // per band
  std::vector<double> base;           // per band
  double harvest_drop_day = -1.0;     // < 0: never harvested
};

struct GenerateOptions {
  double revisit_days = 4.0;     // nominal grid spacing; ~73 observations/year survive
  double cloud_fraction = 0.2;   // fraction of grid observations dropped
  int min_observations = 70;     // cloud dropout never goes below this
  double peak_jitter_days = 5.0; // per-sample shift of the seasonal profile
  double amplitude_jitter = 0.1; // per-sample relative amplitude scale
};

// Nine crop classes with staggered peak days and distinct band responses but
// a shared bare-soil baseline, so class information only appears once the
// growth bump rises.
std::vector<PhenologyClassSpec> default_crop_catalogue();

std::vector<TimeSeriesSample> generate(const std::vector<PhenologyClassSpec>& specs,
                                       int samples_per_class, int regions, double noise_std,
                                       uint64_t seed, const GenerateOptions& opts = {});

// target_len rows chosen uniformly without replacement, kept in time order.
struct Subsampled {
  Array X;
  std::vector<double> times;
};
Subsampled subsample(const TimeSeriesSample& sample, int target_len, uint64_t seed);

// Region-blocked split: whole regions are shuffled and greedily assigned so
// the sample counts approach the requested fractions; region id sets are
// pairwise disjoint.
struct DatasetSplit {
  std::vector<int> train, val, test;                          // sample indices
  std::vector<int> train_regions, val_regions, test_regions;  // region ids
};
DatasetSplit split_by_region(const std::vector<TimeSeriesSample>& samples, double train_frac,
                             double val_frac, double test_frac, uint64_t seed);

// Per-band mean and standard deviation over the indexed samples' rows;
// the deviation is floored at 1e-8.
std::pair<Array, Array> fit_normalization(const std::vector<TimeSeriesSample>& samples,
                                          std::span<const int> indices);

// CSV with header sample_id,region_id,label,day,b0,...,b{D-1}; one row per
// observation; shortest round-trip float formatting.
void save_dataset(const std::string& path, const std::vector<TimeSeriesSample>& samples);
std::vector<TimeSeriesSample> load_dataset(const std::string& path, int expected_bands = -1);

void save_class_specs(const std::string& path, const std::vector<PhenologyClassSpec>& specs);
std::vector<PhenologyClassSpec> load_class_specs(const std::string& path);

int num_regions(const std::vector<TimeSeriesSample>& samples);
int num_classes_in(const std::vector<TimeSeriesSample>& samples);

}  // namespace earlycls
