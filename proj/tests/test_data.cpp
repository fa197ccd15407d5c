#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "earlycls/data.hpp"
#include "earlycls/rng.hpp"

using namespace earlycls;
namespace fs = std::filesystem;

namespace {

std::vector<PhenologyClassSpec> two_class_specs() {
  PhenologyClassSpec early;
  early.name = "early";
  early.peak_day = 120.0;
  early.season_width = 20.0;
  early.amplitude = {0.5, 0.3};
  early.base = {0.1, 0.2};
  PhenologyClassSpec late = early;
  late.name = "late";
  late.peak_day = 240.0;
  return {early, late};
}

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("default catalogue is valid and staggered") {
  const auto specs = default_crop_catalogue();
  CHECK(specs.size() == 9);
  std::set<double> peaks;
  for (const auto& s : specs) {
    CHECK(s.amplitude.size() == 13);
    CHECK(s.base.size() == 13);
    CHECK(s.season_width > 0.0);
    peaks.insert(s.peak_day);
    for (size_t b = 0; b < 13; ++b) {
      CHECK(s.base[b] + s.amplitude[b] <= 1.5);
      CHECK(s.amplitude[b] >= 0.0);
    }
  }
  CHECK(peaks.size() == 9);  // distinct stopping-relevant moments
  CHECK_NOTHROW(generate(specs, 1, 3, 0.01, 1));
}

TEST_CASE("generation is deterministic and respects the floor") {
  const auto specs = two_class_specs();
  const auto a = generate(specs, 5, 4, 0.02, 99);
  const auto b = generate(specs, 5, 4, 0.02, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].observations == b[i].observations);
    CHECK(a[i].times == b[i].times);
    CHECK(a[i].region_id == b[i].region_id);
  }
  for (const auto& s : a) {
    CHECK(s.observations.rows() >= 70);
    CHECK(std::is_sorted(s.times.begin(), s.times.end()));
    for (size_t t = 1; t < s.times.size(); ++t) CHECK(s.times[t] > s.times[t - 1]);
    CHECK(s.times.front() >= 0.0);
    CHECK(s.times.back() < 365.0);
  }
  const auto c = generate(specs, 5, 4, 0.02, 100);
  CHECK_FALSE(a[0].observations == c[0].observations);
}

TEST_CASE("noise-free classes separate at their peaks") {
  GenerateOptions opts;
  opts.peak_jitter_days = 0.0;
  opts.amplitude_jitter = 0.0;
  const auto samples = generate(two_class_specs(), 1, 3, 0.0, 7, opts);
  REQUIRE(samples.size() == 2);
  // at the early peak, class 0 carries the bump and class 1 does not
  auto value_near = [](const TimeSeriesSample& s, double day) {
    size_t best = 0;
    for (size_t t = 1; t < s.times.size(); ++t) {
      if (std::fabs(s.times[t] - day) < std::fabs(s.times[best] - day)) best = t;
    }
    return s.observations(static_cast<int>(best), 0);
  };
  const double early_at_peak = value_near(samples[0], 120.0);
  const double late_at_peak = value_near(samples[1], 120.0);
  CHECK(early_at_peak > late_at_peak + 0.3);

  // pre-noise values stay in [0, 1.5]
  for (const auto& s : samples) {
    for (double v : s.observations) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.5);
    }
  }
}

TEST_CASE("generation validates its inputs and lists offenders") {
  auto specs = two_class_specs();
  CHECK_THROWS_AS(generate(specs, 0, 4, 0.02, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate(specs, 5, 2, 0.02, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate({specs[0]}, 5, 4, 0.02, 1), std::invalid_argument);

  specs[1].season_width = -3.0;
  specs[0].amplitude[0] = 2.0;
  try {
    generate(specs, 5, 4, 0.02, 1);
    FAIL("expected validation error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("late") != std::string::npos);
    CHECK(msg.find("early") != std::string::npos);
  }
}

TEST_CASE("harvest cuts the profile back to the baseline") {
  auto specs = two_class_specs();
  specs[0].harvest_drop_day = 150.0;
  GenerateOptions opts;
  opts.peak_jitter_days = 0.0;
  opts.amplitude_jitter = 0.0;
  const auto samples = generate(specs, 1, 3, 0.0, 3, opts);
  const TimeSeriesSample& s = samples[0];
  for (size_t t = 0; t < s.times.size(); ++t) {
    if (s.times[t] > 160.0) {
      CHECK(s.observations(static_cast<int>(t), 0) == doctest::Approx(specs[0].base[0]));
    }
  }
}

TEST_CASE("subsample keeps time order and is seeded") {
  const auto samples = generate(two_class_specs(), 2, 3, 0.02, 11);
  const TimeSeriesSample& s = samples[0];
  const int raw = s.observations.rows();

  const Subsampled all = subsample(s, raw, 5);
  CHECK(all.X == s.observations);
  CHECK(all.times == s.times);

  const Subsampled a = subsample(s, 70, 1);
  const Subsampled b = subsample(s, 70, 1);
  CHECK(a.X == b.X);
  for (size_t t = 1; t < a.times.size(); ++t) CHECK(a.times[t] > a.times[t - 1]);

  int distinct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Subsampled c = subsample(s, 70, 100 + static_cast<uint64_t>(trial));
    const Subsampled d = subsample(s, 70, 200 + static_cast<uint64_t>(trial));
    if (!(c.times == d.times)) ++distinct;
  }
  CHECK(distinct >= 99);  // fresh draws almost surely differ

  CHECK_THROWS_AS(subsample(s, raw + 1, 1), std::invalid_argument);
}

TEST_CASE("region split hits fractions and stays disjoint") {
  SUBCASE("three regions, one each") {
    std::vector<TimeSeriesSample> samples;
    for (int i = 0; i < 9; ++i) {
      TimeSeriesSample s;
      s.sample_id = i;
      s.region_id = i % 3;
      samples.push_back(s);
    }
    const auto split = split_by_region(samples, 1.0 / 3, 1.0 / 3, 1.0 / 3, 5);
    CHECK(split.train_regions.size() == 1);
    CHECK(split.val_regions.size() == 1);
    CHECK(split.test_regions.size() == 1);
    CHECK(split.train.size() == 3);
  }

  SUBCASE("ten equal regions approach 60/20/20 within one region") {
    std::vector<TimeSeriesSample> samples;
    for (int i = 0; i < 100; ++i) {
      TimeSeriesSample s;
      s.sample_id = i;
      s.region_id = i / 10;
      samples.push_back(s);
    }
    const auto split = split_by_region(samples, 0.6, 0.2, 0.2, 7);
    CHECK(std::fabs(static_cast<double>(split.train.size()) - 60.0) <= 10.0);
    CHECK(std::fabs(static_cast<double>(split.val.size()) - 20.0) <= 10.0);
    CHECK(std::fabs(static_cast<double>(split.test.size()) - 20.0) <= 10.0);
  }

  SUBCASE("disjoint regions and full coverage for any seed") {
    const auto samples = generate(two_class_specs(), 30, 8, 0.02, 13);
    for (uint64_t seed = 0; seed < 25; ++seed) {
      const auto split = split_by_region(samples, 0.5, 0.25, 0.25, seed);
      std::set<int> train_r(split.train_regions.begin(), split.train_regions.end());
      std::set<int> val_r(split.val_regions.begin(), split.val_regions.end());
      std::set<int> test_r(split.test_regions.begin(), split.test_regions.end());
      for (int r : val_r) CHECK(train_r.count(r) == 0);
      for (int r : test_r) {
        CHECK(train_r.count(r) == 0);
        CHECK(val_r.count(r) == 0);
      }
      CHECK(split.train.size() + split.val.size() + split.test.size() == samples.size());
      for (int idx : split.train) {
        CHECK(train_r.count(samples[static_cast<size_t>(idx)].region_id) == 1);
      }
    }
  }

  SUBCASE("bad fractions and too few regions") {
    const auto samples = generate(two_class_specs(), 4, 3, 0.02, 17);
    CHECK_THROWS_AS(split_by_region(samples, 0.5, 0.5, 0.5, 1), std::invalid_argument);
    std::vector<TimeSeriesSample> two_regions;
    for (int i = 0; i < 4; ++i) {
      TimeSeriesSample s;
      s.region_id = i % 2;
      two_regions.push_back(s);
    }
    CHECK_THROWS_AS(split_by_region(two_regions, 0.5, 0.25, 0.25, 1), std::invalid_argument);
  }
}

TEST_CASE("normalization statistics") {
  SUBCASE("constant band hits the sigma floor") {
    TimeSeriesSample s;
    s.observations = Array::filled(20, 2, 0.7);
    s.times.resize(20);
    for (int t = 0; t < 20; ++t) s.times[static_cast<size_t>(t)] = t;
    const std::vector<TimeSeriesSample> samples{s};
    const std::vector<int> idx{0};
    const auto [mu, sigma] = fit_normalization(samples, idx);
    CHECK(mu[0] == doctest::Approx(0.7));
    CHECK(sigma[0] == 1e-8);
  }

  SUBCASE("standard-normal band recovers its moments") {
    Rng rng(23);
    TimeSeriesSample s;
    s.observations = Array(10000, 1);
    s.times.resize(10000);
    for (int t = 0; t < 10000; ++t) {
      s.observations(t, 0) = rng.normal();
      s.times[static_cast<size_t>(t)] = t * 0.01;
    }
    const std::vector<TimeSeriesSample> samples{s};
    const std::vector<int> idx{0};
    const auto [mu, sigma] = fit_normalization(samples, idx);
    CHECK(std::fabs(mu[0]) < 0.05);
    CHECK(std::fabs(sigma[0] - 1.0) < 0.05);
  }

  SUBCASE("statistics depend only on the indexed samples") {
    auto samples = generate(two_class_specs(), 10, 4, 0.02, 29);
    const std::vector<int> train_idx{0, 1, 2, 3};
    const auto [mu1, sigma1] = fit_normalization(samples, train_idx);
    for (size_t i = 4; i < samples.size(); ++i) {
      samples[i].observations.fill(123.0);  // poison everything else
    }
    const auto [mu2, sigma2] = fit_normalization(samples, train_idx);
    CHECK(mu1 == mu2);
    CHECK(sigma1 == sigma2);
    CHECK_THROWS_AS(fit_normalization(samples, std::vector<int>{}), std::invalid_argument);
  }
}

TEST_CASE("dataset CSV round trip") {
  const std::string path = temp_path("earlycls_data_test.csv");

  SUBCASE("empty dataset is a header-only file") {
    save_dataset(path, {});
    std::ifstream in(path);
    std::string line;
    CHECK(std::getline(in, line));
    CHECK(line == "sample_id,region_id,label,day");
    CHECK_FALSE(std::getline(in, line));
    CHECK(load_dataset(path).empty());
  }

  SUBCASE("generated dataset round-trips value-identically") {
    const auto samples = generate(two_class_specs(), 3, 3, 0.02, 31);
    save_dataset(path, samples);
    const auto loaded = load_dataset(path, 2);
    REQUIRE(loaded.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
      CHECK(loaded[i].sample_id == samples[i].sample_id);
      CHECK(loaded[i].region_id == samples[i].region_id);
      CHECK(loaded[i].label == samples[i].label);
      CHECK(loaded[i].times == samples[i].times);
      CHECK(loaded[i].observations == samples[i].observations);
    }
  }

  SUBCASE("band-count mismatch names the expectation") {
    const auto samples = generate(two_class_specs(), 2, 3, 0.02, 31);
    save_dataset(path, samples);
    CHECK_THROWS_WITH_AS(load_dataset(path, 13), doctest::Contains("expected 13"),
                         std::runtime_error);
  }

  SUBCASE("malformed rows are reported with their line number") {
    {
      std::ofstream out(path);
      out << "sample_id,region_id,label,day,b0\n";
      out << "0,0,0,1.5,0.25\n";
      out << "0,0,0,2.5,not_a_number\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains(":3"), std::runtime_error);

    {
      std::ofstream out(path);
      out << "sample_id,region_id,label,day,b0\n";
      out << "0,0,0,5.0,0.25\n";
      out << "0,0,0,4.0,0.25\n";  // days go backwards
    }
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("strictly increasing"),
                         std::runtime_error);
  }

  fs::remove(path);
}

TEST_CASE("class specs JSON round trip") {
  const std::string path = temp_path("earlycls_specs_test.json");
  const auto specs = default_crop_catalogue();
  save_class_specs(path, specs);
  const auto loaded = load_class_specs(path);
  REQUIRE(loaded.size() == specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    CHECK(loaded[i].name == specs[i].name);
    CHECK(loaded[i].peak_day == specs[i].peak_day);
    CHECK(loaded[i].season_width == specs[i].season_width);
    CHECK(loaded[i].amplitude == specs[i].amplitude);
    CHECK(loaded[i].base == specs[i].base);
    CHECK(loaded[i].harvest_drop_day == specs[i].harvest_drop_day);
  }
  fs::remove(path);
}
