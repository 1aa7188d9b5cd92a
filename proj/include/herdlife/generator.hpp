#pragma once

// Synthetic seven-table herd data with a planted, recoverable herd-life signal.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "herdlife/date.hpp"
#include "herdlife/error.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/metrics.hpp"
#include "herdlife/parallel.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/schema.hpp"
#include "herdlife/tables.hpp"

namespace herdlife {

enum class SignalMode { Linear, NonlinearSequential, DominantFeature };

inline std::string signal_mode_name(SignalMode m) {
  switch (m) {
    case SignalMode::Linear: return "linear";
    case SignalMode::NonlinearSequential: return "nonlinear-sequential";
    case SignalMode::DominantFeature: return "dominant-feature";
  }
  return "?";
}

inline SignalMode signal_mode_from_name(const std::string& name) {
  if (name == "linear") return SignalMode::Linear;
  if (name == "nonlinear-sequential" || name == "nonlinear") return SignalMode::NonlinearSequential;
  if (name == "dominant-feature" || name == "dominant") return SignalMode::DominantFeature;
  throw UsageError("unknown signal mode '" + name + "' (linear | nonlinear-sequential | dominant-feature)");
}

struct Marginal {
  double mean = 0.0;
  double sd = 1.0;
  double min = 0.0;
  double max = 1.0;

  nlohmann::json to_json() const { return {{"mean", mean}, {"sd", sd}, {"min", min}, {"max", max}}; }
  /// Overwrites only the keys present in `j`.
  void update_from_json(const nlohmann::json& j) {
    if (j.contains("mean")) mean = j.at("mean");
    if (j.contains("sd")) sd = j.at("sd");
    if (j.contains("min")) min = j.at("min");
    if (j.contains("max")) max = j.at("max");
  }
};

struct GeneratorConfig {
  std::size_t n_cows = 2000;
  std::size_t n_farms = 7;
  std::uint64_t seed = 7;
  SignalMode mode = SignalMode::NonlinearSequential;

  // Trait marginals (mean, sd, min, max).
  Marginal lactation{3.0, 1.8, 0.0, 12.0};
  Marginal test_milk{23.4, 8.6, 0.1, 77.2};
  Marginal fat_percentage{4.2, 0.8, 0.0, 11.5};
  Marginal lactose_percentage{4.6, 1.2, 0.0, 6.5};
  Marginal milk_305{6847.0, 2241.0, 0.0, 17910.0};
  Marginal lactose_yield{331.0, 237.0, 0.0, 2966.0};
  Marginal pi_fat{95.0, 25.0, 0.0, 168.0};
  Marginal num_pi_tests{7.5, 4.0, 0.0, 39.0};
  Marginal scc{162.5, 437.6, 1.0, 13125.0};
  Marginal hwi{35.3, 93.0, -342.0, 454.0};
  Marginal mammary_system{94.0, 6.0, 68.0, 114.0};
  Marginal mastitis_resistance{101.0, 2.7, 87.0, 110.0};
  Marginal hl{2617.0, 898.0, 101.0, 4993.0};
  // No reference statistics for these; chosen defaults.
  Marginal days_pregnant{90.0, 60.0, 0.0, 280.0};
  Marginal protein_percentage{3.3, 0.4, 2.0, 5.0};

  // Life course, in days of age.
  Marginal age_first_calving{730.0, 60.0, 600.0, 900.0};
  Marginal calving_interval{400.0, 40.0, 330.0, 500.0};
  Marginal last_record_age{1000.0, 900.0, 0.0, 4900.0};  // lower bound is first calving + 30
  double record_window_days = 1000.0;

  // Records per cow: rounded log-normal, clipped.
  double records_median = 32.0;
  double records_sigma = 0.75;
  std::size_t records_min = 1;
  std::size_t records_max = 200;
  double p_test = 0.85;
  double p_pregnancy = 0.07;  // remainder is health events
  double p_extra_health = 0.03;

  // Herd-life signal.
  double farm_sd = 80.0;
  double noise_sd = 150.0;
  double min_gap_days = 30.0;
  double scc_signal = 700.0;          // nonlinear: SCC level over the records preceding the latest
  double interaction_signal = 700.0;  // nonlinear: lactation x milk-305 at the latest record
  std::array<double, kNumFeatures> linear_coefficients = {1.0, -120.0, 0.0, 0.0, 8.0, -40.0, 200.0, -150.0,
                                                          0.0, 2.0,    20.0, 3.0, 40.0, 0.0,  0.0,  0.0};
  double linear_intercept = -5300.0;
  double linear_noise_sd = 20.0;
  Marginal linear_last_record_age{1100.0, 500.0, 0.0, 2400.0};
  std::string dominant_feature = "hwi";
  double dominant_signal = 700.0;
  double dominant_last_record_sd = 150.0;

  void validate() const {
    if (n_cows == 0) throw UsageError("n_cows must be positive");
    if (n_farms == 0) throw UsageError("n_farms must be at least 1");
    for (const Marginal* m : {&lactation, &test_milk, &fat_percentage, &lactose_percentage, &milk_305, &lactose_yield,
                              &pi_fat, &num_pi_tests, &scc, &hwi, &mammary_system, &mastitis_resistance, &hl,
                              &days_pregnant, &protein_percentage, &age_first_calving, &calving_interval}) {
      if (!(m->min <= m->mean && m->mean <= m->max) || !(m->sd >= 0.0)) {
        throw UsageError("infeasible marginal: mean must lie in [min, max] and sd >= 0");
      }
    }
    for (double p : {p_test, p_pregnancy, p_extra_health}) {
      if (!(p >= 0.0 && p <= 1.0)) throw UsageError("probabilities must lie in [0, 1]");
    }
    if (p_test + p_pregnancy > 1.0) throw UsageError("p_test + p_pregnancy must not exceed 1");
    if (records_min < 1 || records_min > records_max) throw UsageError("bad records-per-cow range");
    if (!(noise_sd >= 0.0 && linear_noise_sd >= 0.0 && farm_sd >= 0.0)) throw UsageError("noise scales must be >= 0");
    if (hl.min < 101.0 || hl.max > 4993.0 || hl.min >= hl.max) {
      throw UsageError("herd-life support must lie within [101, 4993]");
    }
    feature_index(dominant_feature);
  }

  nlohmann::json to_json() const {
    nlohmann::json marginals = {
        {"lactation", lactation.to_json()},
        {"test_milk", test_milk.to_json()},
        {"fat_percentage", fat_percentage.to_json()},
        {"lactose_percentage", lactose_percentage.to_json()},
        {"milk_305", milk_305.to_json()},
        {"lactose_yield", lactose_yield.to_json()},
        {"pi_fat", pi_fat.to_json()},
        {"num_pi_tests", num_pi_tests.to_json()},
        {"scc", scc.to_json()},
        {"hwi", hwi.to_json()},
        {"mammary_system", mammary_system.to_json()},
        {"mastitis_resistance", mastitis_resistance.to_json()},
        {"hl", hl.to_json()},
        {"days_pregnant", days_pregnant.to_json()},
        {"protein_percentage", protein_percentage.to_json()},
        {"age_first_calving", age_first_calving.to_json()},
        {"calving_interval", calving_interval.to_json()},
        {"last_record_age", last_record_age.to_json()},
        {"linear_last_record_age", linear_last_record_age.to_json()},
    };
    return {{"n_cows", n_cows},
            {"n_farms", n_farms},
            {"seed", seed},
            {"signal_mode", signal_mode_name(mode)},
            {"marginals", marginals},
            {"record_window_days", record_window_days},
            {"records_median", records_median},
            {"records_sigma", records_sigma},
            {"records_min", records_min},
            {"records_max", records_max},
            {"p_test", p_test},
            {"p_pregnancy", p_pregnancy},
            {"p_extra_health", p_extra_health},
            {"farm_sd", farm_sd},
            {"noise_sd", noise_sd},
            {"min_gap_days", min_gap_days},
            {"scc_signal", scc_signal},
            {"interaction_signal", interaction_signal},
            {"linear_coefficients", linear_coefficients},
            {"linear_intercept", linear_intercept},
            {"linear_noise_sd", linear_noise_sd},
            {"dominant_feature", dominant_feature},
            {"dominant_signal", dominant_signal},
            {"dominant_last_record_sd", dominant_last_record_sd}};
  }

  /// Overlays any keys present in `j` onto this config.
  void update_from_json(const nlohmann::json& j) {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("n_cows", n_cows);
    take("n_farms", n_farms);
    take("seed", seed);
    if (j.contains("signal_mode")) mode = signal_mode_from_name(j.at("signal_mode"));
    if (j.contains("marginals")) {
      const auto& m = j.at("marginals");
      auto marg = [&](const char* key, Marginal& field) {
        if (m.contains(key)) field.update_from_json(m.at(key));
      };
      marg("lactation", lactation);
      marg("test_milk", test_milk);
      marg("fat_percentage", fat_percentage);
      marg("lactose_percentage", lactose_percentage);
      marg("milk_305", milk_305);
      marg("lactose_yield", lactose_yield);
      marg("pi_fat", pi_fat);
      marg("num_pi_tests", num_pi_tests);
      marg("scc", scc);
      marg("hwi", hwi);
      marg("mammary_system", mammary_system);
      marg("mastitis_resistance", mastitis_resistance);
      marg("hl", hl);
      marg("days_pregnant", days_pregnant);
      marg("protein_percentage", protein_percentage);
      marg("age_first_calving", age_first_calving);
      marg("calving_interval", calving_interval);
      marg("last_record_age", last_record_age);
      marg("linear_last_record_age", linear_last_record_age);
    }
    take("record_window_days", record_window_days);
    take("records_median", records_median);
    take("records_sigma", records_sigma);
    take("records_min", records_min);
    take("records_max", records_max);
    take("p_test", p_test);
    take("p_pregnancy", p_pregnancy);
    take("p_extra_health", p_extra_health);
    take("farm_sd", farm_sd);
    take("noise_sd", noise_sd);
    take("min_gap_days", min_gap_days);
    take("scc_signal", scc_signal);
    take("interaction_signal", interaction_signal);
    take("linear_coefficients", linear_coefficients);
    take("linear_intercept", linear_intercept);
    take("linear_noise_sd", linear_noise_sd);
    take("dominant_feature", dominant_feature);
    take("dominant_signal", dominant_signal);
    take("dominant_last_record_sd", dominant_last_record_sd);
  }
};

inline GeneratorConfig default_config() { return GeneratorConfig{}; }

struct GeneratedData {
  RawTables tables;
  nlohmann::json manifest;
};

namespace detail {

inline double quantize(double v, double step) { return std::round(v / step) * step; }

inline double draw(Rng& rng, const Marginal& m) { return rng.truncated_normal(m.mean, m.sd, m.min, m.max); }

// Log-normal with the marginal's mean and sd, clipped to its range.
inline double draw_skewed(Rng& rng, const Marginal& m) {
  const double s2 = std::log(1.0 + (m.sd * m.sd) / (m.mean * m.mean));
  const double mu = std::log(m.mean) - s2 / 2.0;
  return std::clamp(std::exp(rng.normal(mu, std::sqrt(s2))), m.min, m.max);
}

struct CowDraft {
  std::string cow_id;
  std::string farm_id;
  std::size_t farm = 0;
  Date birth;
  std::int64_t last_age = 0;  // age at the latest record
  double noise = 0.0;         // standard normal, scaled later
  std::array<std::vector<RawRow>, 7> rows;
  std::vector<MergedRecord> records;

  std::vector<RawRow>& table(TableKind k) { return rows[static_cast<std::size_t>(k)]; }
};

class CowFactory {
 public:
  explicit CowFactory(const GeneratorConfig& c) : c_(c) {}

  CowDraft make(std::size_t index, Rng& rng) const {
    CowDraft cow;
    cow.farm = rng.index(c_.n_farms);
    cow.cow_id = id_string("NID", index + 1, 6);
    cow.farm_id = id_string("HERD", cow.farm + 1, 2);
    cow.birth = Date::from_ymd(2000, 1, 1).plus_days(static_cast<std::int64_t>(rng.index(3650)));
    const double a0 = std::round(draw(rng, c_.age_first_calving));
    Marginal last = c_.mode == SignalMode::Linear ? c_.linear_last_record_age : c_.last_record_age;
    if (c_.mode == SignalMode::DominantFeature) last.sd = c_.dominant_last_record_sd;
    const auto last_age = static_cast<std::int64_t>(std::round(rng.truncated_normal(last.mean, last.sd, a0 + 30.0, last.max)));
    cow.last_age = last_age;
    const double interval = draw(rng, c_.calving_interval);

    const std::string herd_cow = std::to_string(index % 1000 + 1);
    auto base = [&](TableKind kind) -> RawRow& {
      RawRow row{std::vector<Cell>(schema(kind).columns.size()), 0};
      cow.table(kind).push_back(std::move(row));
      RawRow& r = cow.table(kind).back();
      const TableSchema& s = schema(kind);
      r.cells[s.index_of(s.cow_column)] = cow.cow_id;
      r.cells[s.index_of(s.herd_column)] = cow.farm_id;
      return r;
    };
    auto set = [](RawRow& r, TableKind kind, const char* column, Cell value) {
      r.cells[schema(kind).index_of(column)] = std::move(value);
    };

    // Pedigree; termination is filled once herd life is known.
    {
      RawRow& r = base(TableKind::Pedigree);
      set(r, TableKind::Pedigree, "Within-Herd Cow ID", herd_cow);
      set(r, TableKind::Pedigree, "Birth Date", cow.birth);
      set(r, TableKind::Pedigree, "Sire National ID", id_string("SIRE", rng.index(400) + 1, 4));
      set(r, TableKind::Pedigree, "Dam National ID", id_string("DAM", rng.index(100000) + 1, 6));
    }
    {
      RawRow& r = base(TableKind::Abv);
      set(r, TableKind::Abv, "Within-Herd Cow ID", herd_cow);
      set(r, TableKind::Abv, "Breed Of Cow", std::string(rng.bernoulli(0.8) ? "HO" : "JE"));
      set(r, TableKind::Abv, "Date Of Birth", cow.birth);
      set(r, TableKind::Abv, "Mammary System", quantize(draw(rng, c_.mammary_system), 1.0));
      set(r, TableKind::Abv, "Health Weighted Index", quantize(draw(rng, c_.hwi), 1.0));
      set(r, TableKind::Abv, "ABV Mastitis Resistance", quantize(draw(rng, c_.mastitis_resistance), 1.0));
      set(r, TableKind::Abv, "Reliability Mastitis Resistance", quantize(rng.uniform(30.0, 90.0), 1.0));
    }

    // Calvings every interval from the first, up to the latest record.
    std::vector<std::int64_t> calvings;
    for (int k = 0; k < static_cast<int>(c_.lactation.max); ++k) {
      const auto age = static_cast<std::int64_t>(std::round(a0 + k * interval));
      if (age > last_age) break;
      calvings.push_back(age);
    }
    for (std::size_t k = 0; k < calvings.size(); ++k) {
      const Date d = cow.birth.plus_days(calvings[k]);
      const double parity = static_cast<double>(k + 1);
      RawRow& l = base(TableKind::Lactation);
      const double m305 = quantize(draw(rng, c_.milk_305), 1.0);
      set(l, TableKind::Lactation, "Within-Herd Cow ID", herd_cow);
      set(l, TableKind::Lactation, "Calving Date", d);
      set(l, TableKind::Lactation, "Parity", parity);
      set(l, TableKind::Lactation, "Milk 305", m305);
      set(l, TableKind::Lactation, "Milk Yield", quantize(m305 * rng.uniform(0.9, 1.15), 1.0));
      set(l, TableKind::Lactation, "Fat 305", quantize(m305 * rng.uniform(0.035, 0.05), 1.0));
      set(l, TableKind::Lactation, "Protein 305", quantize(m305 * rng.uniform(0.03, 0.037), 1.0));
      set(l, TableKind::Lactation, "Lactose Yield", quantize(draw(rng, c_.lactose_yield), 1.0));
      set(l, TableKind::Lactation, "PI Fat", quantize(draw(rng, c_.pi_fat), 1.0));
      set(l, TableKind::Lactation, "PI Milk", quantize(rng.truncated_normal(100.0, 20.0, 0.0, 200.0), 1.0));
      set(l, TableKind::Lactation, "Num PI TEST", quantize(draw(rng, c_.num_pi_tests), 1.0));
      set(l, TableKind::Lactation, "Calving Code", std::string("N"));
      RawRow& e = base(TableKind::CalvingEase);
      set(e, TableKind::CalvingEase, "Within-Herd Cow ID", herd_cow);
      set(e, TableKind::CalvingEase, "Calving Date", d);
      set(e, TableKind::CalvingEase, "Parity", parity);
      set(e, TableKind::CalvingEase, "Litter Size", rng.bernoulli(0.03) ? 2.0 : 1.0);
      set(e, TableKind::CalvingEase, "Calving Ease", static_cast<double>(1 + rng.index(rng.bernoulli(0.8) ? 2 : 5)));
      set(e, TableKind::CalvingEase, "Sex Of Calf", std::string(rng.bernoulli(0.5) ? "F" : "M"));
    }

    // Event dates: the latest record is at last_age; the rest fall in the window before it.
    const double draw_count = std::round(std::exp(rng.normal(std::log(c_.records_median), c_.records_sigma)));
    const auto n_records = static_cast<std::size_t>(
        std::clamp(draw_count, static_cast<double>(c_.records_min), static_cast<double>(c_.records_max)));
    const auto window_start = static_cast<std::int64_t>(
        std::max(a0 - 250.0, static_cast<double>(last_age) - c_.record_window_days));
    std::set<std::int64_t> ages = {last_age};
    const auto span = static_cast<std::size_t>(last_age - window_start);
    const std::size_t wanted = std::min(n_records - 1, span);
    while (ages.size() < wanted + 1) ages.insert(window_start + static_cast<std::int64_t>(rng.index(span)));
    const auto heifer_test = static_cast<std::int64_t>(a0 - 220.0);
    const bool separate_heifer_test = !ages.contains(heifer_test);
    if (separate_heifer_test && ages.size() >= c_.records_max && ages.size() > 1) ages.erase(ages.begin());

    std::optional<std::int64_t> last_calving;
    bool first = true;
    for (std::int64_t age : ages) {
      const Date d = cow.birth.plus_days(age);
      const double u = rng.uniform();
      // The earliest windowed event is always a test day so every later record carries test values.
      const bool test = first || u < c_.p_test;
      const bool pregnancy = !test && u < c_.p_test + c_.p_pregnancy;
      const bool health = (!test && !pregnancy) || rng.bernoulli(c_.p_extra_health);
      first = false;
      if (auto it = std::upper_bound(calvings.begin(), calvings.end(), age); it != calvings.begin()) last_calving = *(it - 1);
      if (test) {
        RawRow& r = base(TableKind::TestDay);
        set(r, TableKind::TestDay, "Within-Herd Cow ID", herd_cow);
        set(r, TableKind::TestDay, "Test Date", d);
        set(r, TableKind::TestDay, "Fat Percentage", quantize(draw(rng, c_.fat_percentage), 0.1));
        set(r, TableKind::TestDay, "Protein Percentage", quantize(draw(rng, c_.protein_percentage), 0.01));
        set(r, TableKind::TestDay, "Lactose Percentage", quantize(draw(rng, c_.lactose_percentage), 0.1));
        set(r, TableKind::TestDay, "Somatic Cell Count", quantize(draw_skewed(rng, c_.scc), 1.0));
        set(r, TableKind::TestDay, "Milk Yield", quantize(draw(rng, c_.test_milk), 0.1));
        if (last_calving) set(r, TableKind::TestDay, "Calving Date", cow.birth.plus_days(*last_calving));
      }
      if (pregnancy) add_pregnancy_test(cow, base, set, rng, d, herd_cow);
      if (health) {
        RawRow& r = base(TableKind::HerdHealth);
        set(r, TableKind::HerdHealth, "Date", d);
        static const std::array<const char*, 4> kEvents = {"MAST", "LAME", "METR", "KETO"};
        set(r, TableKind::HerdHealth, "Health Event Code", std::string(kEvents[rng.index(kEvents.size())]));
        set(r, TableKind::HerdHealth, "Health Treatment Code", std::string(rng.bernoulli(0.7) ? "AB" : "NSAID"));
        set(r, TableKind::HerdHealth, "Anatomical Position", std::string(rng.bernoulli(0.5) ? "LF" : "RR"));
      }
    }
    // Heifer pregnancy test before first calving, so days pregnant is known from then on.
    if (separate_heifer_test) add_pregnancy_test(cow, base, set, rng, cow.birth.plus_days(heifer_test), herd_cow);
    cow.noise = rng.normal();

    CowRows view;
    for (TableKind k : kAllTables) {
      if (k == TableKind::Pedigree) continue;
      for (const RawRow& r : cow.table(k)) view[k].push_back(&r);
    }
    cow.records = assemble_records(cow.birth, view);
    return cow;
  }

 private:
  template <typename Base, typename Set>
  void add_pregnancy_test(CowDraft&, Base& base, Set& set, Rng& rng, Date d, const std::string& herd_cow) const {
    RawRow& r = base(TableKind::PregnancyTest);
    set(r, TableKind::PregnancyTest, "Within-Herd Cow Id", herd_cow);
    set(r, TableKind::PregnancyTest, "Date", d);
    set(r, TableKind::PregnancyTest, "Code", std::string("PT"));
    set(r, TableKind::PregnancyTest, "Result", quantize(draw(rng, c_.days_pregnant), 1.0));
    set(r, TableKind::PregnancyTest, "Bull National Id", id_string("SIRE", rng.index(400) + 1, 4));
    set(r, TableKind::PregnancyTest, "Technician Code", id_string("T", rng.index(20) + 1, 2));
  }

  static std::string id_string(const char* prefix, std::size_t n, int width) {
    std::string digits = std::to_string(n);
    if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return prefix + digits;
  }

  const GeneratorConfig& c_;
};

inline double z_or_zero(double v, const Marginal& m) { return std::isnan(v) || m.sd <= 0.0 ? 0.0 : (v - m.mean) / m.sd; }

inline void standardize_in_place(std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
}

// SCC level over the (up to) four records before the latest one, sign flipped.
inline double scc_history_signal(const std::vector<MergedRecord>& records, const Marginal& scc) {
  if (records.size() < 2) return 0.0;
  const std::size_t end = records.size() - 1;
  const std::size_t begin = end >= 4 ? end - 4 : 0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s -= z_or_zero(records[i].values[kScc], scc);
  return s / static_cast<double>(end - begin);
}

}  // namespace detail

/// Generates all seven tables plus a manifest of the planted ground truth.
inline GeneratedData generate(const GeneratorConfig& config) {
  config.validate();
  const detail::CowFactory factory(config);
  std::vector<detail::CowDraft> cows(config.n_cows);
  std::vector<double> noiseless_gap(config.n_cows, 0.0);

  Rng farm_rng = Rng::stream(config.seed, 0xFA53ULL);
  std::vector<double> farm_offset(config.n_farms);
  for (double& f : farm_offset) f = farm_rng.normal(0.0, config.farm_sd);

  const std::size_t dominant = feature_index(config.dominant_feature);
  auto linear_part = [&](const MergedRecord& latest) {
    double y = config.linear_intercept;
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      if (config.linear_coefficients[j] == 0.0) continue;
      const double x = latest.values[j];
      if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
      y += config.linear_coefficients[j] * x;
    }
    return y;
  };

  parallel_for(config.n_cows, [&](std::size_t i) {
    Rng rng = Rng::stream(config.seed, i);
    for (int attempt = 0;; ++attempt) {
      detail::CowDraft cow = factory.make(i, rng);
      if (config.mode == SignalMode::Linear) {
        // Keep cows whose noiseless herd life leaves room for the noise inside the support.
        const double y = linear_part(cow.records.back());
        const double margin = 5.0 * config.linear_noise_sd + 1.0;
        const bool ok = std::isfinite(y) && y - static_cast<double>(cow.last_age) >= config.min_gap_days + margin &&
                        y >= config.hl.min + margin && y <= config.hl.max - margin;
        if (!ok) {
          if (attempt > 1000) throw UsageError("linear generator: planted coefficients give no feasible cows");
          continue;
        }
      }
      cows[i] = std::move(cow);
      return;
    }
  });

  // Herd life per mode.
  const std::size_t n = config.n_cows;
  std::vector<double> hl(n), hl_noiseless(n);
  nlohmann::json truth = {{"signal_mode", signal_mode_name(config.mode)}, {"farm_offsets", farm_offset}};
  auto finish = [&](double gap0, const std::vector<double>& structured) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto last = static_cast<double>(cows[i].last_age);
      const double farm = farm_offset[cows[i].farm];
      const double gap = std::max(gap0 + farm + structured[i] + config.noise_sd * cows[i].noise, config.min_gap_days);
      const double clean_gap = std::max(gap0 + farm + structured[i], config.min_gap_days);
      hl[i] = std::clamp(std::round(last + gap), config.hl.min, config.hl.max);
      hl_noiseless[i] = std::clamp(last + clean_gap, config.hl.min, config.hl.max);
    }
  };
  auto calibrate = [&](const std::vector<double>& structured) {
    // Fixed-point iteration on the gap offset so the realized mean herd life hits the target.
    double mean_last = 0.0;
    for (const auto& c : cows) mean_last += static_cast<double>(c.last_age);
    mean_last /= static_cast<double>(n);
    double gap0 = config.hl.mean - mean_last;
    for (int it = 0; it < 8; ++it) {
      finish(gap0, structured);
      double mean_hl = 0.0;
      for (double h : hl) mean_hl += h;
      mean_hl /= static_cast<double>(n);
      gap0 += config.hl.mean - mean_hl;
    }
    finish(gap0, structured);
    return gap0;
  };

  if (config.mode == SignalMode::Linear) {
    for (std::size_t i = 0; i < n; ++i) {
      const double y = linear_part(cows[i].records.back());
      hl_noiseless[i] = y;
      hl[i] = std::clamp(std::round(y + config.linear_noise_sd * cows[i].noise), config.hl.min, config.hl.max);
    }
    nlohmann::json coefficients = nlohmann::json::object();
    for (std::size_t j = 0; j < kNumFeatures; ++j) coefficients[std::string(kFeatureNames[j])] = config.linear_coefficients[j];
    truth["intercept"] = config.linear_intercept;
    truth["coefficients"] = coefficients;
    truth["noise_sd"] = config.linear_noise_sd;
  } else if (config.mode == SignalMode::NonlinearSequential) {
    std::vector<double> s1(n), s2(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = cows[i].records;
      s1[i] = detail::scc_history_signal(rec, config.scc);
      s2[i] = detail::z_or_zero(rec.back().values[kLactation], config.lactation) *
              detail::z_or_zero(rec.back().values[kMilk305], config.milk_305);
    }
    detail::standardize_in_place(s1);
    detail::standardize_in_place(s2);
    std::vector<double> structured(n);
    for (std::size_t i = 0; i < n; ++i) structured[i] = config.scc_signal * s1[i] + config.interaction_signal * s2[i];
    truth["gap_offset"] = calibrate(structured);
    truth["scc_signal"] = config.scc_signal;
    truth["interaction_signal"] = config.interaction_signal;
    truth["noise_sd"] = config.noise_sd;
  } else {
    std::vector<double> structured(n);
    for (std::size_t i = 0; i < n; ++i) structured[i] = cows[i].records.back().values[dominant];
    detail::standardize_in_place(structured);
    for (double& s : structured) s *= config.dominant_signal;
    truth["gap_offset"] = calibrate(structured);
    truth["dominant_feature"] = config.dominant_feature;
    truth["dominant_signal"] = config.dominant_signal;
    truth["noise_sd"] = config.noise_sd;
  }
  truth["noiseless_r2_ceiling"] = r2(hl, hl_noiseless);

  // Assemble tables in canonical (farm, cow, date) order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cows[a].farm_id != cows[b].farm_id) return cows[a].farm_id < cows[b].farm_id;
    return cows[a].cow_id < cows[b].cow_id;
  });
  GeneratedData out;
  const std::size_t ped_term = schema(TableKind::Pedigree).index_of("Animal Termination Date");
  const std::size_t ped_code = schema(TableKind::Pedigree).index_of("Animal Termination Code");
  for (std::size_t i : order) {
    detail::CowDraft& cow = cows[i];
    cow.table(TableKind::Pedigree).front().cells[ped_term] = cow.birth.plus_days(static_cast<std::int64_t>(hl[i]));
    cow.table(TableKind::Pedigree).front().cells[ped_code] = std::string("C");
    for (TableKind k : kAllTables) {
      std::vector<RawRow>& rows = cow.table(k);
      const std::string& date_col = schema(k).date_column;
      if (!date_col.empty()) {
        const std::size_t dc = schema(k).index_of(date_col);
        std::stable_sort(rows.begin(), rows.end(), [dc](const RawRow& a, const RawRow& b) {
          return std::get<Date>(a.cells[dc]) < std::get<Date>(b.cells[dc]);
        });
      }
      RawTable& table = out.tables[k];
      for (RawRow& r : rows) {
        r.line = table.rows.size() + 2;
        table.rows.push_back(std::move(r));
      }
    }
  }
  out.manifest = {{"config", config.to_json()},
                  {"seed", config.seed},
                  {"ground_truth", truth},
                  {"interpretations", {{"milk_305_max", config.milk_305.max}, {"scc_max", config.scc.max}}},
                  {"files", nlohmann::json::array()}};
  for (TableKind k : kAllTables) out.manifest["files"].push_back(schema(k).file_name);
  return out;
}

inline void write_generated(const std::filesystem::path& dir, const GeneratedData& data) {
  write_tables(dir, data.tables);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << data.manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Realized statistics
// ---------------------------------------------------------------------------

struct RealizedStats {
  std::size_t count = 0;
  double mean = kMissing;
  double sd = kMissing;
  double min = kMissing;
  double max = kMissing;

  static RealizedStats of(const std::vector<double>& v) {
    RealizedStats s;
    s.count = v.size();
    if (v.empty()) return s;
    s.mean = 0.0;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size()));
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    return s;
  }
};

struct MarginalReport {
  RealizedStats hl;
  std::map<std::string, std::pair<Marginal, RealizedStats>> features;
  double pearson_cl_hl = kMissing;
  double fraction_over_5_records = kMissing;
  double mean_records = kMissing;
  std::size_t max_records = 0;
  std::size_t cows = 0;
  std::size_t records = 0;
  std::vector<double> farm_mean_hl;

  nlohmann::json to_json() const {
    auto stats = [](const RealizedStats& s) {
      return nlohmann::json{{"count", s.count}, {"mean", s.mean}, {"sd", s.sd}, {"min", s.min}, {"max", s.max}};
    };
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [name, pair] : features) {
      f[name] = {{"target", pair.first.to_json()}, {"realized", stats(pair.second)}};
    }
    return {{"cows", cows},
            {"records", records},
            {"hl", stats(hl)},
            {"features", f},
            {"pearson_current_life_hl", pearson_cl_hl},
            {"fraction_over_5_records", fraction_over_5_records},
            {"mean_records_per_cow", mean_records},
            {"max_records_per_cow", max_records},
            {"farm_mean_hl", farm_mean_hl}};
  }
};

/// Target versus realized statistics over the merged (uncleaned) histories.
inline MarginalReport marginal_report(const RawTables& tables, const GeneratorConfig& config) {
  MergeResult merged = merge_on_nid(tables);
  compute_targets(merged.histories);
  MarginalReport rep;
  std::vector<double> hl, cl_all, hl_all;
  std::map<std::string, std::vector<double>> per_farm;
  std::size_t over5 = 0;
  const std::vector<std::pair<std::size_t, const Marginal*>> tracked = {
      {kLactation, &config.lactation},         {kMilk305, &config.milk_305},
      {kLactoseYield, &config.lactose_yield},  {kPiFat, &config.pi_fat},
      {kNumPiTests, &config.num_pi_tests},     {kMilkFat, &config.fat_percentage},
      {kLactosePercentage, &config.lactose_percentage}, {kScc, &config.scc},
      {kDaysPregnant, &config.days_pregnant},  {kMammarySystem, &config.mammary_system},
      {kHwi, &config.hwi},                     {kMastitisResistance, &config.mastitis_resistance}};
  std::map<std::size_t, std::vector<double>> values;
  for (const CowHistory& h : merged.histories) {
    if (!h.has_target()) continue;
    hl.push_back(static_cast<double>(h.hl_days));
    per_farm[h.farm_id].push_back(static_cast<double>(h.hl_days));
    rep.max_records = std::max(rep.max_records, h.records.size());
    rep.records += h.records.size();
    over5 += h.records.size() > 5 ? 1 : 0;
    for (const MergedRecord& r : h.records) {
      cl_all.push_back(r.values[kCurrentLife]);
      hl_all.push_back(static_cast<double>(h.hl_days));
      for (const auto& [field, m] : tracked) {
        if (!std::isnan(r.values[field])) values[field].push_back(r.values[field]);
      }
    }
  }
  rep.cows = hl.size();
  rep.hl = RealizedStats::of(hl);
  for (const auto& [field, m] : tracked) rep.features[std::string(kFeatureNames[field])] = {*m, RealizedStats::of(values[field])};
  if (rep.cows > 0) {
    rep.fraction_over_5_records = static_cast<double>(over5) / static_cast<double>(rep.cows);
    rep.mean_records = static_cast<double>(rep.records) / static_cast<double>(rep.cows);
  }
  if (cl_all.size() >= 2) rep.pearson_cl_hl = pearson(cl_all, hl_all);
  for (const auto& [farm, v] : per_farm) rep.farm_mean_hl.push_back(RealizedStats::of(v).mean);
  return rep;
}

}  // namespace herdlife
