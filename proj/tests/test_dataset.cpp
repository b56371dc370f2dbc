#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "probid/dataset.hpp"

using namespace probid;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("probid_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

Dataset small_mixed(std::size_t n, std::uint64_t seed = 100) {
  return generate_dataset(n, MarketModel{}, CampaignSampler{}, default_mixture(), seed);
}

}  // namespace

TEST(Dataset, ZeroMultiplierTrajectoryIsAllZero) {
  const Dataset d = generate_dataset(1, MarketModel{}, CampaignSampler{}, {{BehaviorPolicy::constant(0.0), 1.0}}, 0);
  ASSERT_EQ(d.size(), 1u);
  const Trajectory& t = d.trajectories[0];
  EXPECT_EQ(t.length(), 48);
  for (const Step& s : t.steps) {
    EXPECT_EQ(s.action, 0.0);
    EXPECT_EQ(s.reward, 0.0);
    EXPECT_EQ(s.cost, 0.0);
  }
  TempDir dir;
  save_dataset((dir / "d.jsonl").string(), d.trajectories);
  EXPECT_EQ(load_dataset((dir / "d.jsonl").string()), d.trajectories);
}

TEST(Dataset, MixedPopulationHasRatioSpread) {
  const Dataset d = small_mixed(500);
  const DatasetManifest m = summarize(d, 100);
  EXPECT_EQ(m.trajectory_count, 500u);
  EXPECT_EQ(m.seed_last, 599u);
  const auto [lo, hi] = m.ratio_range();
  EXPECT_LT(lo, hi);
  std::size_t compliant = 0, violating = 0, shortened = 0;
  for (const Trajectory& t : d.trajectories) {
    EXPECT_TRUE(validate_trajectory(t).ok());
    EXPECT_LE(t.length(), t.campaign.horizon);
    if (t.realized_ratio() <= t.campaign.cpa_target) ++compliant; else ++violating;
    if (t.length() < t.campaign.horizon) ++shortened;
  }
  EXPECT_GT(compliant, 50u);
  EXPECT_GT(violating, 50u);
  EXPECT_GT(shortened, 0u);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  TempDir dir;
  save_dataset((dir / "a.jsonl").string(), small_mixed(40).trajectories);
  save_dataset((dir / "b.jsonl").string(), small_mixed(40).trajectories);
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
  save_dataset((dir / "c.jsonl").string(), small_mixed(40, 101).trajectories);
  EXPECT_NE(read_file(dir / "a.jsonl"), read_file(dir / "c.jsonl"));
}

TEST(Dataset, SaveLoadSaveRoundTrip) {
  TempDir dir;
  const Dataset d = small_mixed(30);
  save_dataset((dir / "a.jsonl").string(), d.trajectories);
  const std::vector<Trajectory> loaded = load_dataset((dir / "a.jsonl").string());
  EXPECT_EQ(loaded, d.trajectories);
  save_dataset((dir / "b.jsonl").string(), loaded);
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
}

TEST(Dataset, TruncatedLineNamesLine) {
  TempDir dir;
  save_dataset((dir / "a.jsonl").string(), small_mixed(3).trajectories);
  std::string text = read_file(dir / "a.jsonl");
  text.resize(text.size() - 40);
  std::ofstream((dir / "a.jsonl")) << text;
  try {
    load_dataset((dir / "a.jsonl").string());
    FAIL() << "expected a parse error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.jsonl:3:"), std::string::npos) << e.what();
  }
}

TEST(Dataset, SchemaVersionMismatch) {
  TempDir dir;
  std::string line = serialize_trajectory(small_mixed(1).trajectories[0]);
  const std::string key = "\"version\":1";
  const std::size_t at = line.find(key);
  ASSERT_NE(at, std::string::npos);
  line.replace(at, key.size(), "\"version\":9");
  std::ofstream((dir / "v.jsonl")) << line << '\n';
  try {
    load_dataset((dir / "v.jsonl").string());
    FAIL() << "expected a version error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported dataset schema version 9"), std::string::npos) << e.what();
  }
}

TEST(Dataset, RejectsInvalidTrajectoryOnLoad) {
  TempDir dir;
  Trajectory t = small_mixed(1).trajectories[0];
  t.campaign.budget = t.total_cost * 0.5;
  std::ofstream((dir / "bad.jsonl")) << serialize_trajectory(t) << '\n';
  EXPECT_THROW(load_dataset((dir / "bad.jsonl").string()), ConfigError);
  EXPECT_THROW(load_dataset((dir / "missing.jsonl").string()), Error);
}

TEST(Dataset, ManifestRoundTrip) {
  TempDir dir;
  Dataset d = small_mixed(20);
  d.trajectories[0] = generate_trajectory(BehaviorPolicy::constant(0.0), MarketModel{}, CampaignSampler{}, 100);
  const DatasetManifest m = summarize(d, 100);
  save_manifest((dir / "m.json").string(), m);
  const DatasetManifest back = load_manifest((dir / "m.json").string());
  EXPECT_EQ(back.trajectory_count, 20u);
  EXPECT_EQ(back.seed_first, 100u);
  EXPECT_EQ(back.seed_last, 119u);
  EXPECT_TRUE(std::isinf(back.entries[0].realized_ratio));
  for (std::size_t i = 1; i < 20; ++i) {
    EXPECT_EQ(back.entries[i].total_cost, m.entries[i].total_cost);
    EXPECT_EQ(back.entries[i].policy, m.entries[i].policy);
  }
}

TEST(Dataset, NoiseFractionZeroLeavesDataUnchanged) {
  const Dataset d = small_mixed(10);
  EXPECT_EQ(inject_noise_trajectories(d, 0.0, MarketModel{}, 5).trajectories, d.trajectories);
}

TEST(Dataset, NoiseFractionOneReplacesAll) {
  const Dataset d = small_mixed(10);
  const Dataset noisy = inject_noise_trajectories(d, 1.0, MarketModel{}, 5);
  ASSERT_EQ(noisy.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NE(noisy.trajectories[i], d.trajectories[i]);
    EXPECT_EQ(noisy.trajectories[i].campaign, d.trajectories[i].campaign);
    EXPECT_EQ(noisy.policy_labels[i], "noise");
  }
}

TEST(Dataset, NoiseFractionFloorCount) {
  const Dataset d = small_mixed(10);
  const Dataset noisy = inject_noise_trajectories(d, 0.3, MarketModel{}, 5);
  int replaced = 0;
  for (std::size_t i = 0; i < 10; ++i) replaced += noisy.trajectories[i] != d.trajectories[i];
  EXPECT_EQ(replaced, 3);
  EXPECT_EQ(inject_noise_trajectories(d, 0.3, MarketModel{}, 5).trajectories, noisy.trajectories);
  EXPECT_THROW(inject_noise_trajectories(d, 1.5, MarketModel{}, 5), ConfigError);
}

TEST(Dataset, MixtureAssignmentDeterministic) {
  const auto mix = default_mixture();
  EXPECT_EQ(assign_mixture(200, mix, 9), assign_mixture(200, mix, 9));
  EXPECT_NE(assign_mixture(200, mix, 9), assign_mixture(200, mix, 10));
  const auto a = assign_mixture(2000, mix, 9);
  const double pacer_share = static_cast<double>(std::count(a.begin(), a.end(), 1u)) / 2000.0;
  EXPECT_NEAR(pacer_share, 0.4, 0.05);
}

TEST(Dataset, InvalidMixtureRejected) {
  EXPECT_THROW(assign_mixture(5, {}, 0), ConfigError);
  EXPECT_THROW(assign_mixture(5, {{BehaviorPolicy::constant(1.0), 0.0}}, 0), ConfigError);
  BehaviorPolicy bad = BehaviorPolicy::constant(1.0);
  bad.multiplier_low = 2.0;
  EXPECT_THROW(assign_mixture(5, {{bad, 1.0}}, 0), ConfigError);
}

TEST(Dataset, PacerTracksUniformSpend) {
  // The pacer should land closer to full budget use than a fixed low multiplier.
  BehaviorPolicy pacer = default_mixture()[1].policy;
  pacer.noise_scale = 0.0;
  pacer.multiplier_low = pacer.multiplier_high = 0.5;
  const CampaignSampler c = CampaignSampler::fixed({300.0, 8.0, 48, RewardMode::dense});
  double paced = 0.0, fixed = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    paced += generate_trajectory(pacer, MarketModel{}, c, s).total_cost;
    fixed += generate_trajectory(BehaviorPolicy::constant(0.5), MarketModel{}, c, s).total_cost;
  }
  EXPECT_GT(paced, fixed);
}
