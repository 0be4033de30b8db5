#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "gga/data.hpp"
#include "gga/graph.hpp"

namespace fs = std::filesystem;
using namespace gga;
using namespace gga::data;

namespace {

fs::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path dir = fs::temp_directory_path() / "gga_unit" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::create_directories(dir);
  return dir / name;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = scratch(name);
  std::ofstream(path, std::ios::binary) << text;
  return path.string();
}

DomainDataset labelled(std::vector<int> labels, std::size_t k, std::size_t d = 2) {
  DomainDataset ds;
  ds.name = "t";
  ds.num_classes = k;
  ds.features = Tensor(labels.size(), d);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) ds.features(i, j) = static_cast<double>(i * d + j);
  ds.labels = std::move(labels);
  return ds;
}

// Brute-force nearest-centroid accuracy with centroids fit on all rows.
double nearest_centroid_accuracy(const DomainDataset& ds) {
  const auto c = graph::class_centroids(ds.features, ds.labels, ds.num_classes);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        const double diff = ds.features(i, j) - c.centroids(k, j);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    ok += static_cast<int>(best) == ds.labels[i] ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

}  // namespace

TEST(LoadCsv, DropsDuplicateRecords) {
  const auto path = write_file("d.csv", "a,b,label\n1,2,x\n3,4,y\n1,2,x\n5,6,x\n");
  const auto loaded = load_csv(path);
  EXPECT_EQ(loaded.dataset.size(), 3u);
  EXPECT_EQ(loaded.dataset.dim(), 2u);
}

TEST(LoadCsv, SameFeaturesDifferentLabelAreNotDuplicates) {
  const auto path = write_file("d.csv", "a,label\n1,x\n1,y\n");
  EXPECT_EQ(load_csv(path).dataset.size(), 2u);
}

TEST(LoadCsv, MapsLabelsToContiguousIds) {
  const auto path = write_file("d.csv", "f,label\n1,dos\n2,normal\n3,dos\n");
  const auto loaded = load_csv(path);
  EXPECT_EQ(loaded.dataset.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(loaded.mapping.names(), (std::vector<std::string>{"dos", "normal"}));
  EXPECT_EQ(loaded.dataset.num_classes, 2u);

  const auto sidecar = scratch("mapping.csv").string();
  loaded.mapping.write_csv(sidecar);
  std::ifstream in(sidecar);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, "name,id\ndos,0\nnormal,1\n");
  EXPECT_EQ(LabelMapping::read_csv(sidecar).names(), loaded.mapping.names());
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  const auto path = write_file("d.csv", "a,b,label\n1,2,x\n3,oops,y\n");
  try {
    load_csv(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("oops"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, UnknownLabelColumnIsAnError) {
  const auto path = write_file("d.csv", "a,b,class\n1,2,x\n");
  EXPECT_THROW(load_csv(path), DataError);
  EXPECT_EQ(load_csv(path, "class").dataset.size(), 1u);
}

TEST(LoadCsv, SharedMappingRejectsUnknownCategory) {
  const auto path = write_file("d.csv", "a,label\n1,dos\n2,botnet\n");
  const LabelMapping shared(std::vector<std::string>{"dos", "normal"});
  EXPECT_THROW(load_csv(path, "label", &shared), DataError);
}

TEST(LoadCsv, WriteThenReadRoundTripsBitwise) {
  const auto pair = gen_synthetic_pair({});
  const auto mapping = synthetic_mapping(3);
  const auto path = scratch("s.csv").string();
  write_csv(path, pair.source, mapping);
  const auto back = load_csv(path, "label", &mapping);
  EXPECT_EQ(back.dataset.features, pair.source.features);
  EXPECT_EQ(back.dataset.labels, pair.source.labels);
}

TEST(Standardise, TwoPointColumn) {
  DomainDataset ds = labelled({0, 1}, 2, 1);
  ds.features = Tensor::from_rows({{1.0}, {3.0}});
  const auto s = standardise(ds);
  EXPECT_DOUBLE_EQ(s.dataset.features(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.dataset.features(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.stats.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.stats.stddev[0], 1.0);  // population convention
}

TEST(Standardise, ConstantColumnIsZeroedAndFlagged) {
  DomainDataset ds = labelled({0, 1, 0}, 2, 2);
  ds.features = Tensor::from_rows({{5.0, 1.0}, {5.0, 2.0}, {5.0, 4.0}});
  const auto s = standardise(ds);
  EXPECT_TRUE(s.stats.constant[0]);
  EXPECT_FALSE(s.stats.constant[1]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.dataset.features(i, 0), 0.0);
}

TEST(Standardise, IdempotentAndInvertible) {
  const auto pair = gen_synthetic_pair({});
  const auto once = standardise(pair.target);
  const auto twice = standardise(once.dataset);
  for (std::size_t i = 0; i < once.dataset.features.size(); ++i)
    EXPECT_NEAR(twice.dataset.features[i], once.dataset.features[i], 1e-12);
  const Tensor back = once.stats.invert(once.dataset.features);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], pair.target.features[i], 1e-12);
}

TEST(Standardise, NeedsTwoRows) { EXPECT_THROW(standardise(labelled({0}, 1)), DataError); }

TEST(Split, RatioArithmetic) {
  std::vector<int> y;
  for (int k = 0; k < 3; ++k) y.insert(y.end(), 170, k);
  const auto split = split_semi_supervised(labelled(y, 3), {1, 50, 9, true});
  EXPECT_EQ(split.labelled.size(), 10u);
  EXPECT_EQ(split.unlabelled.size(), 500u);
}

TEST(Split, PartitionsTargetAndHidesTruth) {
  std::vector<int> y;
  for (int k = 0; k < 3; ++k) y.insert(y.end(), 40, k);
  const auto ds = labelled(y, 3);
  const auto split = split_semi_supervised(ds, {1, 5, 2, true});
  std::set<std::size_t> all(split.labelled_rows.begin(), split.labelled_rows.end());
  for (std::size_t r : split.unlabelled_rows) EXPECT_TRUE(all.insert(r).second) << "row " << r << " twice";
  EXPECT_EQ(all.size(), ds.size());
  for (int v : split.unlabelled.labels) EXPECT_EQ(v, kUnlabelled);
  ASSERT_TRUE(split.unlabelled.hidden.has_value());
  const auto& truth = split.unlabelled.hidden->reveal();
  for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_EQ(truth[i], y[split.unlabelled_rows[i]]);
  // Every class keeps at least one labelled row.
  std::set<int> seen(split.labelled.labels.begin(), split.labelled.labels.end());
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Split, SameSeedSameSplit) {
  std::vector<int> y;
  for (int k = 0; k < 2; ++k) y.insert(y.end(), 60, k);
  const auto ds = labelled(y, 2);
  const auto a = split_semi_supervised(ds, {1, 10, 4, true});
  const auto b = split_semi_supervised(ds, {1, 10, 4, true});
  const auto c = split_semi_supervised(ds, {1, 10, 5, true});
  EXPECT_EQ(a.labelled_rows, b.labelled_rows);
  EXPECT_NE(a.labelled_rows, c.labelled_rows);
}

TEST(Split, InfeasibleStratificationAdvisesRatioChange) {
  std::vector<int> y(50, 0);
  y.insert(y.end(), 51, 1);
  try {
    split_semi_supervised(labelled(y, 2), {1, 100, 0, true});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("increase the labelled share"), std::string::npos) << e.what();
  }
}

TEST(Split, RejectsZeroRatioPart) {
  EXPECT_THROW(split_semi_supervised(labelled({0, 1, 0, 1}, 2), {0, 3, 0, true}), DataError);
}

TEST(HiddenTruth, RefusesInsideTrainingScope) {
  HiddenTruth truth({1, 0});
  EXPECT_NO_THROW(truth.reveal());
  {
    TrainingScope scope;
    EXPECT_TRUE(in_training_scope());
    EXPECT_THROW(truth.reveal(), ContractViolation);
  }
  EXPECT_FALSE(in_training_scope());
  EXPECT_EQ(truth.reveal(), (std::vector<int>{1, 0}));
}

TEST(Synthetic, DefaultsAreHeterogeneous) {
  const auto pair = gen_synthetic_pair({});
  EXPECT_EQ(pair.source.dim(), 6u);
  EXPECT_EQ(pair.target.dim(), 4u);
  EXPECT_NE(pair.source.dim(), pair.target.dim());
  EXPECT_TRUE(pair.source.fully_labelled());
  EXPECT_TRUE(pair.target.fully_labelled());
  EXPECT_EQ(pair.target.size(), 510u);
}

TEST(Synthetic, SameSeedBitwiseIdentical) {
  SyntheticSpec s;
  s.seed = 11;
  const auto a = gen_synthetic_pair(s);
  const auto b = gen_synthetic_pair(s);
  EXPECT_EQ(a.source.features, b.source.features);
  EXPECT_EQ(a.target.features, b.target.features);
  EXPECT_EQ(a.source.labels, b.source.labels);
  s.seed = 12;
  EXPECT_NE(gen_synthetic_pair(s).source.features, a.source.features);
}

TEST(Synthetic, NoiselessLargeSeparationIsNearestCentroidSeparable) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec s;
    s.noise = 0.0;
    s.separation = 10.0;
    s.seed = seed;
    const auto pair = gen_synthetic_pair(s);
    EXPECT_EQ(nearest_centroid_accuracy(pair.source), 1.0);
    EXPECT_EQ(nearest_centroid_accuracy(pair.target), 1.0);
  }
}

TEST(Synthetic, NoiselessCentroidsEqualMixedLatentCentres) {
  SyntheticSpec s;
  s.noise = 0.0;
  s.seed = 3;
  const auto pair = gen_synthetic_pair(s);
  auto check = [&](const DomainDataset& ds, const Tensor& mix) {
    const auto c = graph::class_centroids(ds.features, ds.labels, ds.num_classes);
    for (std::size_t k = 0; k < s.num_classes; ++k)
      for (std::size_t j = 0; j < mix.cols(); ++j) {
        double expected = 0.0;
        for (std::size_t l = 0; l < s.latent_dim; ++l) expected += pair.latent_centres(k, l) * mix(l, j);
        EXPECT_NEAR(c.centroids(k, j), expected, 1e-9);
      }
  };
  check(pair.source, pair.source_mixing);
  check(pair.target, pair.target_mixing);
}

TEST(Synthetic, CentresRespectMinimumSeparation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SyntheticSpec s;
    s.seed = seed;
    const auto c = gen_synthetic_pair(s).latent_centres;
    for (std::size_t a = 0; a < c.rows(); ++a)
      for (std::size_t b = a + 1; b < c.rows(); ++b)
        EXPECT_GE(std::sqrt(squared_distance(c.row_span(a), c.row_span(b))), s.separation);
  }
}

TEST(Synthetic, RejectsSingleClass) {
  SyntheticSpec s;
  s.num_classes = 1;
  EXPECT_THROW(gen_synthetic_pair(s), DataError);
}
