#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "flags/data.hpp"
#include "flags/error.hpp"

using namespace flags;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
    return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace

TEST(GenSynthetic, DeterministicInSeed) {
    const DataConfig c;
    EXPECT_EQ(gen_synthetic(c, 5), gen_synthetic(c, 5));
    EXPECT_NE(gen_synthetic(c, 5).samples[0].x, gen_synthetic(c, 6).samples[0].x);
}

TEST(GenSynthetic, DefaultShape) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 0);
    EXPECT_EQ(d.samples.size(), 1200u);
    EXPECT_EQ(d.class_factors.shape(), (Shape{10, 128}));
    EXPECT_EQ(d.context_factors.shape(), (Shape{8, 128}));
    EXPECT_NO_THROW(validate_dataset(d));
}

TEST(GenSynthetic, FactorsAreOrthonormal) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 1);
    std::vector<std::span<const double>> rows;
    for (std::size_t i = 0; i < d.class_factors.rows(); ++i) {
        rows.push_back(d.class_factors.row(i));
    }
    for (std::size_t i = 0; i < d.context_factors.rows(); ++i) {
        rows.push_back(d.context_factors.row(i));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows.size(); ++j) {
            EXPECT_NEAR(dot(rows[i], rows[j]), i == j ? 1.0 : 0.0, 1e-12);
        }
    }
}

TEST(GenSynthetic, ZeroNoiseIsExactFactorSum) {
    DataConfig c;
    c.noise_sigma = 0.0;
    const SyntheticDataset d = gen_synthetic(c, 2);
    for (const Sample& s : d.samples) {
        const auto cf = d.class_factors.row(s.class_id);
        const auto xf = d.context_factors.row(s.context_id);
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            ASSERT_EQ(s.x[i], cf[i] + xf[i]);
        }
    }
}

TEST(GenSynthetic, BalancedClassesAndRoundRobinContexts) {
    const DataConfig c;
    const SyntheticDataset d = gen_synthetic(c, 3);
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        EXPECT_EQ(d.samples[i].id, i);
        ++counts[{d.samples[i].class_id, d.samples[i].context_id}];
    }
    EXPECT_EQ(counts.size(), c.num_classes * c.contexts_per_class);
    for (std::size_t cls = 0; cls < c.num_classes; ++cls) {
        for (std::size_t j = 0; j < c.contexts_per_class; ++j) {
            EXPECT_EQ((counts[{cls, (cls + j) % c.num_contexts}]), 30);
        }
    }
}

TEST(GenSynthetic, SameContextPairsAreCloserOnAverage) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 4);
    Rng rng(10);
    double same = 0.0, diff = 0.0;
    int n_same = 0, n_diff = 0;
    while (n_same < 2000 || n_diff < 2000) {
        const Sample& a = d.samples[rng.below(d.samples.size())];
        const Sample& b = d.samples[rng.below(d.samples.size())];
        if (a.id == b.id || a.class_id != b.class_id) {
            continue;
        }
        const double s = cosine(a.x, b.x);
        if (a.context_id == b.context_id) {
            same += s;
            ++n_same;
        } else {
            diff += s;
            ++n_diff;
        }
    }
    // Expected about 2/(2+d sigma^2) = 0.886 versus 0.443 at the defaults.
    EXPECT_GT(same / n_same, diff / n_diff + 0.3);
}

TEST(GenSynthetic, ConfigErrors) {
    auto bad = [](auto edit) {
        DataConfig c;
        edit(c);
        EXPECT_THROW(gen_synthetic(c, 0), ConfigError);
    };
    bad([](DataConfig& c) { c.num_classes = 0; });
    bad([](DataConfig& c) { c.samples_per_class = 4; });
    bad([](DataConfig& c) { c.contexts_per_class = 9; });
    bad([](DataConfig& c) { c.input_dim = 17; });
    bad([](DataConfig& c) { c.noise_sigma = -1.0; });
    bad([](DataConfig& c) { c.noise_sigma = std::nan(""); });
}

TEST(ValidateDataset, CatchesCorruption) {
    DataConfig c;
    c.num_classes = 2;
    c.num_contexts = 2;
    c.contexts_per_class = 2;
    c.samples_per_class = 5;
    c.input_dim = 6;
    const SyntheticDataset good = gen_synthetic(c, 1);
    SyntheticDataset d = good;
    d.samples[3].id = 4;
    EXPECT_THROW(validate_dataset(d), IntegrityError);
    d = good;
    d.samples[0].class_id = 2;
    EXPECT_THROW(validate_dataset(d), IntegrityError);
    d = good;
    d.samples[0].x.pop_back();
    EXPECT_THROW(validate_dataset(d), IntegrityError);
    d = good;
    d.samples[0].x[0] = INFINITY;
    EXPECT_THROW(validate_dataset(d), IntegrityError);
}

TEST(Inputs, RowsFollowRequestedIds) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 5);
    const std::size_t ids[] = {7, 3, 7};
    const Tensor x = d.inputs(ids);
    ASSERT_EQ(x.shape(), (Shape{3, 128}));
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_TRUE(std::equal(x.row(r).begin(), x.row(r).end(), d.samples[ids[r]].x.begin()));
    }
}

TEST(Augment, ZeroNoiseZeroMaskIsIdentity) {
    Rng rng(1);
    const std::vector<double> x{0.5, -1.0, 2.0, 3.5};
    EXPECT_EQ(augment(x, {0.0, 0.0}, rng), x);
}

TEST(Augment, MasksExactlyRoundedFraction) {
    Rng rng(2);
    const std::vector<double> x(100, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto y = augment(x, {0.0, 0.25}, rng);
        EXPECT_EQ(std::count(y.begin(), y.end(), 0.0), 25);
        EXPECT_EQ(std::count(y.begin(), y.end(), 1.0), 75);
    }
    const auto y = augment(std::vector<double>(10, 1.0), {0.0, 0.25}, rng);
    EXPECT_EQ(std::count(y.begin(), y.end(), 0.0), 3);  // 2.5 rounds away from zero
}

TEST(Augment, MaskPositionsAreRoughlyUniform) {
    Rng rng(3);
    std::vector<int> hits(20, 0);
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        const auto y = augment(std::vector<double>(20, 1.0), {0.0, 0.25}, rng);
        for (std::size_t i = 0; i < 20; ++i) {
            hits[i] += y[i] == 0.0;
        }
    }
    for (int h : hits) {
        EXPECT_NEAR(h / static_cast<double>(trials), 0.25, 0.02);
    }
}

TEST(Augment, NoiseHasRequestedScale) {
    Rng rng(4);
    const std::vector<double> x(10000, 0.0);
    const auto y = augment(x, {0.3, 0.0}, rng);
    double ss = 0.0, s = 0.0;
    for (double v : y) {
        s += v;
        ss += v * v;
    }
    EXPECT_NEAR(s / y.size(), 0.0, 0.01);
    EXPECT_NEAR(std::sqrt(ss / y.size()), 0.3, 0.01);
}

TEST(Augment, CopiesStayCloserToSourceThanOtherClasses) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 6);
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const Sample& a = d.samples[rng.below(d.samples.size())];
        const Sample& b = d.samples[rng.below(d.samples.size())];
        if (a.class_id == b.class_id || a.context_id == b.context_id) {
            continue;
        }
        const auto y = augment(a.x, AugmentationConfig{}, rng);
        EXPECT_GT(cosine(y, a.x), cosine(y, b.x));
    }
}

TEST(Augment, RowsVersionMatchesPerRowCalls) {
    const SyntheticDataset d = gen_synthetic(DataConfig{}, 7);
    const std::size_t ids[] = {0, 1, 2};
    const Tensor x = d.inputs(ids);
    Rng r1(9), r2(9);
    const Tensor y = augment_rows(x, AugmentationConfig{}, r1);
    for (std::size_t r = 0; r < 3; ++r) {
        const auto one = augment(x.row(r), AugmentationConfig{}, r2);
        EXPECT_TRUE(std::equal(one.begin(), one.end(), y.row(r).begin()));
    }
}

TEST(Augment, ConfigErrors) {
    Rng rng(1);
    const std::vector<double> x(4, 1.0);
    EXPECT_THROW(augment(x, {-0.1, 0.0}, rng), ConfigError);
    EXPECT_THROW(augment(x, {0.1, 1.0}, rng), ConfigError);
    EXPECT_THROW(augment(x, {0.1, -0.1}, rng), ConfigError);
}
