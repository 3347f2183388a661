#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ecnet/data.hpp"
#include "ecnet/nn.hpp"
#include "ecnet/optim.hpp"
#include "ecnet/rng.hpp"
#include "ecnet/tape.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {
namespace {

class TempDir : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() /
               ("ecnet_data_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    std::filesystem::path dir_;
};

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.classes = 4;
    cfg.count = 200;
    cfg.n_ball = 4;
    cfg.dims = {6, 5, 4};
    return cfg;
}

TEST(GenerateSynthetic, RejectsInvalidConfig) {
    SynthConfig cfg = small_config();
    cfg.classes = 1;
    EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.count = 0;
    EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
    cfg = small_config();
    cfg.rho_inc = 0.2;
    cfg.inconsistent_modalities = {false, false, false};
    EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
}

TEST(GenerateSynthetic, SameSeedGivesIdenticalDataset) {
    SynthConfig cfg = small_config();
    cfg.rho_inc = 0.3;
    const Dataset a = generate_synthetic(cfg, 9);
    const Dataset b = generate_synthetic(cfg, 9);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.samples[i].id, b.samples[i].id);
        EXPECT_EQ(a.samples[i].label, b.samples[i].label);
        EXPECT_EQ(a.samples[i].inconsistent, b.samples[i].inconsistent);
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            ASSERT_EQ(a.samples[i].features[m].size(), b.samples[i].features[m].size());
            for (std::size_t k = 0; k < a.samples[i].features[m].size(); ++k)
                EXPECT_EQ(a.samples[i].features[m][k], b.samples[i].features[m][k]);
        }
    }
}

TEST(GenerateSynthetic, DifferentSeedsDiffer) {
    const SynthConfig cfg = small_config();
    const Dataset a = generate_synthetic(cfg, 1);
    const Dataset b = generate_synthetic(cfg, 2);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i)
        differs = a.samples[i].features[0] != b.samples[i].features[0];
    EXPECT_TRUE(differs);
}

TEST(GenerateSynthetic, ShapesMatchHeader) {
    const SynthConfig cfg = small_config();
    const Dataset ds = generate_synthetic(cfg, 3);
    EXPECT_EQ(ds.header.num_classes, cfg.classes);
    for (const Sample& s : ds.samples)
        for (std::size_t m = 0; m < kNumModalities; ++m)
            EXPECT_EQ(s.features[m].size(), cfg.dims[m]);
}

// With zero noise the features are exact linear images of separated class
// clusters, so a softmax probe on the concatenation must fit the train split
// perfectly.
TEST(GenerateSynthetic, NoiselessDataIsLinearlySeparable) {
    SynthConfig cfg = small_config();
    cfg.noise = {0.0, 0.0, 0.0};
    cfg.rho_inc = 0.0;
    const Dataset ds = generate_synthetic(cfg, 11);

    const std::size_t dim = cfg.dims[0] + cfg.dims[1] + cfg.dims[2];
    Tensor x(ds.size(), dim);
    std::vector<int> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t off = 0;
        for (std::size_t m = 0; m < kNumModalities; ++m)
            for (double v : ds.samples[i].features[m]) x(i, off++) = v;
        labels[i] = ds.samples[i].label;
    }

    Param w(Tensor(cfg.classes, dim), "w");
    Param b(Tensor(1, cfg.classes), "b");
    AdamConfig oc;
    oc.lr = 0.1;
    Adam opt({&w, &b}, oc);
    for (int it = 0; it < 400; ++it) {
        Tape t;
        Value logits = t.add_rowvec(t.matmul_nt(t.constant(x), t.leaf(w)), t.leaf(b));
        Value loss = t.softmax_cross_entropy(logits, labels);
        w.zero_grad();
        b.zero_grad();
        t.backward(loss);
        opt.step();
    }

    const Tensor logits = matmul_nt(x, w.value);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int best = 0;
        for (int k = 1; k < cfg.classes; ++k)
            if (logits(i, k) + b.value(0, k) > logits(i, best) + b.value(0, best)) best = k;
        if (best == labels[i]) ++correct;
    }
    EXPECT_EQ(correct, ds.size());
}

TEST(GenerateSynthetic, PlantedInconsistencyFrequencyMatchesRate) {
    SynthConfig cfg = small_config();
    cfg.count = 5000;
    cfg.rho_inc = 0.2;
    const Dataset ds = generate_synthetic(cfg, 21);
    std::size_t flagged = 0;
    for (const Sample& s : ds.samples) flagged += s.inconsistent ? 1 : 0;
    const double freq = static_cast<double>(flagged) / static_cast<double>(ds.size());
    const double ci = 3.0 * std::sqrt(0.2 * 0.8 / static_cast<double>(ds.size()));
    EXPECT_NEAR(freq, 0.2, ci);

    cfg.rho_inc = 0.0;
    for (const Sample& s : generate_synthetic(cfg, 21).samples) EXPECT_FALSE(s.inconsistent);
}

TEST_F(TempDir, EmptyFileLoadsAsEmptyDataset) {
    const std::string p = path("empty.ndjson");
    std::ofstream(p).close();
    const Dataset ds = load_records(p);
    EXPECT_EQ(ds.size(), 0u);
}

TEST_F(TempDir, MissingFileThrows) {
    EXPECT_THROW(load_records(path("nope.ndjson")), DataError);
}

TEST_F(TempDir, RoundTripIsIdentity) {
    SynthConfig cfg = small_config();
    cfg.rho_inc = 0.25;
    Dataset ds = generate_synthetic(cfg, 5);
    ds.samples[3].mask = {true, false, true};
    ds.samples[3].features[1].assign(cfg.dims[1], 0.0);
    const std::string p = path("round.ndjson");
    save_records(ds, p);
    const Dataset back = load_records(p);
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.header.dims, ds.header.dims);
    EXPECT_EQ(back.header.num_classes, ds.header.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
        EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
        EXPECT_EQ(back.samples[i].mask, ds.samples[i].mask);
        EXPECT_EQ(back.samples[i].inconsistent, ds.samples[i].inconsistent);
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            ASSERT_EQ(back.samples[i].features[m].size(), ds.samples[i].features[m].size());
            for (std::size_t k = 0; k < ds.samples[i].features[m].size(); ++k)
                EXPECT_EQ(back.samples[i].features[m][k], ds.samples[i].features[m][k]);
        }
    }
}

TEST_F(TempDir, MissingMaskedModalityIsZeroFilled) {
    const std::string p = path("masked.ndjson");
    {
        std::ofstream out(p);
        out << R"({"id":"a","label":1,"features":{"L":[1,2],"A":[3],"V":[4,5,6]}})" << "\n";
        out << R"({"id":"b","label":0,"features":{"L":[9,8],"V":[7,6,5]},"mask":[1,0,1]})"
            << "\n";
    }
    const Dataset ds = load_records(p);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_FALSE(ds.samples[1].mask[1]);
    ASSERT_EQ(ds.samples[1].features[1].size(), 1u);
    EXPECT_EQ(ds.samples[1].features[1][0], 0.0);
}

TEST_F(TempDir, MalformedLineReportsLineNumber) {
    const std::string p = path("bad.ndjson");
    {
        std::ofstream out(p);
        out << R"({"id":"a","label":1,"features":{"L":[1],"A":[2],"V":[3]}})" << "\n";
        out << "{not json\n";
    }
    try {
        load_records(p);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST_F(TempDir, ShapeDriftReportsLineNumber) {
    const std::string p = path("shape.ndjson");
    {
        std::ofstream out(p);
        out << R"({"id":"a","label":1,"features":{"L":[1,2],"A":[2],"V":[3]}})" << "\n";
        out << R"({"id":"b","label":1,"features":{"L":[1],"A":[2],"V":[3]}})" << "\n";
    }
    try {
        load_records(p);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("L"), std::string::npos) << msg;
    }
}

TEST(MaskSchedule, AnnealStaircase) {
    const MaskSchedule sched;
    EXPECT_DOUBLE_EQ(sched.min_rate(0), 0.5);
    EXPECT_DOUBLE_EQ(sched.min_rate(9), 0.5);
    EXPECT_DOUBLE_EQ(sched.min_rate(10), 0.4);
    EXPECT_DOUBLE_EQ(sched.min_rate(25), 0.3);
    EXPECT_DOUBLE_EQ(sched.min_rate(39), 0.2);
    EXPECT_DOUBLE_EQ(sched.min_rate(40), 0.1);
    EXPECT_DOUBLE_EQ(sched.min_rate(1000), 0.1);
    EXPECT_THROW(sched.min_rate(-1), std::invalid_argument);
    EXPECT_DOUBLE_EQ(anneal_min_rate(sched, 15), 0.4);
}

TEST(MaskSchedule, MonotoneNonIncreasing) {
    const MaskSchedule sched;
    double prev = sched.min_rate(0);
    for (int e = 1; e <= 60; ++e) {
        const double r = sched.min_rate(e);
        EXPECT_LE(r, prev);
        prev = r;
    }
}

TEST(MaskSchedule, ClipUpFloorsSampledRate) {
    const MaskSchedule sched;
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const double r = sched.sample_rate(0, rng);  // floor 0.5
        EXPECT_TRUE(r == 0.5 || r == 0.8) << r;
    }
    bool saw_low = false;
    for (int i = 0; i < 200; ++i) saw_low = saw_low || sched.sample_rate(40, rng) == 0.2;
    EXPECT_TRUE(saw_low);
}

TEST(MaskSchedule, FilterModeDropsLowRates) {
    MaskSchedule sched;
    sched.floor_mode = FloorMode::filter;
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const double r = sched.sample_rate(0, rng);
        EXPECT_TRUE(r == 0.5 || r == 0.8) << r;
    }
}

std::vector<Sample> uniform_batch(std::size_t n) {
    std::vector<Sample> batch(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < kNumModalities; ++m) batch[i].features[m] = {0.0};
    return batch;
}

TEST(ApplyMask, ZeroRateDropsNothing) {
    auto batch = uniform_batch(50);
    Rng rng(1);
    const MaskStats stats = apply_mask(batch, 0.0, rng);
    EXPECT_EQ(stats.raw_drops, 0u);
    EXPECT_EQ(stats.guard_retained, 0u);
    for (const Sample& s : batch)
        for (bool m : s.mask) EXPECT_TRUE(m);
}

TEST(ApplyMask, FullRateRetainsExactlyOneModality) {
    auto batch = uniform_batch(200);
    batch[0].mask = {false, true, false};  // single-modality sample keeps its one slot
    Rng rng(2);
    const MaskStats stats = apply_mask(batch, 1.0, rng);
    EXPECT_EQ(stats.guard_retained, batch.size());
    for (const Sample& s : batch) {
        int kept = 0;
        for (bool m : s.mask) kept += m ? 1 : 0;
        EXPECT_EQ(kept, 1);
    }
    EXPECT_TRUE(batch[0].mask[1]);
}

TEST(ApplyMask, EmpiricalRateMatchesBernoulliMechanism) {
    const std::size_t n = 100000;
    auto batch = uniform_batch(n);
    Rng rng(3);
    const MaskStats stats = apply_mask(batch, 0.5, rng);
    const double raw_rate =
        static_cast<double>(stats.raw_drops) / static_cast<double>(3 * n);
    EXPECT_GE(raw_rate, 0.49);
    EXPECT_LE(raw_rate, 0.51);
    // The guard fires when all three Bernoulli draws drop: probability 1/8.
    const double guard_rate =
        static_cast<double>(stats.guard_retained) / static_cast<double>(n);
    EXPECT_NEAR(guard_rate, 0.125, 3.0 * std::sqrt(0.125 * 0.875 / n));
    // Availability after the guard is correspondingly higher than 1 - p.
    std::size_t avail = 0;
    for (const Sample& s : batch)
        for (bool m : s.mask) avail += m ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(avail) / static_cast<double>(3 * n),
                0.5 + 0.125 / 3.0, 0.01);
}

TEST(TaskMetrics, HandComputedCase) {
    // classes=7, midpoint 3; sample 1 is a true neutral and leaves the binary set.
    const std::vector<int> truth = {0, 3, 6, 5};
    const std::vector<int> pred = {0, 0, 5, 2};
    const Metrics m = task_metrics(pred, truth, 7);
    EXPECT_DOUBLE_EQ(m.acc7, 0.25);
    EXPECT_NEAR(m.acc2, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(m.n, 4u);
}

TEST(TaskMetrics, PerfectPrediction) {
    const std::vector<int> truth = {0, 1, 2, 3, 4, 5, 6};
    const Metrics m = task_metrics(truth, truth, 7);
    EXPECT_DOUBLE_EQ(m.acc7, 1.0);
    EXPECT_DOUBLE_EQ(m.acc2, 1.0);
    EXPECT_DOUBLE_EQ(m.f1, 1.0);
}

TEST(TaskMetrics, SizeMismatchThrows) {
    EXPECT_THROW(task_metrics({1}, {1, 2}, 7), std::invalid_argument);
}

}  // namespace
}  // namespace ecnet
