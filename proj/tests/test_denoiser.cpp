#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "duv/checkpoint.hpp"
#include "duv/denoiser.hpp"

using namespace duv;

TEST_CASE("time embedding") {
    SUBCASE("t = 0 alternates sin 0 / cos 0") {
        auto e = time_embedding(0, 8);
        for (std::size_t i = 0; i < e.size(); i += 2) {
            CHECK(e[i] == 0.0);
            CHECK(e[i + 1] == 1.0);
        }
    }
    SUBCASE("components stay in [-1, 1]") {
        for (int t : {1, 17, 999}) {
            for (double v : time_embedding(t, 32)) {
                CHECK(v >= -1.0);
                CHECK(v <= 1.0);
            }
        }
    }
    SUBCASE("t = 1, dim = 4 uses frequencies 1 and 1e-2") {
        auto e = time_embedding(1, 4);
        CHECK(e[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
        CHECK(e[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
        CHECK(e[2] == doctest::Approx(std::sin(0.01)).epsilon(1e-12));
        CHECK(e[3] == doctest::Approx(std::cos(0.01)).epsilon(1e-12));
        CHECK(e[0] == doctest::Approx(0.84147).epsilon(1e-4));
        CHECK(e[1] == doctest::Approx(0.54030).epsilon(1e-4));
        CHECK(e[2] == doctest::Approx(0.01000).epsilon(1e-4));
        CHECK(e[3] == doctest::Approx(0.99995).epsilon(1e-4));
    }
    SUBCASE("odd dim rejected") { CHECK_THROWS_AS(time_embedding(1, 5), ContractError); }
}

namespace {

DenoiserArch toy_arch() {
    DenoiserArch a;
    a.mode = DenoiserMode::kVector;
    a.input_shape = {1};
    a.base_channels = 32;
    a.blocks_per_level = 2;
    a.levels = 1;
    a.embed_dim = 16;
    return a;
}

NoiseSchedule toy_schedule() {
    DiffusionConfig cfg;
    cfg.steps = 50;
    cfg.beta_end = 0.3;
    return make_schedule(cfg);
}

std::vector<LabeledTensor> two_class_scalars(int n_per_class, double spread, Rng& rng) {
    std::vector<LabeledTensor> data;
    for (int c = 0; c < 2; ++c) {
        double mean = c == 0 ? -2.0 : 2.0;
        for (int i = 0; i < n_per_class; ++i) {
            data.push_back({Tensor::scalar(rng.normal(mean, spread)), c});
        }
    }
    return data;
}

}  // namespace

TEST_CASE("class embedding table") {
    DenoiserModel m(toy_arch(), 7);
    const Tensor& table = m.param("embed.class");
    CHECK(table.shape == std::vector<int>{2, 16});

    SUBCASE("lookup is a deterministic table read") {
        DenoiserModel m2(toy_arch(), 7);
        CHECK(m2.param("embed.class").data == table.data);
        Graph g;
        auto r1 = g.rows(g.value(table), {1});
        auto r2 = g.rows(g.value(table), {1});
        CHECK(g.val(r1).data == g.val(r2).data);
    }
    SUBCASE("unknown class rejected") {
        CHECK_THROWS_AS(m.predict_noise(Tensor::scalar(0.0), 0, 5), ContractError);
    }
    SUBCASE("training moves the two class rows apart") {
        NoiseSchedule sched = toy_schedule();
        Rng rng(5);
        auto data = two_class_scalars(64, 0.1, rng);
        std::vector<double> before = m.param("embed.class").data;
        TrainConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.epochs = 10;
        cfg.batch_size = 16;
        cfg.seed = 9;
        train_denoiser(m, data, cfg, sched);
        const std::vector<double>& after = m.param("embed.class").data;
        double d0 = 0, d1 = 0;
        for (int j = 0; j < 16; ++j) {
            d0 += std::abs(after[j] - before[j]);
            d1 += std::abs(after[16 + j] - before[16 + j]);
        }
        CHECK(d0 > 0.0);
        CHECK(d1 > 0.0);
        CHECK(d0 != doctest::Approx(d1).epsilon(1e-6));
    }
}

TEST_CASE("predict_noise contract and conditioning") {
    NoiseSchedule sched = toy_schedule();
    DenoiserModel m(toy_arch(), 3);
    Rng rng(4);
    auto data = two_class_scalars(64, 0.1, rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 2;
    train_denoiser(m, data, cfg, sched);

    Tensor x = Tensor::scalar(0.5);
    SUBCASE("output shape equals input shape") {
        CHECK(m.predict_noise(x, 3, 0).shape == x.shape);
    }
    SUBCASE("different t changes the output") {
        CHECK(m.predict_noise(x, 1, 0).data[0] != m.predict_noise(x, 40, 0).data[0]);
    }
    SUBCASE("different class changes the output") {
        CHECK(m.predict_noise(x, 10, 0).data[0] != m.predict_noise(x, 10, 1).data[0]);
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(m.predict_noise(Tensor::zeros({3}), 1, 0), DimensionError);
    }
}

TEST_CASE("image-mode model keeps shape and trains") {
    DenoiserArch a;
    a.mode = DenoiserMode::kImage;
    a.input_shape = {3, 8, 8};
    a.base_channels = 4;
    a.blocks_per_level = 1;
    a.levels = 2;
    a.embed_dim = 8;
    DenoiserModel m(a, 1);
    Rng rng(6);
    Tensor x = Tensor::randn({3, 8, 8}, rng);
    Tensor out = m.predict_noise(x, 5, 1);
    CHECK(out.shape == x.shape);

    std::vector<LabeledTensor> data;
    for (int i = 0; i < 4; ++i) data.push_back({Tensor::randn({3, 8, 8}, rng, 0.3), i % 2});
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    auto hist = train_denoiser(m, data, cfg, toy_schedule());
    CHECK(hist.size() == 4);
    for (double l : hist) CHECK(std::isfinite(l));
    CHECK(m.encode(x).size() == 8);  // deepest level has base*2 channels
}

TEST_CASE("train loop arithmetic and contracts") {
    NoiseSchedule sched = toy_schedule();
    SUBCASE("one epoch over one item is one step") {
        DenoiserModel m(toy_arch(), 0);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 8;
        auto hist = train_denoiser(m, {{Tensor::scalar(1.0), 0}}, cfg, sched);
        CHECK(hist.size() == 1);
        CHECK(m.trained_steps() == 1);
    }
    SUBCASE("empty dataset rejected") {
        DenoiserModel m(toy_arch(), 0);
        CHECK_THROWS_AS(train_denoiser(m, {}, TrainConfig{}, sched), ContractError);
    }
    SUBCASE("constant dataset: late-step loss falls under its start") {
        DenoiserModel m(toy_arch(), 0);
        std::vector<LabeledTensor> data(32, LabeledTensor{Tensor::scalar(1.5), 0});
        TrainConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.epochs = 200;
        cfg.batch_size = 32;
        cfg.seed = 3;
        auto hist = train_denoiser(m, data, cfg, sched);
        CHECK(hist.size() == 200);
        double head = (hist[0] + hist[1] + hist[2] + hist[3] + hist[4]) / 5;
        double tail = 0;
        for (std::size_t i = hist.size() - 5; i < hist.size(); ++i) tail += hist[i];
        tail /= 5;
        CHECK(tail < head);
    }
}

TEST_CASE("seeded training reproducibility") {
    NoiseSchedule sched = toy_schedule();
    auto run = [&] {
        Rng rng(8);
        DenoiserModel m(toy_arch(), 17);
        auto data = two_class_scalars(32, 0.1, rng);
        TrainConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.seed = 21;
        train_denoiser(m, data, cfg, sched);
        return m;
    };
    DenoiserModel a = run();
    DenoiserModel b = run();
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].second.data == b.params()[i].second.data);
    }
}

TEST_CASE("checkpoint round-trip is bit-identical") {
    NoiseSchedule sched = toy_schedule();
    DenoiserModel m(toy_arch(), 11);
    Rng rng(12);
    auto data = two_class_scalars(16, 0.1, rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    train_denoiser(m, data, cfg, sched);

    std::string path = "ckpt_test.json";
    save_checkpoint(m, path);
    DenoiserModel loaded = load_checkpoint(path);
    CHECK(loaded.trained_steps() == m.trained_steps());
    Tensor x = Tensor::scalar(0.25);
    CHECK(loaded.predict_noise(x, 7, 1).data == m.predict_noise(x, 7, 1).data);

    // saving the loaded model reproduces the file byte for byte
    std::string path2 = "ckpt_test2.json";
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("sampling determinism and edge cases") {
    NoiseSchedule sched = toy_schedule();
    DenoiserModel m(toy_arch(), 19);
    SUBCASE("n = 0 gives an empty list") {
        CHECK(sample(m, sched, 0, 0, 1).empty());
    }
    SUBCASE("same seed twice is bit-identical") {
        auto a = sample(m, sched, 1, 3, 77);
        auto b = sample(m, sched, 1, 3, 77);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
    }
    SUBCASE("chains are independent of batch grouping") {
        auto batched = sample(m, sched, 1, 3, 5);
        auto single = sample(m, sched, 1, 1, 5);
        CHECK(batched[0].data == single[0].data);
    }
}

TEST_CASE("two-class scalar toy: smoke convergence and conditional means") {
    NoiseSchedule sched = toy_schedule();
    DenoiserModel m(toy_arch(), 23);
    Rng rng(31);
    auto data = two_class_scalars(128, std::sqrt(0.1), rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 300;
    cfg.batch_size = 64;
    cfg.seed = 41;
    auto hist = train_denoiser(m, data, cfg, sched);

    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) head += hist[static_cast<std::size_t>(i)];
    for (std::size_t i = hist.size() - 10; i < hist.size(); ++i) tail += hist[i];
    CHECK(tail < 0.5 * head);

    auto benign = sample(m, sched, 0, 500, 3);
    auto malignant = sample(m, sched, 1, 500, 4);
    double mb = 0, mm = 0;
    for (const Tensor& t : benign) mb += t.data[0];
    for (const Tensor& t : malignant) mm += t.data[0];
    mb /= static_cast<double>(benign.size());
    mm /= static_cast<double>(malignant.size());
    CHECK(mb < 0.0);
    CHECK(mm > 0.0);
}
