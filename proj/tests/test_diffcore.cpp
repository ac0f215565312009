#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "advkit/gradcheck.hpp"
#include "advkit/graph.hpp"

using namespace advkit;
using namespace advkit::diff;

namespace {

Tensor64 random_input(const std::vector<int64_t>& shape, uint64_t seed) {
    Tensor64 x(shape);
    Rng rng(seed);
    for (auto& v : x.data) v = rng.normal();
    return x;
}

GradCheckReport check(const std::vector<LayerSpec>& specs, InputSig sig, uint64_t seed,
                      CheckLoss loss = {}, int batch = 2) {
    Graph64 g = Graph64::build(specs, sig, seed);
    g.set_mode(Mode::Eval);
    const Tensor64 x = random_input({batch, sig.channels, sig.height, sig.width},
                                    derive_seed(seed, "input"));
    GradCheckOptions opt;
    opt.seed = seed;
    return finite_diff_check(g, x, loss, opt);
}

}  // namespace

TEST_CASE("identity 1x1 conv reproduces its input") {
    Conv2DSpec conv;
    conv.out_channels = 1;
    Graph g = Graph::build({conv}, {1, 4, 8}, 7);
    auto params = g.parameters();
    std::fill(params[0]->data.begin(), params[0]->data.end(), 1.0f);  // 1x1 kernel
    std::fill(params[1]->data.begin(), params[1]->data.end(), 0.0f);  // bias
    Tensor x({2, 1, 4, 8});
    Rng rng(3);
    for (auto& v : x.data) v = float(rng.normal());
    Tape tape;
    const Tensor y = g.forward(x, tape);
    REQUIRE(y.shape == x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("average pooling of a constant input is that constant") {
    PoolSpec pool;
    pool.kind = PoolKind::Avg;
    pool.wh = 1;
    pool.ww = 4;
    Graph g = Graph::build({pool}, {1, 2, 16}, 0);
    Tensor x = Tensor::full({1, 1, 2, 16}, 3.25f);
    Tape tape;
    const Tensor y = g.forward(x, tape);
    CHECK(y.shape == std::vector<int64_t>{1, 1, 2, 4});
    for (float v : y.data) CHECK(v == doctest::Approx(3.25f));
}

TEST_CASE("terminal softmax rows sum to one for random weights") {
    std::vector<LayerSpec> specs{FlattenSpec{}, DenseSpec{5}, ActivationSpec{Act::Softmax}};
    Graph g = Graph::build(specs, {1, 4, 8}, 11);
    Tensor x({3, 1, 4, 8});
    Rng rng(5);
    for (auto& v : x.data) v = float(rng.normal());
    Tape tape;
    const Tensor y = g.forward(x, tape);
    for (int64_t i = 0; i < 3; ++i) {
        double sum = 0;
        for (int64_t j = 0; j < 5; ++j) {
            sum += y.at2(i, j);
            CHECK(y.at2(i, j) >= 0.0f);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("dense gradient with J = sum of outputs equals weight column sums") {
    std::vector<LayerSpec> specs{FlattenSpec{}, DenseSpec{3}};
    Graph64 g = Graph64::build(specs, {1, 1, 4}, 21);
    g.set_mode(Mode::Eval);
    const Tensor64 x = random_input({1, 1, 1, 4}, 9);
    Tape64 tape;
    const Tensor64 y = g.forward(x, tape);
    Tensor64 gy = Tensor64::full(y.shape, 1.0);
    const auto bp = g.backward(gy, tape);
    const Tensor64* w = g.parameters()[0];  // [3 x 4]
    for (int64_t k = 0; k < 4; ++k) {
        double colsum = 0;
        for (int64_t o = 0; o < 3; ++o) colsum += w->at2(o, k);
        CHECK(bp.input_grad.data[size_t(k)] == doctest::Approx(colsum).epsilon(1e-12));
    }
}

TEST_CASE("square activation with J = sum gives gradient 2x") {
    std::vector<LayerSpec> specs{ActivationSpec{Act::Square}};
    Graph64 g = Graph64::build(specs, {1, 2, 4}, 0);
    g.set_mode(Mode::Eval);
    const Tensor64 x = random_input({1, 1, 2, 4}, 13);
    Tape64 tape;
    const Tensor64 y = g.forward(x, tape);
    const auto bp = g.backward(Tensor64::full(y.shape, 1.0), tape);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(bp.input_grad.data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-12));
}

TEST_CASE("random 3-layer graph matches central finite differences") {
    Conv2DSpec conv;
    conv.out_channels = 6;
    conv.kh = 1;
    conv.kw = 5;
    std::vector<LayerSpec> specs{conv, ActivationSpec{Act::Elu}, FlattenSpec{}, DenseSpec{3}};
    const auto report = check(specs, {1, 4, 32}, 42);
    CHECK(report.max_rel_err <= 1e-5);
    CHECK(report.coords_checked > 0);
}

TEST_CASE("finite differences cover every layer type") {
    const InputSig sig{1, 4, 32};
    Conv2DSpec grouped;
    grouped.out_channels = 8;
    grouped.kh = 1;
    grouped.kw = 7;
    grouped.groups = 4;
    grouped.pad = Padding::same(1, 7);
    Conv2DSpec spatial;
    spatial.out_channels = 8;
    spatial.kh = 4;
    spatial.kw = 1;

    SUBCASE("grouped conv, batchnorm (eval), elu, max pool, dense") {
        Conv2DSpec lead;
        lead.out_channels = 4;
        lead.kh = 1;
        lead.kw = 3;
        std::vector<LayerSpec> specs{lead,
                                     grouped,
                                     BatchNormSpec{},
                                     ActivationSpec{Act::Elu},
                                     PoolSpec{PoolKind::Max, 1, 3, 1, 3},
                                     FlattenSpec{},
                                     DenseSpec{4}};
        CHECK(check(specs, sig, 1).max_rel_err <= 1e-5);
    }
    SUBCASE("spatial conv, square, avg pool, log, dense") {
        std::vector<LayerSpec> specs{spatial,
                                     ActivationSpec{Act::Square},
                                     PoolSpec{PoolKind::Avg, 1, 8, 1, 4},
                                     ActivationSpec{Act::Log},
                                     FlattenSpec{},
                                     DenseSpec{2}};
        CHECK(check(specs, sig, 2).max_rel_err <= 1e-5);
    }
    SUBCASE("relu and softmax") {
        std::vector<LayerSpec> specs{ActivationSpec{Act::Relu}, FlattenSpec{}, DenseSpec{4},
                                     ActivationSpec{Act::Softmax}};
        CHECK(check(specs, sig, 3).max_rel_err <= 1e-5);
    }
    SUBCASE("dropout is identity in eval mode") {
        std::vector<LayerSpec> specs{DropoutSpec{0.5}, FlattenSpec{}, DenseSpec{3}};
        CHECK(check(specs, sig, 4).max_rel_err <= 1e-5);
    }
    SUBCASE("channel map and stft magnitude") {
        std::vector<LayerSpec> specs{ChannelMapSpec{3}, StftSpec{16, 8}, FlattenSpec{},
                                     DenseSpec{2}};
        CHECK(check(specs, sig, 5).max_rel_err <= 1e-4);
    }
    SUBCASE("cross-entropy loss path") {
        std::vector<LayerSpec> specs{grouped, ActivationSpec{Act::Elu}, FlattenSpec{},
                                     DenseSpec{3}};
        Conv2DSpec lead;
        lead.out_channels = 4;
        lead.kh = 1;
        lead.kw = 3;
        specs.insert(specs.begin(), lead);
        CheckLoss loss;
        loss.kind = CheckLoss::Kind::CrossEntropy;
        loss.labels = {0, 2};
        loss.class_weights = {0.5, 1.0, 2.0};
        CHECK(check(specs, sig, 6, loss).max_rel_err <= 1e-5);
    }
}

TEST_CASE("backward of a*J scales gradients by a") {
    Conv2DSpec conv;
    conv.out_channels = 4;
    conv.kh = 2;
    conv.kw = 3;
    std::vector<LayerSpec> specs{conv, ActivationSpec{Act::Elu}, FlattenSpec{}, DenseSpec{3}};
    Graph g = Graph::build(specs, {1, 4, 16}, 17);
    g.set_mode(Mode::Eval);
    Tensor x({2, 1, 4, 16});
    Rng rng(23);
    for (auto& v : x.data) v = float(rng.normal());
    Tape tape;
    const Tensor y = g.forward(x, tape);
    const float a = 3.5f;
    const auto bp1 = g.backward(Tensor::full(y.shape, 1.0f), tape);
    const auto bp2 = g.backward(Tensor::full(y.shape, a), tape);
    for (size_t i = 0; i < bp1.input_grad.data.size(); ++i)
        CHECK(bp2.input_grad.data[i] ==
              doctest::Approx(a * bp1.input_grad.data[i]).epsilon(1e-6));
    for (size_t t = 0; t < bp1.param_grads.size(); ++t)
        for (size_t i = 0; i < bp1.param_grads[t].data.size(); ++i)
            CHECK(bp2.param_grads[t].data[i] ==
                  doctest::Approx(a * bp1.param_grads[t].data[i]).epsilon(1e-6));
}

TEST_CASE("shape closure: accepted stacks never raise shape errors at run time") {
    Rng rng(99);
    int built = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int c = 2 + int(rng.index(4));
        const int t = 8 + int(rng.index(48));
        std::vector<LayerSpec> specs;
        const int n_layers = 1 + int(rng.index(5));
        for (int l = 0; l < n_layers; ++l) {
            switch (rng.index(5)) {
                case 0: {
                    Conv2DSpec conv;
                    conv.out_channels = 1 + int(rng.index(8));
                    conv.kh = 1;
                    conv.kw = 1 + int(rng.index(9));
                    specs.push_back(conv);
                    break;
                }
                case 1: specs.push_back(ActivationSpec{Act::Elu}); break;
                case 2: specs.push_back(PoolSpec{PoolKind::Avg, 1, 1 + int(rng.index(4)), 0, 0});
                    break;
                case 3: specs.push_back(BatchNormSpec{}); break;
                case 4: specs.push_back(DropoutSpec{0.25}); break;
            }
        }
        specs.push_back(FlattenSpec{});
        specs.push_back(DenseSpec{2});
        Graph g;
        try {
            g = Graph::build(specs, {1, c, t}, uint64_t(trial));
        } catch (const std::invalid_argument&) {
            continue;  // rejected at build time; nothing to check
        }
        ++built;
        g.set_mode(Mode::Eval);
        Tensor x({2, 1, c, t});
        for (auto& v : x.data) v = float(rng.normal());
        Tape tape;
        const Tensor y = g.forward(x, tape);
        const auto bp = g.backward(Tensor::full(y.shape, 1.0f), tape);
        CHECK(bp.input_grad.shape == x.shape);
    }
    CHECK(built > 10);
}

TEST_CASE("finite_diff_check flags a corrupted layer gradient") {
    Conv2DSpec conv;
    conv.out_channels = 3;
    conv.kh = 1;
    conv.kw = 3;
    std::vector<LayerSpec> specs{conv, FlattenSpec{}, DenseSpec{2}};
    Graph64 g = Graph64::build(specs, {1, 2, 12}, 31);
    g.set_mode(Mode::Eval);
    const Tensor64 x = random_input({1, 1, 2, 12}, 32);
    Tape64 tape;
    const Tensor64 out = g.forward(x, tape);
    CheckLoss loss;
    GradCheckOptions opt;
    opt.seed = 33;
    opt.param_sample_frac = 1.0;
    {
        Rng rng(derive_seed(opt.seed, "gradcheck-projection"));
        loss.projection.resize(size_t(out.numel()));
        for (auto& v : loss.projection) v = rng.uniform(-1.0, 1.0);
    }
    const Tensor64 gout = check_loss_grad(out, loss);
    auto bp = g.backward(gout, tape);

    // Clean gradients pass.
    CHECK(fd_compare(g, x, loss, bp.input_grad, bp.param_grads, opt).max_rel_err <= 1e-5);

    // Doubling the dense layer's weight gradient must be caught and located.
    for (auto& v : bp.param_grads[2].data) v *= 2.0;
    const auto report = fd_compare(g, x, loss, bp.input_grad, bp.param_grads, opt);
    CHECK(report.max_rel_err > 1e-3);
    CHECK(report.worst.is_param);
    CHECK(report.worst.tensor_index == 2);
    CHECK(g.param_layer(report.worst.tensor_index) == 2);
}

TEST_CASE("gradient check rejects an empty batch") {
    std::vector<LayerSpec> specs{FlattenSpec{}, DenseSpec{2}};
    Graph64 g = Graph64::build(specs, {1, 2, 4}, 0);
    g.set_mode(Mode::Eval);
    Tensor64 x({0, 1, 2, 4});
    CHECK_THROWS_AS(finite_diff_check(g, x, {}), std::invalid_argument);
}

TEST_CASE("backward before forward is an error") {
    std::vector<LayerSpec> specs{FlattenSpec{}, DenseSpec{2}};
    Graph g = Graph::build(specs, {1, 2, 4}, 0);
    Tape tape;
    Tensor gy({1, 2});
    CHECK_THROWS_AS(g.backward(gy, tape), std::runtime_error);
}

TEST_CASE("build-time validation") {
    SUBCASE("groups must divide channel counts") {
        Conv2DSpec conv;
        conv.out_channels = 6;
        conv.groups = 4;
        CHECK_THROWS_AS(Graph::build({conv}, {4, 2, 8}, 0), std::invalid_argument);
    }
    SUBCASE("pool window must fit") {
        CHECK_THROWS_AS(Graph::build({PoolSpec{PoolKind::Max, 1, 32, 0, 0}}, {1, 2, 8}, 0),
                        std::invalid_argument);
    }
    SUBCASE("log requires a squared input path") {
        CHECK_THROWS_AS(Graph::build({ActivationSpec{Act::Log}}, {1, 2, 8}, 0),
                        std::invalid_argument);
        std::vector<LayerSpec> ok{ActivationSpec{Act::Square},
                                  PoolSpec{PoolKind::Avg, 1, 2, 0, 0}, ActivationSpec{Act::Log}};
        CHECK_NOTHROW(Graph::build(ok, {1, 2, 8}, 0));
    }
    SUBCASE("kernel larger than padded extent") {
        Conv2DSpec conv;
        conv.out_channels = 2;
        conv.kh = 1;
        conv.kw = 64;
        CHECK_THROWS_AS(Graph::build({conv}, {1, 2, 8}, 0), std::invalid_argument);
    }
}

TEST_CASE("log activation guards small inputs") {
    std::vector<LayerSpec> specs{ActivationSpec{Act::Square}, ActivationSpec{Act::Log}};
    Graph g = Graph::build(specs, {1, 1, 4}, 0);
    Tensor x({1, 1, 1, 4});  // zeros: square -> 0, log must clamp
    Tape tape;
    const Tensor y = g.forward(x, tape);
    for (float v : y.data) CHECK(v == doctest::Approx(std::log(1e-7)).epsilon(1e-6));
}

TEST_CASE("train-mode forward is deterministic under a fixed dropout seed") {
    std::vector<LayerSpec> specs{DropoutSpec{0.5}, FlattenSpec{}, DenseSpec{2}};
    Graph g = Graph::build(specs, {1, 2, 8}, 5);
    Tensor x({4, 1, 2, 8});
    Rng rng(6);
    for (auto& v : x.data) v = float(rng.normal());
    auto run = [&](uint64_t seed) {
        Tape tape;
        tape.train = true;
        tape.dropout_seed = seed;
        return g.forward(x, tape);
    };
    const Tensor a = run(77), b = run(77), c = run(78);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
}

TEST_CASE("batchnorm running statistics feed eval mode") {
    std::vector<LayerSpec> specs{BatchNormSpec{}};
    Graph g = Graph::build(specs, {2, 2, 4}, 0);
    Tensor x({8, 2, 2, 4});
    Rng rng(8);
    for (auto& v : x.data) v = float(2.0 + 3.0 * rng.normal());
    for (int i = 0; i < 50; ++i) {
        Tape tape;
        tape.train = true;
        g.forward(x, tape);
    }
    Tape tape;
    const Tensor y = g.forward(x, tape);  // eval: running stats
    double mean = 0;
    for (float v : y.data) mean += v;
    mean /= double(y.data.size());
    CHECK(std::abs(mean) < 0.05);  // converged running stats roughly whiten x
}

TEST_CASE("ADWT round trip reproduces bytes and forwards") {
    Conv2DSpec conv;
    conv.out_channels = 4;
    conv.kh = 2;
    conv.kw = 5;
    std::vector<LayerSpec> specs{conv, BatchNormSpec{}, ActivationSpec{Act::Elu}, FlattenSpec{},
                                 DenseSpec{3}};
    Graph g = Graph::build(specs, {1, 4, 16}, 55);
    g.set_mode(Mode::Eval);
    const std::string path1 = "adwt_test_1.bin";
    const std::string path2 = "adwt_test_2.bin";
    save_graph(g, path1);
    Graph loaded = load_graph(path1);
    save_graph(loaded, path2);

    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());

    Tensor x({2, 1, 4, 16});
    Rng rng(56);
    for (auto& v : x.data) v = float(rng.normal());
    Tape t1, t2;
    const Tensor y1 = g.forward(x, t1);
    const Tensor y2 = loaded.forward(x, t2);
    CHECK(y1.data == y2.data);
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("bad magic and truncation are load errors") {
    std::vector<LayerSpec> specs{FlattenSpec{}, DenseSpec{2}};
    Graph g = Graph::build(specs, {1, 2, 4}, 0);
    const std::string path = "adwt_test_bad.bin";
    save_graph(g, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XDWT", 4);
    }
    CHECK_THROWS_WITH_AS(load_graph(path), doctest::Contains("bad magic"), std::runtime_error);
    std::filesystem::remove(path);
}
