#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ewe/model.hpp"

using namespace ewe;

TEST_CASE("build determinism and shapes") {
    ModelSpec spec = parse_model_spec("dense:16,relu,dense:10,softmax", {4, 4}, 10);
    Model a = build_model(spec, 42);
    Model b = build_model(spec, 42);
    REQUIRE(a.params.size() == b.params.size());
    for (size_t i = 0; i < a.params.size(); ++i)
        CHECK(std::memcmp(a.params[i].ptr(), b.params[i].ptr(),
                          sizeof(float) * a.params[i].numel()) == 0);
    Model c = build_model(spec, 43);
    CHECK(std::memcmp(a.params[0].ptr(), c.params[0].ptr(),
                      sizeof(float) * a.params[0].numel()) != 0);

    // dense 784 -> 10: weight matrix 784x10 plus bias 10
    ModelSpec d = parse_model_spec("dense:10,softmax", {784}, 10);
    Model m = build_model(d, 1);
    CHECK(m.params[0].shape == Shape{784, 10});
    CHECK(m.params[1].shape == Shape{10});
    CHECK(d.param_count() == 784 * 10 + 10);
}

TEST_CASE("the digit-task CNN builds with the analytic parameter count") {
    ModelSpec spec = mnist_cnn_spec();
    // conv 32@5x5 on 1 channel, conv 64@3x3 on 32, dense 3136->128, dense 128->10
    const long expected = (32 * 1 * 5 * 5 + 32) + (64 * 32 * 3 * 3 + 64) +
                          (64 * 7 * 7 * 128 + 128) + (128 * 10 + 10);
    CHECK(spec.param_count() == expected);
    CHECK(spec.snnl_layers.size() == 3);
    Model m = build_model(spec, 7);
    long total = 0;
    for (const Tensor& p : m.params) total += p.numel();
    CHECK(total == expected);
}

TEST_CASE("spec validation lists the first violation") {
    ModelSpec bad = parse_model_spec("dense:16,relu,dense:10,softmax", {4, 4}, 10);
    bad.num_classes = 7;  // head width no longer matches
    CHECK_THROWS_AS(bad.validate(), ContractError);

    ModelSpec no_head;
    no_head.input_shape = {8};
    no_head.num_classes = 2;
    no_head.layers.push_back({LayerKind::Dense, 4});
    CHECK_THROWS_AS(no_head.validate(), ContractError);

    CHECK_THROWS_AS(parse_model_spec("dense:10,softmax,relu", {8}, 10), ContractError);
    CHECK_THROWS_AS(parse_model_spec("pool,dense:2,softmax", {8}, 2), ContractError);

    ModelSpec bad_snnl = parse_model_spec("dense:4,relu,dense:2,softmax", {8}, 2);
    bad_snnl.snnl_layers = {1, 1};
    CHECK_THROWS_AS(bad_snnl.validate(), ContractError);
}

TEST_CASE("forward contracts and zero-weight softmax") {
    ModelSpec spec = parse_model_spec("dense:10,softmax", {6}, 10);
    Model m = build_model(spec, 3);
    for (Tensor& p : m.params) std::fill(p.data->begin(), p.data->end(), 0.f);
    Tensor batch = full({4, 6}, 0.3f);
    ForwardResult fr = forward_model(nullptr, m, batch);
    Tensor probs = softmax_rows(nullptr, fr.logits);
    for (long i = 0; i < probs.numel(); ++i)
        CHECK((*probs.data)[i] == doctest::Approx(0.1).epsilon(1e-6));

    Tensor wrong = full({4, 7}, 0.3f);
    CHECK_THROWS_AS(forward_model(nullptr, m, wrong), ContractError);
}

TEST_CASE("activation capture matches snnl layer list") {
    ModelSpec spec =
        parse_model_spec("dense:12,relu,snnl,dense:8,relu,snnl,dense:3,softmax", {5}, 3);
    Model m = build_model(spec, 9);
    Tensor batch = full({7, 5}, 0.1f);
    ForwardResult fr = forward_model(nullptr, m, batch);
    REQUIRE(fr.snnl_acts.size() == spec.snnl_layers.size());
    CHECK(fr.snnl_acts[0].shape == Shape{7, 12});
    CHECK(fr.snnl_acts[1].shape == Shape{7, 8});
    CHECK(fr.logits.shape == Shape{7, 3});
}

TEST_CASE("the hand-built 2d network reproduces sigma(x1+x2-1)") {
    // weights: y = sigma(1*R(x1) + 2*R(x2) - 1*R(x2+2) + 1)
    ModelSpec spec;
    spec.input_shape = {2};
    spec.num_classes = 2;
    spec.layers.push_back({LayerKind::Dense, 3});
    spec.layers.push_back({LayerKind::Relu});
    spec.layers.push_back({LayerKind::Dense, 1});
    spec.layers.push_back({LayerKind::Sigmoid});
    Model m = build_model(spec, 1);
    *m.params[0].data = {1.f, 0.f, 0.f,   // x1 row: weights into the 3 hidden units
                         0.f, 1.f, 1.f};  // x2 row
    *m.params[1].data = {0.f, 0.f, 2.f};
    *m.params[2].data = {1.f, 2.f, -1.f};
    *m.params[3].data = {1.f};

    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const float x1 = static_cast<float>(rng.uniform());
        const float x2 = static_cast<float>(rng.uniform());
        Tensor in({1, 2}, {x1, x2});
        ForwardResult fr = forward_model(nullptr, m, in);
        const double expect = x1 + x2 - 1.0;  // pre-sigmoid
        CHECK(fr.logits.value() == doctest::Approx(expect).epsilon(1e-5).scale(1.0));
    }
    // watermark behavior: class 1 whenever x2 = -1
    for (float x1 = 0.1f; x1 < 0.95f; x1 += 0.1f) {
        Tensor in({1, 2}, {x1, -1.f});
        CHECK(predict_labels(m, in)[0] == 1);
    }
}

TEST_CASE("evaluate contracts and chance level") {
    ModelSpec spec = parse_model_spec("dense:10,softmax", {6}, 10);
    Model m = build_model(spec, 3);
    for (Tensor& p : m.params) std::fill(p.data->begin(), p.data->end(), 0.f);
    (*m.params[1].data)[4] = 1.f;  // constant predictor: class 4

    Dataset all4;
    all4.inputs = full({50, 6}, 0.5f);
    all4.labels.assign(50, 4);
    all4.num_classes = 10;
    CHECK(evaluate(m, all4) == doctest::Approx(1.0));

    Rng rng(8);
    Dataset uniform;
    uniform.inputs = full({2000, 6}, 0.5f);
    for (int i = 0; i < 2000; ++i) uniform.labels.push_back(static_cast<int>(rng.below(10)));
    uniform.num_classes = 10;
    CHECK(evaluate(m, uniform) == doctest::Approx(0.1).epsilon(0.25));

    Dataset empty;
    empty.num_classes = 10;
    empty.inputs = zeros({0, 6});
    CHECK_THROWS_AS(evaluate(m, empty), ContractError);
}

TEST_CASE("dropout trains stochastically but evaluates deterministically") {
    ModelSpec spec = parse_model_spec("dense:16,relu,drop:0.5,dense:3,softmax", {6}, 3);
    Model m = build_model(spec, 4);
    Tensor batch = full({5, 6}, 0.4f);

    ForwardResult a = forward_model(nullptr, m, batch);
    ForwardResult b = forward_model(nullptr, m, batch);
    CHECK(std::memcmp(a.logits.ptr(), b.logits.ptr(), sizeof(float) * a.logits.numel()) == 0);

    m.training = true;
    Rng r1(5), r2(5), r3(6);
    ForwardResult c = forward_model(nullptr, m, batch, &r1);
    ForwardResult d = forward_model(nullptr, m, batch, &r2);
    ForwardResult e = forward_model(nullptr, m, batch, &r3);
    CHECK(std::memcmp(c.logits.ptr(), d.logits.ptr(), sizeof(float) * c.logits.numel()) == 0);
    CHECK(std::memcmp(c.logits.ptr(), e.logits.ptr(), sizeof(float) * c.logits.numel()) != 0);
    CHECK_THROWS_AS(forward_model(nullptr, m, batch), ContractError);
}

TEST_CASE("model file round trip is byte-identical") {
    ModelSpec spec =
        parse_model_spec("conv:4x3,relu,snnl,pool,dense:6,relu,dense:3,softmax", {8, 8}, 3);
    Model m = build_model(spec, 77);
    const std::string p1 = "/tmp/ewe_test_model1.ewem", p2 = "/tmp/ewe_test_model2.ewem";
    save_model(m, p1);
    Model loaded = load_model(p1);
    save_model(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // header(12) + spec block + 4 bytes per parameter
    const long spec_block = 4 + 2 * 4       // input rank + dims
                            + 4             // num classes
                            + 4 + static_cast<long>(spec.layers.size()) * 24  // layer records
                            + 4 + static_cast<long>(spec.snnl_layers.size()) * 4;
    CHECK(static_cast<long>(b1.size()) == 12 + spec_block + 4 * spec.param_count());

    // evaluate() is preserved exactly
    Dataset probe = gen_synthetic(3, 5, 8, 3);
    CHECK(evaluate(m, probe) == evaluate(loaded, probe));

    SUBCASE("corrupted magic") {
        std::ofstream bad(p1, std::ios::binary);
        bad.write("NOPE", 4);
        bad.close();
        try {
            load_model(p1);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 0);
        }
    }
    SUBCASE("truncation reports an offset") {
        std::ofstream out(p2, std::ios::binary | std::ios::trunc);
        out.write(b1.data(), b1.size() - 9);
        out.close();
        CHECK_THROWS_AS(load_model(p2), FormatError);
    }
}
