#include <cstring>

#include "doctest.h"
#include "ewe/rng.hpp"
#include "ewe/tensor.hpp"

using namespace ewe;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = zeros(s);
    for (long i = 0; i < t.numel(); ++i)
        (*t.data)[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// keeps relu/maxpool inputs away from their kinks so finite differences are valid
Tensor random_tensor_off_kink(Shape s, Rng& rng) {
    Tensor t = zeros(s);
    for (long i = 0; i < t.numel(); ++i) {
        double v = rng.uniform(0.15, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        v += i * 1e-4;  // breaks pooling ties
        (*t.data)[i] = static_cast<float>(v);
    }
    return t;
}

}  // namespace

TEST_CASE("primitive forward values") {
    Tensor r = relu(nullptr, Tensor({3}, {-1.f, 0.f, 2.f}));
    CHECK((*r.data)[0] == 0.f);
    CHECK((*r.data)[1] == 0.f);
    CHECK((*r.data)[2] == 2.f);

    Tensor s = sigmoid(nullptr, Tensor({1}, {0.f}));
    CHECK(s.value() == doctest::Approx(0.5));

    Tensor ones = full({1, 1, 3, 3}, 1.f);
    Tensor k = full({1, 1, 3, 3}, 1.f);
    Tensor out = conv2d(nullptr, ones, k, Tensor(), Padding::Valid);
    CHECK(out.numel() == 1);
    CHECK(out.value() == doctest::Approx(9.0));
}

TEST_CASE("backward basics") {
    // d/dx (x*x) at x=3 is 6
    Tensor x({1}, {3.f});
    x.set_requires_grad(true);
    Tape t;
    Tensor y = mul(&t, x, x);
    t.backward(y);
    CHECK((*x.grad)[0] == doctest::Approx(6.0));

    // d/dx sum(relu(x)) at [-1,2] is [0,1]
    Tensor v({2}, {-1.f, 2.f});
    v.set_requires_grad(true);
    Tape t2;
    Tensor loss = reduce_sum(&t2, relu(&t2, v));
    t2.backward(loss);
    CHECK((*v.grad)[0] == 0.f);
    CHECK((*v.grad)[1] == 1.f);
}

TEST_CASE("backward contract errors") {
    Tensor x({2}, {1.f, 2.f});
    x.set_requires_grad(true);
    Tape t;
    Tensor y = mul(&t, x, x);  // non-scalar
    CHECK_THROWS_AS(t.backward(y), ContractError);

    Tape empty;
    Tensor s({1}, {1.f});
    CHECK_THROWS_AS(empty.backward(s), ContractError);
}

TEST_CASE("shape contract errors name the primitive") {
    Tensor a({2, 3}, std::vector<float>(6, 1.f));
    Tensor b({2, 2}, std::vector<float>(4, 1.f));
    try {
        matmul(nullptr, a, b);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
    }
    CHECK_THROWS_AS(add(nullptr, a, b), ContractError);
    CHECK_THROWS_AS(add_bias(nullptr, a, Tensor({2}, {1.f, 2.f})), ContractError);
}

TEST_CASE("grad_check on quadratics is clean and catches corruption") {
    Rng rng(7);
    Tensor x = random_tensor({6}, rng);
    auto sumsq = [](Tape* t, const Tensor& z) { return reduce_sum(t, mul(t, z, z)); };
    // central differences are exact for quadratics; h can be large
    auto res = grad_check(sumsq, x, 1.0 / 16, 1e-4);
    CHECK(res.pass);

    // same forward, backward deliberately doubles coordinate 0
    auto corrupted = [](Tape* t, const Tensor& z) {
        Tensor out = zeros({1});
        double acc = 0;
        for (long i = 0; i < z.numel(); ++i) acc += (*z.data)[i] * (*z.data)[i];
        (*out.data)[0] = static_cast<float>(acc);
        if (t && z.requires_grad) {
            out.set_requires_grad(true);
            auto zd = z.data, zg = z.grad, og = out.grad;
            t->record(
                [zd, zg, og] {
                    for (size_t i = 0; i < zd->size(); ++i)
                        (*zg)[i] += (*og)[0] * 2.f * (*zd)[i] * (i == 0 ? 2.f : 1.f);
                },
                {og, zg});
        }
        return out;
    };
    auto bad = grad_check(corrupted, x, 1.0 / 16, 1e-4);
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst_index == 0);

    CHECK_THROWS_AS(grad_check(sumsq, x, -1.0, 1e-4), ContractError);
    CHECK_THROWS_AS(grad_check(sumsq, x, 1e-3, 0.0), ContractError);
}

TEST_CASE("gradients of every primitive match finite differences") {
    Rng rng(42);
    const double h = 1e-3, tol = 1e-3;
    const int trials = 10;

    for (int trial = 0; trial < trials; ++trial) {
        CAPTURE(trial);
        {
            Tensor x = random_tensor_off_kink({3, 4}, rng);
            auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, relu(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({2, 5}, rng);
            auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, sigmoid(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({7}, rng);
            auto f = [](Tape* t, const Tensor& z) { return reduce_mean(t, exp_(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({6}, rng, 0.2, 2.0);
            auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, log_(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({5}, rng, 0.3, 2.0);
            auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, recip(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({3, 4}, rng);
            Tensor w = random_tensor({4, 2}, rng);
            auto f = [w](Tape* t, const Tensor& z) {
                Tensor y = matmul(t, z, w);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(f, x, h, tol).pass);
            auto fw = [x](Tape* t, const Tensor& z) {
                Tensor y = matmul(t, x, z);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(fw, w, h, tol).pass);
        }
        {
            Tensor b = random_tensor({4}, rng);
            Tensor x = random_tensor({3, 4}, rng);
            auto f = [b](Tape* t, const Tensor& z) {
                return reduce_sum(t, sigmoid(t, add_bias(t, z, b)));
            };
            CHECK(grad_check(f, x, h, tol).pass);
            auto fb = [x](Tape* t, const Tensor& z) {
                return reduce_sum(t, sigmoid(t, add_bias(t, x, z)));
            };
            CHECK(grad_check(fb, b, h, tol).pass);
        }
        {
            Tensor x = random_tensor({2, 1, 6, 6}, rng);
            Tensor k = random_tensor({2, 1, 3, 3}, rng, -0.5, 0.5);
            Tensor bias = random_tensor({2}, rng);
            auto f = [k, bias](Tape* t, const Tensor& z) {
                Tensor y = conv2d(t, z, k, bias, Padding::Same);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(f, x, h, tol).pass);
            auto fk = [x, bias](Tape* t, const Tensor& z) {
                Tensor y = conv2d(t, x, z, bias, Padding::Valid);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(fk, k, h, tol).pass);
        }
        {
            Tensor x = random_tensor_off_kink({2, 2, 4, 4}, rng);
            auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, maxpool2(t, z)); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({4, 3}, rng);
            auto f = [](Tape* t, const Tensor& z) {
                Tensor p = softmax_rows(t, z);
                return reduce_sum(t, mul(t, p, p));
            };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({5, 4}, rng);
            std::vector<int> labels{0, 3, 1, 2, 3};
            auto f = [labels](Tape* t, const Tensor& z) { return ce_logits(t, z, labels); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({6}, rng);
            std::vector<float> targets{1.f, 0.f, 1.f, 1.f, 0.f, 0.f};
            auto f = [targets](Tape* t, const Tensor& z) { return bce_logits(t, z, targets); };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({5, 3}, rng);
            auto f = [](Tape* t, const Tensor& z) {
                Tensor d = pairwise_sqdist(t, z);
                return reduce_mean(t, mul(t, d, d));
            };
            CHECK(grad_check(f, x, h, tol).pass);
        }
        {
            Tensor x = random_tensor({4, 6}, rng, 0.0, 1.0);
            Tensor mask = random_tensor({6}, rng, 0.1, 0.9);
            Tensor pat = random_tensor({6}, rng, 0.0, 1.0);
            auto fm = [x, pat](Tape* t, const Tensor& z) {
                Tensor y = mask_blend(t, x, z, pat);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(fm, mask, h, tol).pass);
            auto fp = [x, mask](Tape* t, const Tensor& z) {
                Tensor y = mask_blend(t, x, mask, z);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(fp, pat, h, tol).pass);
        }
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b2 = random_tensor({2, 4}, rng);
            auto f = [b2](Tape* t, const Tensor& z) {
                Tensor y = concat_rows(t, z, b2);
                return reduce_sum(t, mul(t, y, y));
            };
            CHECK(grad_check(f, a, h, tol).pass);
        }
        {
            Tensor x = random_tensor({4, 3}, rng);
            Tensor s = random_tensor({1}, rng, 0.5, 2.0);
            auto f = [s](Tape* t, const Tensor& z) {
                return reduce_sum(t, mul(t, scale_by(t, z, s), z));
            };
            CHECK(grad_check(f, x, h, tol).pass);
            auto fs = [x](Tape* t, const Tensor& z) {
                return reduce_sum(t, mul(t, scale_by(t, x, z), x));
            };
            CHECK(grad_check(fs, s, h, tol).pass);
        }
        {
            Tensor x = random_tensor({3, 5}, rng);
            auto f = [](Tape* t, const Tensor& z) {
                Tensor rs = row_sum(t, z);
                return reduce_sum(t, mul(t, rs, rs));
            };
            CHECK(grad_check(f, x, h, tol).pass);
        }
    }
}

TEST_CASE("random 2-layer MLP with CE matches finite differences") {
    Rng rng(99);
    Tensor w1 = random_tensor({6, 8}, rng, -0.5, 0.5);
    Tensor b1 = random_tensor({8}, rng, -0.2, 0.2);
    Tensor w2 = random_tensor({8, 3}, rng, -0.5, 0.5);
    Tensor b2 = random_tensor({3}, rng, -0.2, 0.2);
    Tensor x = random_tensor({4, 6}, rng);
    std::vector<int> labels{0, 2, 1, 2};

    auto net = [&](Tape* t, const Tensor& w1v) {
        Tensor h1 = relu(t, add_bias(t, matmul(t, x, w1v), b1));
        Tensor logits = add_bias(t, matmul(t, h1, w2), b2);
        return ce_logits(t, logits, labels);
    };
    auto res = grad_check(net, w1, 1e-3, 1e-3);
    CAPTURE(res.max_err);
    CHECK(res.pass);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({6, 9}, rng, -30.0, 30.0);
        Tensor p = softmax_rows(nullptr, x);
        for (int i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 9; ++j) {
                const float v = (*p.data)[i * 9 + j];
                CHECK(v >= 0.f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    // stability at large logits
    Tensor big({1, 3}, {1000.f, 999.f, -1000.f});
    Tensor p = softmax_rows(nullptr, big);
    CHECK(all_finite(p));
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({5}, rng);
        const float a = static_cast<float>(rng.uniform(-2, 2));
        const float b = static_cast<float>(rng.uniform(-2, 2));

        auto grad_of = [&x](const std::function<Tensor(Tape*, const Tensor&)>& f) {
            Tensor xc = x.clone();
            xc.set_requires_grad(true);
            Tape t;
            Tensor loss = f(&t, xc);
            t.backward(loss);
            return *xc.grad;
        };
        auto f = [](Tape* t, const Tensor& z) { return reduce_sum(t, mul(t, z, z)); };
        auto g = [](Tape* t, const Tensor& z) { return reduce_sum(t, sigmoid(t, z)); };
        auto combo = [&](Tape* t, const Tensor& z) {
            return add(t, mul_scalar(t, f(t, z), a), mul_scalar(t, g(t, z), b));
        };
        auto gf = grad_of(f), gg = grad_of(g), gc = grad_of(combo);
        for (int i = 0; i < 5; ++i)
            CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("primitives are deterministic") {
    Rng rng(3);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor y = random_tensor({4, 4}, rng);
    Tensor m1 = matmul(nullptr, x, y);
    Tensor m2 = matmul(nullptr, x, y);
    CHECK(std::memcmp(m1.ptr(), m2.ptr(), sizeof(float) * m1.numel()) == 0);
    Tensor s1 = softmax_rows(nullptr, x);
    Tensor s2 = softmax_rows(nullptr, x);
    CHECK(std::memcmp(s1.ptr(), s2.ptr(), sizeof(float) * s1.numel()) == 0);
}

TEST_CASE("adam steps match the hand recurrence") {
    AdamConfig cfg;
    cfg.lr = 0.1f;

    // zero gradient from a fresh state changes nothing
    Tensor p0({2}, {0.4f, -0.7f});
    p0.set_requires_grad(true);
    Adam opt0({p0}, cfg);
    opt0.zero_grad();
    opt0.step();
    CHECK((*p0.data)[0] == 0.4f);
    CHECK((*p0.data)[1] == -0.7f);

    // grad 1: first step moves by ~lr, two identical steps by ~2 lr
    Tensor p({1}, {0.f});
    p.set_requires_grad(true);
    Adam opt({p}, cfg);
    (*p.grad)[0] = 1.f;
    opt.step();
    CHECK((*p.data)[0] == doctest::Approx(-0.0999999990).epsilon(1e-6));
    (*p.grad)[0] = 1.f;
    opt.step();
    CHECK((*p.data)[0] == doctest::Approx(-0.1999999980).epsilon(1e-6));

    // a parameter without grad buffer is a contract violation
    Tensor q({1}, {0.f});
    Adam opt2({q}, cfg);
    CHECK_THROWS_AS(opt2.step(), ContractError);
}
