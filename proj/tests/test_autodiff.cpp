#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sonet/autodiff.hpp"
#include "sonet/random.hpp"
#include "test_helpers.hpp"

using namespace sonet;

namespace {

Tensor rnd(RandomStream& rng, std::vector<std::size_t> shape, double lo = -1, double hi = 1) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero, for kinked ops (relu, max selections).
Tensor rnd_off_zero(RandomStream& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return t;
}

using Build = std::function<int(Tape&, const std::vector<int>&)>;

void check_grad_instances(const std::function<std::vector<Tensor>(RandomStream&)>& make,
                          const Build& build, int instances = 5) {
    for (int s = 0; s < instances; ++s) {
        RandomStream rng(1000 + static_cast<std::uint64_t>(s));
        auto params = make(rng);
        CHECK(gradcheck(build, params) <= 1e-4);
    }
}

}  // namespace

TEST_CASE("gradcheck sanity: quadratic") {
    Build build = [](Tape& t, const std::vector<int>& ids) {
        return t.sum(t.mul(ids[0], ids[0]));
    };
    std::vector<Tensor> params{Tensor({1}, {3.0})};
    CHECK(gradcheck(build, params) < 1e-9);
    Tape t;
    int x = t.leaf(params[0]);
    int y = t.sum(t.mul(x, x));
    t.backward(y);
    CHECK(t.grad(x).data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("dense forward and hand gradients") {
    Tape t;
    int x = t.leaf(Tensor({1, 1}, {2.0}));
    int W = t.leaf(Tensor({1, 1}, {3.0}));
    int b = t.leaf(Tensor({1}, {1.0}));
    int y = t.dense(x, W, b);
    CHECK(t.value(y).data[0] == 7.0);
    t.backward(t.sum(y));
    CHECK(t.grad(W).data[0] == 2.0);
    CHECK(t.grad(x).data[0] == 3.0);
    CHECK(t.grad(b).data[0] == 1.0);
}

TEST_CASE("dense with identity weights is the identity") {
    Tape t;
    Tensor W({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    RandomStream rng(2);
    auto x = rnd(rng, {4, 3});
    int y = t.dense(t.leaf(x), t.leaf(W), t.leaf(Tensor({3}, {0, 0, 0})));
    CHECK(t.value(y).data == x.data);
}

TEST_CASE("dense shape mismatch") {
    Tape t;
    int x = t.leaf(Tensor({2, 3}));
    int W = t.leaf(Tensor({4, 2}));
    int b = t.leaf(Tensor({2}));
    CHECK_THROWS_AS(t.dense(x, W, b), Error);
}

TEST_CASE("dense gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {4, 3}), rnd(rng, {3, 5}), rnd(rng, {5}),
                                       rnd(rng, {4, 5})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.dense(ids[0], ids[1], ids[2]), ids[3]));
        });
}

TEST_CASE("relu forward") {
    Tape t;
    int y = t.relu(t.leaf(Tensor({3}, {-1, 0, 2})));
    CHECK(t.value(y).data == std::vector<double>{0, 0, 2});
    Tape t2;
    int x = t2.leaf(Tensor({3}, {-1, -2, -3}));
    int y2 = t2.relu(x);
    t2.backward(t2.sum(y2));
    CHECK(t2.value(y2).data == std::vector<double>{0, 0, 0});
    CHECK(t2.grad(x).data == std::vector<double>{0, 0, 0});
}

TEST_CASE("relu gradcheck away from the kink") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd_off_zero(rng, {6, 4}), rnd(rng, {6, 4})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.relu(ids[0]), ids[1]));
        });
}

TEST_CASE("batchnorm normalizes in train mode") {
    RandomStream rng(5);
    auto x = rnd(rng, {32, 3}, -4, 4);
    Tape t;
    auto state = BatchNormState::init(3);
    int y = t.batchnorm(t.leaf(x), t.leaf(Tensor({3}, {1, 1, 1})),
                        t.leaf(Tensor({3}, {0, 0, 0})), state, Mode::Train);
    for (std::size_t f = 0; f < 3; ++f) {
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < 32; ++i) mean += t.value(y).at(i, f);
        mean /= 32;
        for (std::size_t i = 0; i < 32; ++i) {
            const double d = t.value(y).at(i, f) - mean;
            var += d * d;
        }
        var /= 32;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-3);  // eps shifts variance slightly below 1
    }
}

TEST_CASE("batchnorm constant column returns beta") {
    Tape t;
    Tensor x({4, 1}, {2.5, 2.5, 2.5, 2.5});
    auto state = BatchNormState::init(1);
    int y = t.batchnorm(t.leaf(x), t.leaf(Tensor({1}, {3.0})), t.leaf(Tensor({1}, {0.7})),
                        state, Mode::Train);
    for (double v : t.value(y).data) CHECK(v == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("batchnorm rejects single-row train batches") {
    Tape t;
    auto state = BatchNormState::init(2);
    CHECK_THROWS_AS(t.batchnorm(t.leaf(Tensor({1, 2}, {1, 2})), t.leaf(Tensor({2}, {1, 1})),
                                t.leaf(Tensor({2}, {0, 0})), state, Mode::Train),
                    Error);
}

TEST_CASE("batchnorm eval mode uses running stats") {
    auto state = BatchNormState::init(1);
    state.running_mean = {2.0};
    state.running_var = {4.0};
    Tape t;
    int y = t.batchnorm(t.leaf(Tensor({1, 1}, {4.0})), t.leaf(Tensor({1}, {1.0})),
                        t.leaf(Tensor({1}, {0.0})), state, Mode::Eval);
    CHECK(t.value(y).data[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("batchnorm gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {8, 3}, -2, 2), rnd(rng, {3}, 0.5, 1.5),
                                       rnd(rng, {3}), rnd(rng, {8, 3})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            auto state = BatchNormState::init(3);
            return t.sum(t.mul(t.batchnorm(ids[0], ids[1], ids[2], state, Mode::Train), ids[3]));
        });
}

TEST_CASE("conv2d 3x3 delta kernel is the identity") {
    RandomStream rng(7);
    auto x = rnd(rng, {1, 2, 4, 5});
    Tensor K({2, 2, 3, 3});
    K.data.assign(K.data.size(), 0.0);
    K.data[0 * 18 + 0 * 9 + 4] = 1.0;  // out0 <- in0 center tap
    K.data[1 * 18 + 1 * 9 + 4] = 1.0;  // out1 <- in1 center tap
    Tape t;
    int y = t.conv2d(t.leaf(x), t.leaf(K), t.leaf(Tensor({2}, {0, 0})), 3);
    CHECK(t.value(y).data == x.data);
}

TEST_CASE("conv2d 3x3 on a single pixel keeps only the center tap") {
    Tape t;
    Tensor K({1, 1, 3, 3});
    K.data.assign(9, 1.0);
    int y = t.conv2d(t.leaf(Tensor({1, 1, 1, 1}, {2.0})), t.leaf(K), t.leaf(Tensor({1}, {0.0})), 3);
    CHECK(t.value(y).data == std::vector<double>{2.0});
}

TEST_CASE("conv2d matches a naive quadruple-loop oracle") {
    RandomStream rng(11);
    auto x = rnd(rng, {2, 3, 4, 4});
    auto K = rnd(rng, {2, 3, 3, 3});
    auto b = rnd(rng, {2});
    Tape t;
    int y = t.conv2d(t.leaf(x), t.leaf(K), t.leaf(b), 3);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t co = 0; co < 2; ++co)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    double acc = b.data[co];
                    for (std::size_t ci = 0; ci < 3; ++ci)
                        for (int dh = -1; dh <= 1; ++dh)
                            for (int dw = -1; dw <= 1; ++dw) {
                                const int hh = h + dh, ww = w + dw;
                                if (hh < 0 || hh >= 4 || ww < 0 || ww >= 4) continue;
                                acc += x.data[((n * 3 + ci) * 4 + hh) * 4 + ww] *
                                       K.data[((co * 3 + ci) * 3 + (dh + 1)) * 3 + (dw + 1)];
                            }
                    CHECK(t.value(y).data[((n * 2 + co) * 4 + h) * 4 + w] ==
                          doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv2d gradcheck 3x3 and 1x1") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {1, 2, 3, 3}), rnd(rng, {2, 2, 3, 3}),
                                       rnd(rng, {2}), rnd(rng, {1, 2, 3, 3})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.conv2d(ids[0], ids[1], ids[2], 3), ids[3]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {2, 3, 2, 2}), rnd(rng, {4, 3, 1, 1}),
                                       rnd(rng, {4}), rnd(rng, {2, 4, 2, 2})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.conv2d(ids[0], ids[1], ids[2], 1), ids[3]));
        });
}

TEST_CASE("upsample_nn_2x replicates blocks") {
    Tape t;
    int y = t.upsample_nn_2x(t.leaf(Tensor({1, 1, 1, 1}, {3.5})));
    CHECK(t.value(y).shape == std::vector<std::size_t>{1, 1, 2, 2});
    CHECK(t.value(y).data == std::vector<double>{3.5, 3.5, 3.5, 3.5});
    Tape t2;
    int x = t2.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    t2.backward(t2.sum(t2.upsample_nn_2x(x)));
    CHECK(t2.grad(x).data == std::vector<double>{4, 4, 4, 4});
}

TEST_CASE("upsample gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {2, 2, 2, 3}), rnd(rng, {2, 2, 4, 6})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.upsample_nn_2x(ids[0]), ids[1]));
        });
}

TEST_CASE("concat and reshape forward") {
    Tape t;
    int a = t.leaf(Tensor({2, 1}, {1, 2}));
    int b = t.leaf(Tensor({2, 2}, {3, 4, 5, 6}));
    int y = t.concat_cols(a, b);
    CHECK(t.value(y).data == std::vector<double>{1, 3, 4, 2, 5, 6});
    int z = t.concat_rows(t.leaf(Tensor({1, 2}, {7, 8})), t.leaf(Tensor({2, 2}, {1, 2, 3, 4})));
    CHECK(t.value(z).data == std::vector<double>{7, 8, 1, 2, 3, 4});
    int r = t.reshape(b, {4, 1});
    CHECK(t.value(r).shape == std::vector<std::size_t>{4, 1});
    CHECK(t.value(r).data == t.value(b).data);
}

TEST_CASE("concat/reshape/gather/layout gradchecks") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {3, 2}), rnd(rng, {3, 4}), rnd(rng, {3, 6})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.concat_cols(ids[0], ids[1]), ids[2]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {2, 3}), rnd(rng, {4, 3}), rnd(rng, {6, 3})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.concat_rows(ids[0], ids[1]), ids[2]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {6, 2}), rnd(rng, {12, 1})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.reshape(ids[0], {12, 1}), ids[1]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {5, 3}), rnd(rng, {4, 3})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.gather_rows(ids[0], {4, 0, 2, 0}), ids[1]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {2, 3, 2, 2}), rnd(rng, {8, 3})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.nchw_to_rows(ids[0]), ids[1]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {8, 3}), rnd(rng, {2, 3, 2, 2})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.rows_to_nchw(ids[0], 2, 3, 2, 2), ids[1]));
        });
}

TEST_CASE("nchw_to_rows and rows_to_nchw are inverse layouts") {
    RandomStream rng(13);
    auto x = rnd(rng, {2, 3, 2, 4});
    Tape t;
    int rows = t.nchw_to_rows(t.leaf(x));
    CHECK(t.value(rows).shape == std::vector<std::size_t>{16, 3});
    int back = t.rows_to_nchw(rows, 2, 3, 2, 4);
    CHECK(t.value(back).data == x.data);
}

TEST_CASE("group_max and group_mean forward") {
    Tape t;
    int x = t.leaf(Tensor({2, 2}, {1, 3, 3, 5}));
    int m = t.group_mean(x, {{0, 1}});
    CHECK(t.value(m).data == std::vector<double>{2, 4});
    int g = t.group_max(x, {{0, 1}, {}});
    CHECK(t.value(g).data == std::vector<double>{3, 5, 0, 0});
    int me = t.group_mean(x, {{}, {1}});
    CHECK(t.value(me).data == std::vector<double>{0, 0, 3, 5});
}

TEST_CASE("group_max/group_mean gradchecks") {
    std::vector<std::vector<std::size_t>> groups = {{0, 2}, {1, 3, 4}, {}};
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd_off_zero(rng, {5, 3}), rnd(rng, {3, 3})};
        },
        [&](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.group_max(ids[0], groups), ids[1]));
        });
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {5, 3}), rnd(rng, {3, 3})};
        },
        [&](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.group_mean(ids[0], groups), ids[1]));
        });
}

TEST_CASE("dropout behavior") {
    RandomStream rng(17);
    auto x = rnd(rng, {20, 4});
    Tape t;
    int id1 = t.dropout(t.leaf(x), 1.0, 9, Mode::Train);
    CHECK(t.value(id1).data == x.data);
    int ev = t.dropout(t.leaf(x), 0.4, 9, Mode::Eval);
    CHECK(t.value(ev).data == x.data);
    int tr = t.dropout(t.leaf(x), 0.4, 9, Mode::Train);
    Tape t2;
    int tr2 = t2.dropout(t2.leaf(x), 0.4, 9, Mode::Train);
    CHECK(t.value(tr).data == t2.value(tr2).data);  // seed-deterministic
    std::size_t kept = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (t.value(tr).data[i] != 0.0) {
            ++kept;
            CHECK(t.value(tr).data[i] == doctest::Approx(x.data[i] / 0.4).epsilon(1e-12));
        }
    }
    CHECK(kept > 10);
    CHECK(kept < 60);
    CHECK_THROWS_AS(t.dropout(id1, 0.0, 1, Mode::Train), Error);
    CHECK_THROWS_AS(t.dropout(id1, 1.5, 1, Mode::Train), Error);
}

TEST_CASE("dropout gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {6, 4}), rnd(rng, {6, 4})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.dropout(ids[0], 0.6, 21, Mode::Train), ids[1]));
        });
}

TEST_CASE("softmax cross entropy values") {
    Tape t;
    int l = t.leaf(Tensor({1, 2}, {0, 0}));
    int loss = t.softmax_cross_entropy(l, {0});
    CHECK(t.value(loss).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK_THROWS_AS(t.softmax_cross_entropy(l, {2}), Error);
}

TEST_CASE("softmax cross entropy gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {4, 5}, -3, 3)};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.softmax_cross_entropy(ids[0], {0, 3, 2, 4});
        });
}

TEST_CASE("chamfer gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {6, 3}, -1, 1), rnd(rng, {5, 3}, -1, 1)};
        },
        [](Tape& t, const std::vector<int>& ids) { return t.chamfer(ids[0], ids[1]); });
}

TEST_CASE("elementwise ops gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {3, 4}), rnd(rng, {3, 4}), rnd(rng, {3, 4})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.scale(t.add(ids[0], ids[1]), 1.7), ids[2]));
        });
}

TEST_CASE("dense+relu+bn composite gradcheck") {
    check_grad_instances(
        [](RandomStream& rng) {
            return std::vector<Tensor>{rnd(rng, {8, 3}), rnd(rng, {3, 4}, -0.7, 0.7),
                                       rnd(rng, {4}, 0.1, 0.5), rnd(rng, {4}, 0.5, 1.5),
                                       rnd(rng, {4}), rnd(rng, {8, 4})};
        },
        [](Tape& t, const std::vector<int>& ids) {
            auto state = BatchNormState::init(4);
            int h = t.dense(ids[0], ids[1], ids[2]);
            h = t.batchnorm(h, ids[3], ids[4], state, Mode::Train);
            return t.sum(t.mul(t.relu(h), ids[5]));
        });
}
