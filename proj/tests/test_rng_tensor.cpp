#include <doctest.h>

#include <cmath>

#include "vdsk/rng.hpp"
#include "vdsk/tensor.hpp"

using namespace vdsk;

TEST_CASE("splitmix sub-seeds are stable and decorrelated") {
    CHECK(mix_seed(1, 0) == mix_seed(1, 0));
    CHECK(mix_seed(1, 0) != mix_seed(1, 1));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}

TEST_CASE("uniform stays in [0,1) and is deterministic") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        double u = a.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == b.uniform());
    }
}

TEST_CASE("uniform_int covers inclusive bounds") {
    Rng rng(7);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 2000; ++i) {
        int64_t v = rng.uniform_int(3, 6);
        CHECK(v >= 3);
        CHECK(v <= 6);
        saw_lo = saw_lo || v == 3;
        saw_hi = saw_hi || v == 6;
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
}

TEST_CASE("normal draws have roughly unit moments") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("tensor shape and indexing") {
    Tensor t({2, 3, 4, 5});
    CHECK(t.size() == 120);
    CHECK(t.rank() == 4);
    t.at4(1, 2, 3, 4) = 7.0f;
    CHECK(t[t.idx4(1, 2, 3, 4)] == 7.0f);
    CHECK(t[119] == 7.0f);

    Tensor z = Tensor::full({2, 2}, 3.0f);
    CHECK(z.at2(1, 1) == 3.0f);
    CHECK(z.all_finite());
    z[0] = std::numeric_limits<float>::infinity();
    CHECK(!z.all_finite());
}

TEST_CASE("tensor arithmetic helpers") {
    Tensor a = Tensor::full({3}, 2.0f);
    Tensor b = Tensor::full({3}, 5.0f);
    Tensor c = a + b;
    CHECK(c[0] == 7.0f);
    Tensor d = b - a;
    CHECK(d[2] == 3.0f);
    CHECK(max_abs_diff(a, b) == doctest::Approx(3.0));
    CHECK(max_abs(b) == doctest::Approx(5.0));
}
