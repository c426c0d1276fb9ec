#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "vdsk/rng.hpp"
#include "vdsk/synth.hpp"

using namespace vdsk;

namespace {

// independent centroid oracle over rendered foreground masks
void centroid_of_frame(const VideoClip& clip, int64_t t, double& cx, double& cy) {
    double sx = 0.0, sy = 0.0;
    int64_t n = 0;
    for (int64_t y = 0; y < clip.height(); ++y)
        for (int64_t x = 0; x < clip.width(); ++x) {
            float m = std::max({clip.data.at4(t, 0, y, x), clip.data.at4(t, 1, y, x),
                                clip.data.at4(t, 2, y, x)});
            if (m > 0.0f) {
                sx += static_cast<double>(x);
                sy += static_cast<double>(y);
                ++n;
            }
        }
    REQUIRE(n > 0);
    cx = sx / static_cast<double>(n);
    cy = sy / static_cast<double>(n);
}

// brute-force edge oracle: same mathematical definition, written directly
Tensor edge_oracle(const VideoClip& clip, double threshold) {
    int64_t t_frames = clip.frames(), h = clip.height(), w = clip.width();
    Tensor out = Tensor::zeros({t_frames, 1, h, w});
    for (int64_t t = 0; t < t_frames; ++t)
        for (int64_t y = 1; y + 1 < h; ++y)
            for (int64_t x = 1; x + 1 < w; ++x) {
                auto lum = [&](int64_t yy, int64_t xx) {
                    return (static_cast<double>(clip.data.at4(t, 0, yy, xx)) +
                            static_cast<double>(clip.data.at4(t, 1, yy, xx)) +
                            static_cast<double>(clip.data.at4(t, 2, yy, xx))) / 3.0;
                };
                double gx = (lum(y, x + 1) - lum(y, x - 1)) / 2.0;
                double gy = (lum(y + 1, x) - lum(y - 1, x)) / 2.0;
                if (std::sqrt(gx * gx + gy * gy) > threshold) out.at4(t, 0, y, x) = 1.0f;
            }
    return out;
}

}  // namespace

TEST_CASE("sample_spec is deterministic in the seed") {
    ClipSpec a = sample_spec(7, {1, 4, 8, 16});
    ClipSpec b = sample_spec(7, {1, 4, 8, 16});
    CHECK(a == b);
}

TEST_CASE("single-frame specs carry no direction") {
    ClipSpec spec = sample_spec(123, {1});
    CHECK(spec.length_frames == 1);
    CHECK(!spec.direction.has_value());
}

TEST_CASE("sample_spec rejects bad length sets") {
    CHECK_THROWS_AS(sample_spec(1, {}), std::invalid_argument);
    CHECK_THROWS_AS(sample_spec(1, {3}), std::invalid_argument);
}

TEST_CASE("color marginals are near-uniform over 10000 seeds") {
    int counts[4] = {0, 0, 0, 0};
    for (uint64_t s = 0; s < 10000; ++s)
        ++counts[static_cast<int>(sample_spec(s, {1, 4, 8, 16}).color)];
    for (int c = 0; c < 4; ++c)
        CHECK(std::abs(counts[c] / 10000.0 - 0.25) < 0.03);
}

TEST_CASE("specs always satisfy the trajectory invariant") {
    for (uint64_t s = 0; s < 3000; ++s) {
        ClipSpec spec = sample_spec(s, {1, 4, 8, 16});
        CHECK_NOTHROW(validate_spec(spec));
        if (spec.length_frames == 16 && spec.direction) CHECK(spec.speed == 1);
    }
}

TEST_CASE("render produces the documented shapes and colors") {
    ClipSpec spec;
    spec.shape = SpriteShape::square;
    spec.color = SpriteColor::red;
    spec.length_frames = 1;
    spec.start_x = 11;
    spec.start_y = 11;
    VideoClip clip = render_clip(spec);
    CHECK(clip.data.shape == std::vector<int64_t>{1, 3, 32, 32});

    // sprite center pixel carries (+1, -1, -1)
    CHECK(clip.data.at4(0, 0, 15, 15) == 1.0f);
    CHECK(clip.data.at4(0, 1, 15, 15) == -1.0f);
    CHECK(clip.data.at4(0, 2, 15, 15) == -1.0f);

    // every pixel is exactly -1 or +1 before augmentation
    for (int64_t i = 0; i < clip.data.size(); ++i)
        CHECK((clip.data[i] == -1.0f || clip.data[i] == 1.0f));
}

TEST_CASE("yellow lights the red and green channels") {
    ClipSpec spec;
    spec.shape = SpriteShape::square;
    spec.color = SpriteColor::yellow;
    spec.length_frames = 1;
    spec.start_x = 4;
    spec.start_y = 4;
    VideoClip clip = render_clip(spec);
    CHECK(clip.data.at4(0, 0, 8, 8) == 1.0f);
    CHECK(clip.data.at4(0, 1, 8, 8) == 1.0f);
    CHECK(clip.data.at4(0, 2, 8, 8) == -1.0f);
}

TEST_CASE("speed-2 rightward motion displaces the centroid by 14 px over 8 frames") {
    ClipSpec spec;
    spec.shape = SpriteShape::circle;
    spec.color = SpriteColor::blue;
    spec.direction = MoveDirection::right;
    spec.speed = 2;
    spec.length_frames = 8;
    spec.start_x = 2;
    spec.start_y = 10;
    VideoClip clip = render_clip(spec);
    double cx0, cy0, cx7, cy7;
    centroid_of_frame(clip, 0, cx0, cy0);
    centroid_of_frame(clip, 7, cx7, cy7);
    CHECK(cx7 - cx0 == doctest::Approx(14.0));
    CHECK(cy7 - cy0 == doctest::Approx(0.0));
}

TEST_CASE("render rejects specs that leave the frame") {
    ClipSpec spec;
    spec.shape = SpriteShape::square;
    spec.color = SpriteColor::red;
    spec.direction = MoveDirection::right;
    spec.speed = 2;
    spec.length_frames = 16;
    spec.start_x = 5;
    spec.start_y = 5;
    CHECK_THROWS_AS(render_clip(spec), std::invalid_argument);
}

TEST_CASE("caption grammar") {
    ClipSpec spec;
    spec.color = SpriteColor::red;
    spec.shape = SpriteShape::square;
    spec.direction = MoveDirection::right;
    spec.length_frames = 8;
    CHECK(caption_of(spec) == "a red square moves right");
    CHECK(caption_of(spec) == caption_of(spec));

    ClipSpec single;
    single.color = SpriteColor::blue;
    single.shape = SpriteShape::circle;
    single.length_frames = 1;
    CHECK(caption_of(single) == "a blue circle");
}

TEST_CASE("caption grammar is injective over (color, shape, direction-or-none)") {
    std::set<std::string> captions;
    int combos = 0;
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 3; ++s)
            for (int d = -1; d < 4; ++d) {
                ClipSpec spec;
                spec.color = static_cast<SpriteColor>(c);
                spec.shape = static_cast<SpriteShape>(s);
                if (d >= 0) {
                    spec.direction = static_cast<MoveDirection>(d);
                    spec.length_frames = 8;
                } else {
                    spec.length_frames = 1;
                }
                captions.insert(caption_of(spec));
                ++combos;
            }
    CHECK(static_cast<int>(captions.size()) == combos);
}

TEST_CASE("edge_map of a uniform clip is all zero") {
    VideoClip clip{Tensor::full({2, 3, 32, 32}, -1.0f)};
    ControlSignal edges = edge_map(clip, 0.5f);
    CHECK(max_abs(edges.data) == 0.0);
}

TEST_CASE("edge_map rejects non-positive thresholds") {
    VideoClip clip{Tensor::full({1, 3, 32, 32}, -1.0f)};
    CHECK_THROWS_AS(edge_map(clip, 0.0f), std::invalid_argument);
}

TEST_CASE("edge ring of a centered square matches the brute-force oracle") {
    ClipSpec spec;
    spec.shape = SpriteShape::square;
    spec.color = SpriteColor::yellow;  // luminance contrast 4/3 clears the 0.5 default
    spec.length_frames = 1;
    spec.start_x = 11;
    spec.start_y = 11;
    VideoClip clip = render_clip(spec);

    ControlSignal edges = edge_map(clip, 0.5f);
    Tensor oracle = edge_oracle(clip, 0.5);
    CHECK(max_abs_diff(edges.data, oracle) == 0.0);

    int64_t count = 0;
    for (int64_t i = 0; i < edges.data.size(); ++i) count += edges.data[i] > 0.5f;
    CHECK(count == 76);  // two-pixel ring: 2*(4*10 + 4*10 - 2)  (frozen from the oracle)

    // the ring hugs the square boundary
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x)
            if (edges.data.at4(0, 0, y, x) > 0.5f) {
                CHECK(x >= 10);
                CHECK(x <= 21);
                CHECK(y >= 10);
                CHECK(y <= 21);
            }

    // binary and shape-matched
    CHECK(edges.data.shape == std::vector<int64_t>{1, 1, 32, 32});
    for (int64_t i = 0; i < edges.data.size(); ++i)
        CHECK((edges.data[i] == 0.0f || edges.data[i] == 1.0f));
}

TEST_CASE("primary colors need a lower threshold than the 0.5 default") {
    ClipSpec spec;
    spec.shape = SpriteShape::square;
    spec.color = SpriteColor::red;  // luminance contrast 2/3
    spec.length_frames = 1;
    spec.start_x = 11;
    spec.start_y = 11;
    VideoClip clip = render_clip(spec);
    ControlSignal at_default = edge_map(clip, 0.5f);
    CHECK(max_abs(at_default.data) == 0.0);
    ControlSignal at_quarter = edge_map(clip, 0.25f);
    int64_t count = 0;
    for (int64_t i = 0; i < at_quarter.data.size(); ++i) count += at_quarter.data[i] > 0.5f;
    CHECK(count == 76);
}

TEST_CASE("edge_map is translation-equivariant on interior pixels") {
    ClipSpec a;
    a.shape = SpriteShape::triangle;
    a.color = SpriteColor::green;
    a.length_frames = 1;
    a.start_x = 8;
    a.start_y = 9;
    ClipSpec b = a;
    b.start_x = 9;

    ControlSignal ea = edge_map(render_clip(a), 0.25f);
    ControlSignal eb = edge_map(render_clip(b), 0.25f);
    for (int64_t y = 1; y < 31; ++y)
        for (int64_t x = 1; x < 30; ++x)
            CHECK(ea.data.at4(0, 0, y, x) == eb.data.at4(0, 0, y, x + 1));
}

TEST_CASE("build_corpus is deterministic and sized correctly") {
    auto a = build_corpus(4, 1, {1, 4, 8, 16});
    auto b = build_corpus(4, 1, {1, 4, 8, 16});
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(a[i].spec == b[i].spec);
        CHECK(max_abs_diff(a[i].clip.data, b[i].clip.data) == 0.0);
        CHECK(a[i].caption == caption_of(a[i].spec));
    }
    CHECK(build_corpus(100, 2, {4}).size() == 100);
    CHECK_THROWS_AS(build_corpus(0, 1, {4}), std::invalid_argument);

    // item seeds are a pure function of (seed, index): prefixes agree
    auto big = build_corpus(8, 1, {1, 4, 8, 16});
    for (size_t i = 0; i < 4; ++i) CHECK(big[i].spec == a[i].spec);
}
