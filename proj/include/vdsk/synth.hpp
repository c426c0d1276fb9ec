#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vdsk/tensor.hpp"

namespace vdsk {

// Frames are HxW = 32x32, sprites fit in a 10x10 box.
inline constexpr int kFrameH = 32;
inline constexpr int kFrameW = 32;
inline constexpr int kSpriteBox = 10;
inline constexpr int kAllowedLengths[] = {1, 4, 8, 16};

enum class SpriteShape { square, circle, triangle };
enum class SpriteColor { red, green, blue, yellow };
enum class MoveDirection { left, right, up, down };

const char* to_string(SpriteShape s);
const char* to_string(SpriteColor c);
const char* to_string(MoveDirection d);

struct ClipSpec {
    SpriteShape shape = SpriteShape::square;
    SpriteColor color = SpriteColor::red;
    std::optional<MoveDirection> direction;  // absent when length_frames == 1
    int speed = 1;                           // pixels per frame, 1 or 2
    int start_x = 0;                         // top-left corner of the sprite box
    int start_y = 0;
    int length_frames = 1;                   // one of {1, 4, 8, 16}
    uint64_t seed = 0;

    bool operator==(const ClipSpec&) const = default;
};

// Pixel-space clip, T x 3 x H x W, values in [-1, 1].
struct VideoClip {
    Tensor data;

    int64_t frames() const { return data.shape[0]; }
    int64_t height() const { return data.shape[2]; }
    int64_t width() const { return data.shape[3]; }
};

// Binary per-pixel signal, T x 1 x H x W, values in {0, 1}.
struct ControlSignal {
    Tensor data;

    int64_t frames() const { return data.shape[0]; }
};

// throws std::invalid_argument if any ClipSpec invariant is violated
void validate_spec(const ClipSpec& spec);

// Deterministic draw of a valid spec from a seed. Attribute marginals are
// approximately uniform; start position is uniform over placements that keep
// the sprite inside the frame for the whole trajectory.
ClipSpec sample_spec(uint64_t rng_seed, const std::set<int>& allowed_lengths);

// Frame k shows the sprite displaced by k*speed pixels along the direction.
// Background is -1; sprite pixels carry +1 in the color channels (yellow
// lights both red and green).
VideoClip render_clip(const ClipSpec& spec);

// "a {color} {shape} moves {direction}" for T > 1, "a {color} {shape}" for T = 1
std::string caption_of(const ClipSpec& spec);

// 1 where the central-difference luminance gradient magnitude exceeds the
// threshold (luminance = channel mean), else 0.
ControlSignal edge_map(const VideoClip& clip, float threshold = 0.5f);

struct CorpusItem {
    ClipSpec spec;
    VideoClip clip;
    std::string caption;
};

// Item i is drawn from mix_seed(seed, i), so corpora are reproducible and
// items are independent of n.
std::vector<CorpusItem> build_corpus(int n, uint64_t seed, const std::set<int>& allowed_lengths);

}  // namespace vdsk
