#include "vdsk/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "vdsk/rng.hpp"

namespace vdsk {

const char* to_string(SpriteShape s) {
    switch (s) {
        case SpriteShape::square: return "square";
        case SpriteShape::circle: return "circle";
        case SpriteShape::triangle: return "triangle";
    }
    return "?";
}

const char* to_string(SpriteColor c) {
    switch (c) {
        case SpriteColor::red: return "red";
        case SpriteColor::green: return "green";
        case SpriteColor::blue: return "blue";
        case SpriteColor::yellow: return "yellow";
    }
    return "?";
}

const char* to_string(MoveDirection d) {
    switch (d) {
        case MoveDirection::left: return "left";
        case MoveDirection::right: return "right";
        case MoveDirection::up: return "up";
        case MoveDirection::down: return "down";
    }
    return "?";
}

namespace {

bool length_allowed(int t) {
    for (int a : kAllowedLengths)
        if (a == t) return true;
    return false;
}

// displacement of the sprite box over the whole clip, in pixels
void trajectory_extent(const ClipSpec& spec, int& dx, int& dy) {
    dx = 0;
    dy = 0;
    if (spec.length_frames == 1 || !spec.direction) return;
    int total = spec.speed * (spec.length_frames - 1);
    switch (*spec.direction) {
        case MoveDirection::left: dx = -total; break;
        case MoveDirection::right: dx = total; break;
        case MoveDirection::up: dy = -total; break;
        case MoveDirection::down: dy = total; break;
    }
}

// Sprite pixel masks, defined on the 10x10 box so the analyzer thresholds
// (fill ratio 1.0 / ~pi/4 / ~0.55) are exact by construction.
bool sprite_pixel(SpriteShape shape, int px, int py) {
    switch (shape) {
        case SpriteShape::square:
            return true;
        case SpriteShape::circle: {
            double dx = px - 4.5, dy = py - 4.5;
            return dx * dx + dy * dy <= 25.0;
        }
        case SpriteShape::triangle: {
            // row r holds r+1 pixels starting at column 4 - r/2
            int start = 4 - py / 2;
            return px >= start && px < start + py + 1;
        }
    }
    return false;
}

}  // namespace

void validate_spec(const ClipSpec& spec) {
    if (!length_allowed(spec.length_frames))
        throw std::invalid_argument("length_frames must be one of {1, 4, 8, 16}");
    if (spec.length_frames == 1) {
        if (spec.direction)
            throw std::invalid_argument("single-frame spec must not carry a direction");
    } else {
        if (!spec.direction)
            throw std::invalid_argument("multi-frame spec requires a direction");
        if (spec.speed != 1 && spec.speed != 2)
            throw std::invalid_argument("speed must be 1 or 2");
    }
    int dx, dy;
    trajectory_extent(spec, dx, dy);
    int x0 = spec.start_x + std::min(dx, 0);
    int y0 = spec.start_y + std::min(dy, 0);
    int x1 = spec.start_x + std::max(dx, 0) + kSpriteBox;
    int y1 = spec.start_y + std::max(dy, 0) + kSpriteBox;
    if (x0 < 0 || y0 < 0 || x1 > kFrameW || y1 > kFrameH)
        throw std::invalid_argument("sprite trajectory leaves the frame");
}

ClipSpec sample_spec(uint64_t rng_seed, const std::set<int>& allowed_lengths) {
    if (allowed_lengths.empty())
        throw std::invalid_argument("allowed_lengths must not be empty");
    for (int t : allowed_lengths)
        if (!length_allowed(t))
            throw std::invalid_argument("allowed_lengths must be a subset of {1, 4, 8, 16}");

    Rng rng(mix_seed(rng_seed, 0x5fec5));
    ClipSpec spec;
    spec.seed = rng_seed;
    std::vector<int> lengths(allowed_lengths.begin(), allowed_lengths.end());
    spec.length_frames = lengths[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(lengths.size()) - 1))];
    spec.shape = static_cast<SpriteShape>(rng.uniform_int(0, 2));
    spec.color = static_cast<SpriteColor>(rng.uniform_int(0, 3));

    if (spec.length_frames > 1) {
        spec.direction = static_cast<MoveDirection>(rng.uniform_int(0, 3));
        // speed 2 over 16 frames would travel 30 px and cannot stay inside
        int max_speed = spec.speed = 1;
        if ((spec.length_frames - 1) * 2 <= kFrameW - kSpriteBox) max_speed = 2;
        spec.speed = static_cast<int>(rng.uniform_int(1, max_speed));
    } else {
        spec.direction.reset();
        spec.speed = 1;
    }

    int dx, dy;
    trajectory_extent(spec, dx, dy);
    int lo_x = std::max(0, -dx);
    int hi_x = kFrameW - kSpriteBox - std::max(0, dx);
    int lo_y = std::max(0, -dy);
    int hi_y = kFrameH - kSpriteBox - std::max(0, dy);
    spec.start_x = static_cast<int>(rng.uniform_int(lo_x, hi_x));
    spec.start_y = static_cast<int>(rng.uniform_int(lo_y, hi_y));
    validate_spec(spec);
    return spec;
}

VideoClip render_clip(const ClipSpec& spec) {
    validate_spec(spec);
    int t_frames = spec.length_frames;
    VideoClip clip{Tensor::full({t_frames, 3, kFrameH, kFrameW}, -1.0f)};

    bool ch_r = spec.color == SpriteColor::red || spec.color == SpriteColor::yellow;
    bool ch_g = spec.color == SpriteColor::green || spec.color == SpriteColor::yellow;
    bool ch_b = spec.color == SpriteColor::blue;

    for (int t = 0; t < t_frames; ++t) {
        int off_x = 0, off_y = 0;
        if (spec.direction) {
            int d = spec.speed * t;
            switch (*spec.direction) {
                case MoveDirection::left: off_x = -d; break;
                case MoveDirection::right: off_x = d; break;
                case MoveDirection::up: off_y = -d; break;
                case MoveDirection::down: off_y = d; break;
            }
        }
        for (int py = 0; py < kSpriteBox; ++py) {
            for (int px = 0; px < kSpriteBox; ++px) {
                if (!sprite_pixel(spec.shape, px, py)) continue;
                int x = spec.start_x + off_x + px;
                int y = spec.start_y + off_y + py;
                if (ch_r) clip.data.at4(t, 0, y, x) = 1.0f;
                if (ch_g) clip.data.at4(t, 1, y, x) = 1.0f;
                if (ch_b) clip.data.at4(t, 2, y, x) = 1.0f;
            }
        }
    }
    return clip;
}

std::string caption_of(const ClipSpec& spec) {
    std::string s = "a ";
    s += to_string(spec.color);
    s += ' ';
    s += to_string(spec.shape);
    if (spec.length_frames > 1 && spec.direction) {
        s += " moves ";
        s += to_string(*spec.direction);
    }
    return s;
}

ControlSignal edge_map(const VideoClip& clip, float threshold) {
    if (threshold <= 0.0f) throw std::invalid_argument("edge threshold must be > 0");
    int64_t t_frames = clip.frames();
    int64_t h = clip.height();
    int64_t w = clip.width();
    ControlSignal out{Tensor::zeros({t_frames, 1, h, w})};

    auto lum = [&](int64_t t, int64_t y, int64_t x) -> double {
        return (clip.data.at4(t, 0, y, x) + clip.data.at4(t, 1, y, x) +
                clip.data.at4(t, 2, y, x)) / 3.0;
    };
    double thr2 = static_cast<double>(threshold) * static_cast<double>(threshold);
    for (int64_t t = 0; t < t_frames; ++t) {
        for (int64_t y = 1; y + 1 < h; ++y) {
            for (int64_t x = 1; x + 1 < w; ++x) {
                double gx = (lum(t, y, x + 1) - lum(t, y, x - 1)) * 0.5;
                double gy = (lum(t, y + 1, x) - lum(t, y - 1, x)) * 0.5;
                if (gx * gx + gy * gy > thr2) out.data.at4(t, 0, y, x) = 1.0f;
            }
        }
    }
    return out;
}

std::vector<CorpusItem> build_corpus(int n, uint64_t seed, const std::set<int>& allowed_lengths) {
    if (n <= 0) throw std::invalid_argument("corpus size must be positive");
    std::vector<CorpusItem> items;
    items.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ClipSpec spec = sample_spec(mix_seed(seed, static_cast<uint64_t>(i)), allowed_lengths);
        VideoClip clip = render_clip(spec);
        std::string caption = caption_of(spec);
        items.push_back({spec, std::move(clip), std::move(caption)});
    }
    return items;
}

}  // namespace vdsk
