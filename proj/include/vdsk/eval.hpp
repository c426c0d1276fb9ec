#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vdsk/synth.hpp"

namespace vdsk {

// ------------------------------------------------------------- analysis -----

// pixel counts as foreground when any channel exceeds this
inline constexpr float kForegroundThreshold = -0.5f;

struct AttributeReport {
    SpriteColor color = SpriteColor::red;
    SpriteShape shape = SpriteShape::square;
    std::optional<MoveDirection> direction;
    double color_confidence = 0.0;
    double shape_confidence = 0.0;
    double direction_confidence = 0.0;
};

// Recovers (color, shape, direction) from pixels: color from the mean of
// foreground pixels, shape from the dominant blob's bounding-box fill ratio
// (1.0 square / ~pi/4 circle / ~0.55 triangle, midpoint boundaries),
// direction from the dominant axis of the centroid displacement.
// Throws EmptyClipError when no frame has foreground.
AttributeReport analyze_clip(const VideoClip& clip);

// 1 - var/mean^2 of per-frame foreground pixel counts, clamped to [0, 1];
// single-frame clips score 1.0
double temporal_consistency(const VideoClip& clip);

// Mean per-frame F1 between edge_map(clip, threshold) and ctrl.
// Conventions: both frames empty -> 1.0, exactly one empty -> 0.0.
double edge_agreement(const VideoClip& clip, const ControlSignal& ctrl, float threshold = 0.5f);

// ------------------------------------------------------------- metrics ------

struct MetricBundle {
    double color_acc = 0.0;
    double shape_acc = 0.0;
    double direction_acc = 0.0;
    double temporal_consistency = 0.0;
    double edge_agreement = 0.0;
    int empty_clips = 0;  // diagnostic, not part of the five report keys
};

struct PromptCase {
    std::string caption;
    int length_frames = 16;
    SpriteColor color = SpriteColor::red;
    SpriteShape shape = SpriteShape::square;
    std::optional<MoveDirection> direction;
};

using SamplerFn = std::function<VideoClip(const PromptCase& prompt, int sample_index)>;

// Per-attribute accuracy of sampled clips against their prompts. Direction
// accuracy is measured over prompts that specify a direction. Without control
// signals in play the edge_agreement slot reports 1.0 (vacuously satisfied).
MetricBundle conditional_accuracy(const SamplerFn& sampler,
                                  const std::vector<PromptCase>& prompts, int n_per_prompt);

// the deterministic evaluation prompt grid; cycles lengths, colors, shapes
// and directions so every enum value appears
std::vector<PromptCase> build_prompt_grid(int count, const std::vector<int>& lengths);

std::vector<std::pair<std::string, double>> metric_report_rows(const MetricBundle& m);

// ------------------------------------------------------------ gradcheck -----

struct GradCheckFamily {
    std::string family;
    double max_rel = 0.0;
    double max_abs = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckFamily> families;
    double worst_rel = 0.0;
};

// Central finite differences against analytic gradients for every trainable
// layer family on micro models, in both precisions. Throws CheckFailure
// naming the worst family when a tolerance is exceeded.
GradCheckReport gradcheck_suite(double tol_single, double tol_double);

}  // namespace vdsk
