#include "vdsk/autoencoder.hpp"

#include <algorithm>
#include <cmath>

namespace vdsk {

LatentVideo encode(const ConvAE& ae, const VideoClip& clip) {
    return {ae.encode_raw(clip.data)};
}

VideoClip decode(const ConvAE& ae, const LatentVideo& latent, int64_t target_t) {
    Tensor out = ae.decode_raw(latent.data, target_t);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -1.0f, 1.0f);
    return {std::move(out)};
}

double psnr(const VideoClip& a, const VideoClip& b) {
    if (!a.data.same_shape(b.data)) throw std::invalid_argument("psnr requires equal shapes");
    double mse = 0.0;
    for (int64_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return 99.0;
    double value = 20.0 * std::log10(2.0 / std::sqrt(mse));
    return std::min(value, 99.0);
}

}  // namespace vdsk
