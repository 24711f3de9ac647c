#pragma once

#include <vector>

#include "nbs/common.hpp"

namespace nbs {

// Dense H×W×C tensor, channel-major (each channel is a contiguous row-major
// plane). The same layout as SpectralCube's band-sequential storage, so band
// planes and model channels move between the two without reshuffling.
struct Tensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, 0.0) {}

    size_t plane_size() const { return static_cast<size_t>(height) * width; }
    size_t size() const { return data.size(); }

    double& at(int c, int u, int v) {
        return data[(static_cast<size_t>(c) * height + u) * width + v];
    }
    double at(int c, int u, int v) const {
        return data[(static_cast<size_t>(c) * height + u) * width + v];
    }

    double* plane(int c) { return data.data() + c * plane_size(); }
    const double* plane(int c) const { return data.data() + c * plane_size(); }

    bool same_shape(const Tensor& other) const {
        return height == other.height && width == other.width &&
               channels == other.channels;
    }
};

}  // namespace nbs
