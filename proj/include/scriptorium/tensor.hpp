#pragma once

#include <cstddef>
#include <vector>

namespace scriptorium {

// layer x head x from x to attention weights, row-major.
struct AttentionTensor {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t size = 0;  // tokens (or words after aggregation)
    std::vector<double> weights;

    AttentionTensor() = default;
    AttentionTensor(std::size_t layers, std::size_t heads, std::size_t size)
        : layers(layers), heads(heads), size(size), weights(layers * heads * size * size, 0.0) {}

    std::size_t offset(std::size_t layer, std::size_t head, std::size_t from, std::size_t to) const {
        return ((layer * heads + head) * size + from) * size + to;
    }
    double& at(std::size_t layer, std::size_t head, std::size_t from, std::size_t to) {
        return weights[offset(layer, head, from, to)];
    }
    double at(std::size_t layer, std::size_t head, std::size_t from, std::size_t to) const {
        return weights[offset(layer, head, from, to)];
    }
};

}  // namespace scriptorium
