#pragma once

#include "blobsurrogate/nn/network.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace blobsurrogate::nn {

/// "BSW1" weight file, little-endian: magic, u32 layer count, then per layer
/// u32 kind, in, out, k, stride, activation code, f32 weights, f32 biases.
std::string encode_weights(const Network<float>& net);
Network<float> decode_weights(std::string_view bytes);

void save_weights(const std::filesystem::path& path, const Network<float>& net);
Network<float> load_weights(const std::filesystem::path& path);

}  // namespace blobsurrogate::nn
