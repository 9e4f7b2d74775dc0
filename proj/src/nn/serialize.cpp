#include "blobsurrogate/nn/serialize.hpp"

#include "blobsurrogate/error.hpp"
#include "blobsurrogate/io.hpp"

#include <cmath>

namespace blobsurrogate::nn {

namespace {

constexpr std::string_view kMagic = "BSW1";
constexpr std::uint32_t kMaxLayers = 1024;
constexpr std::uint32_t kMaxExtent = 1u << 16;

}  // namespace

std::string encode_weights(const Network<float>& net) {
    std::string out(kMagic);
    io::put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) {
        io::put_u32(out, static_cast<std::uint32_t>(l.kind));
        io::put_u32(out, static_cast<std::uint32_t>(l.in_channels));
        io::put_u32(out, static_cast<std::uint32_t>(l.out_channels));
        io::put_u32(out, static_cast<std::uint32_t>(l.kernel));
        io::put_u32(out, static_cast<std::uint32_t>(l.stride));
        io::put_u32(out, static_cast<std::uint32_t>(l.activation));
        for (float w : l.weights.data()) io::put_f32(out, w);
        for (float b : l.bias.data()) io::put_f32(out, b);
    }
    return out;
}

Network<float> decode_weights(std::string_view bytes) {
    if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
        throw FormatError("not a BSW1 weight file (bad magic)");
    }
    io::ByteReader r(bytes.substr(kMagic.size()));
    const std::uint32_t count = r.u32();
    if (count > kMaxLayers) throw FormatError("BSW1 layer count " + std::to_string(count) + " is implausible");
    Network<float> net;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t kind = r.u32();
        const std::uint32_t in = r.u32();
        const std::uint32_t out = r.u32();
        const std::uint32_t k = r.u32();
        const std::uint32_t stride = r.u32();
        const std::uint32_t act = r.u32();
        if (kind > 1) throw FormatError("BSW1 layer " + std::to_string(i) + ": unknown kind " + std::to_string(kind));
        if (act > 2) throw FormatError("BSW1 layer " + std::to_string(i) + ": unknown activation " + std::to_string(act));
        if (in == 0 || out == 0 || in > kMaxExtent || out > kMaxExtent || k > 63 || stride == 0 || stride > 64) {
            throw FormatError("BSW1 layer " + std::to_string(i) + ": implausible geometry");
        }
        Layer<float> layer;
        try {
            layer = kind == 0 ? Layer<float>::conv(in, out, k, static_cast<Activation>(act), stride)
                              : Layer<float>::dense(in, out, static_cast<Activation>(act));
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("BSW1 layer ") + std::to_string(i) + ": " + e.what());
        }
        if (kind == 1 && (k != 1 || stride != 1)) throw FormatError("BSW1 dense layer with kernel/stride != 1");
        const std::size_t needed = (layer.weights.size() + layer.bias.size()) * 4;
        if (r.remaining() < needed) throw TruncationError("BSW1 file truncated in layer " + std::to_string(i));
        for (auto& w : layer.weights.data()) w = r.f32();
        for (auto& b : layer.bias.data()) b = r.f32();
        if (!layer.weights.all_finite() || !layer.bias.all_finite()) {
            throw FormatError("BSW1 layer " + std::to_string(i) + " holds non-finite values");
        }
        net.layers.push_back(std::move(layer));
    }
    if (r.remaining() != 0) throw FormatError("BSW1 file has trailing bytes");
    return net;
}

void save_weights(const std::filesystem::path& path, const Network<float>& net) {
    io::write_file_atomic(path, encode_weights(net));
}

Network<float> load_weights(const std::filesystem::path& path) {
    return decode_weights(io::read_file(path));
}

}  // namespace blobsurrogate::nn
