#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganproj/netcore.hpp"
#include "ganproj/tensor.hpp"

namespace ganproj {

/// 8-bit image, row-major, channel-interleaved (H x W x C).
class Image {
public:
    Image() = default;
    Image(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill = 0);
    Image(std::size_t width, std::size_t height, std::size_t channels, std::vector<std::uint8_t> pixels);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t channels() const { return channels_; }
    ImageShape shape() const { return {height_, width_, channels_}; }
    std::size_t size() const { return pixels_.size(); }

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels_[(y * width_ + x) * channels_ + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels_[(y * width_ + x) * channels_ + c];
    }
    std::span<std::uint8_t> pixels() { return pixels_; }
    std::span<const std::uint8_t> pixels() const { return pixels_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::size_t channels_ = 0;
    std::vector<std::uint8_t> pixels_;
};

/// p / 127.5 - 1, as an H x W x C tensor.
Tensor normalize(const Image& img);
/// round-half-up(clamp(x, -1, 1) * 127.5 + 127.5). Tensor must be H x W x C.
Image denormalize(const Tensor& t);

/// Reads 8-bit grayscale/RGB PNG or binary PGM (P5) / PPM (P6) with maxval 255.
/// The format is detected from the file contents.
Image read_image(const std::filesystem::path& path);
/// Writes PNG, PGM or PPM depending on the extension (.png, .pgm, .ppm).
void write_image(const Image& img, const std::filesystem::path& path);

/// CRC-32 with the IEEE 802.3 polynomial.
std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

/// GPDW container: "GPDW", u32 version, u32 count, per tensor (u32 name_len,
/// name, u32 rank, u32 dims[rank], f32 data), trailing u32 CRC-32 over all
/// preceding bytes. Little-endian throughout.
std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

void save_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Generator tensors are stored as "generator.<layer>.<field>", discriminator
/// tensors as "discriminator.<layer>.<field>". Loading rebuilds the fixed
/// DCGAN stack, inferring latent dimension and channel count from the shapes.
void save_weights(const GeneratorNet& net, const std::filesystem::path& path);
void save_checkpoint(const GeneratorNet& gen, const DiscriminatorNet& disc, const std::filesystem::path& path);
GeneratorNet load_weights(const std::filesystem::path& path);
DiscriminatorNet load_discriminator(const std::filesystem::path& path);

std::vector<NamedTensor> generator_tensors(const GeneratorNet& net);
GeneratorNet generator_from_tensors(const std::vector<NamedTensor>& tensors);

/// {"dim": d, "vectors": [[...], ...], "meta": {...}}
struct LatentFile {
    std::size_t dim = 0;
    std::vector<LatentVector> vectors;
    nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json latents_to_json(const std::vector<LatentVector>& vectors, const nlohmann::json& meta);
LatentFile latents_from_json(const nlohmann::json& doc);
void save_latents(const std::vector<LatentVector>& vectors, const nlohmann::json& meta,
                  const std::filesystem::path& path);
LatentFile load_latents(const std::filesystem::path& path);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> contents);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ganproj
