#include "ganproj/weights_io.hpp"

#include <png.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ganproj/error.hpp"

namespace ganproj {

namespace fs = std::filesystem;

// ---- Image -------------------------------------------------------------------

Image::Image(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels), pixels_(width * height * channels, fill) {
    if (width == 0 || height == 0) throw ShapeError("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw ShapeError("images have 1 or 3 channels, got " + std::to_string(channels));
}

Image::Image(std::size_t width, std::size_t height, std::size_t channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
    if (width == 0 || height == 0) throw ShapeError("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw ShapeError("images have 1 or 3 channels, got " + std::to_string(channels));
    if (pixels_.size() != width * height * channels) throw ShapeError("pixel count does not match image dimensions");
}

Tensor normalize(const Image& img) {
    Tensor t(img.shape().hwc());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) t[i] = static_cast<double>(px[i]) / 127.5 - 1.0;
    return t;
}

Image denormalize(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("denormalize expects an H x W x C tensor, got " + shape_to_string(t.shape()));
    Image img(t.dim(1), t.dim(0), t.dim(2));
    auto px = img.pixels();
    for (std::size_t i = 0; i < t.size(); ++i) {
        double x = t[i];
        if (std::isnan(x)) x = 0.0;
        x = std::clamp(x, -1.0, 1.0);
        const double p = std::floor(x * 127.5 + 127.5 + 0.5);
        px[i] = static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
    }
    return img;
}

// ---- files -------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> contents) {
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(contents.data()), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("write failed: " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot replace " + path.string());
    }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
}

// ---- PNG / PNM ---------------------------------------------------------------

namespace {

Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(name + ": malformed PNG (" + image.message + ")");
    }
    const auto format = image.format;
    std::size_t channels = 0;
    if (format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError(name + ": unsupported bit depth (only 8-bit PNG is supported)");
    }
    if (format == PNG_FORMAT_GRAY) {
        channels = 1;
    } else if (format == PNG_FORMAT_RGB) {
        channels = 3;
    } else {
        png_image_free(&image);
        throw FormatError(name + ": unsupported PNG color type (need 8-bit grayscale or RGB)");
    }
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        throw FormatError(name + ": malformed PNG (" + image.message + ")");
    }
    return Image(image.width, image.height, channels, std::move(pixels));
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels().data(), 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels().data(), 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(name + ": malformed PNM header");
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > (1L << 30)) throw FormatError(name + ": PNM header value too large");
        }
        return v;
    };
    const long width = next_int();
    const long height = next_int();
    const long maxval = next_int();
    if (width <= 0 || height <= 0) throw FormatError(name + ": PNM dimensions must be positive");
    if (maxval != 255) throw FormatError(name + ": unsupported PNM maxval " + std::to_string(maxval) + " (need 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(name + ": malformed PNM header");
    ++pos;
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
    if (bytes.size() - pos < count) throw FormatError(name + ": truncated PNM pixel data");
    std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<long>(pos),
                                     bytes.begin() + static_cast<long>(pos + count));
    return Image(static_cast<std::size_t>(width), static_cast<std::size_t>(height), channels, std::move(pixels));
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
    const std::string header = std::string(img.channels() == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width()) +
                               " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels().begin(), img.pixels().end());
    return out;
}

std::string lower_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

Image read_image(const fs::path& path) {
    const auto bytes = read_file(path);
    const std::string name = path.string();
    static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return decode_png(bytes, name);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return decode_pnm(bytes, name);
    throw FormatError(name + ": unrecognized image format (need PNG, PGM P5 or PPM P6)");
}

void write_image(const Image& img, const fs::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".png") {
        write_file_atomic(path, encode_png(img));
    } else if (ext == ".pgm" || ext == ".ppm") {
        if ((ext == ".pgm") != (img.channels() == 1)) {
            throw ShapeError(path.string() + ": " + ext + " needs " + (ext == ".pgm" ? "1" : "3") + " channel(s)");
        }
        write_file_atomic(path, encode_pnm(img));
    } else {
        throw FormatError(path.string() + ": unsupported image extension '" + ext + "'");
    }
}

// ---- GPDW weight container -----------------------------------------------------

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = ::crc32(crc, bytes.data() + pos, chunk);
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace {

constexpr char kMagic[4] = {'G', 'P', 'D', 'W'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
    return static_cast<std::uint32_t>(b[pos]) | static_cast<std::uint32_t>(b[pos + 1]) << 8 |
           static_cast<std::uint32_t>(b[pos + 2]) << 16 | static_cast<std::uint32_t>(b[pos + 3]) << 24;
}

std::string printable_magic(std::span<const std::uint8_t> b) {
    std::string s;
    for (std::size_t i = 0; i < 4 && i < b.size(); ++i) {
        const char c = static_cast<char>(b[i]);
        s += std::isprint(static_cast<unsigned char>(c)) ? std::string(1, c) : "\\x" + std::to_string(b[i]);
    }
    return s;
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint32_t u32() {
        need(4);
        const auto v = get_u32(b_, pos_);
        pos_ += 4;
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("weight file: tensor table runs past the end of the payload");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kWeightFileVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (!t.all_finite()) throw NumericError("tensor '" + name + "' has non-finite values");
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.values()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    put_u32(out, crc32_ieee(out));
    return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) {
        throw CorruptionError("weight file truncated (" + std::to_string(bytes.size()) + " bytes)");
    }
    const auto payload = bytes.first(bytes.size() - 4);
    const std::uint32_t stored = get_u32(bytes, bytes.size() - 4);
    const std::uint32_t actual = crc32_ieee(payload);
    const bool magic_ok = std::equal(kMagic, kMagic + 4, bytes.begin());
    if (stored != actual) {
        std::ostringstream msg;
        msg << "weight file checksum mismatch (stored " << std::hex << stored << ", computed " << actual << ")";
        if (!magic_ok) msg << "; magic '" << printable_magic(bytes) << "' is not GPDW";
        throw CorruptionError(msg.str());
    }
    if (!magic_ok) throw FormatError("not a GPDW weight file: magic '" + printable_magic(bytes) + "'");
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kWeightFileVersion) {
        throw VersionError("unsupported weight file version " + std::to_string(version) + " (expected " +
                           std::to_string(kWeightFileVersion) + ")");
    }
    Reader r(payload.subspan(8));
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const auto name_bytes = r.take(name_len);
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError("weight file: tensor '" + name + "' has rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint32_t d = r.u32();
            if (d == 0) throw FormatError("weight file: tensor '" + name + "' has a zero dimension");
            shape.push_back(d);
        }
        const std::size_t numel = shape_numel(shape);
        if (numel > r.remaining() / 4) throw FormatError("weight file: tensor '" + name + "' data runs past the end");
        const auto raw = r.take(numel * 4);
        std::vector<double> data(numel);
        for (std::size_t k = 0; k < numel; ++k) {
            const std::uint32_t bits = get_u32(raw, 4 * k);
            float f;
            std::memcpy(&f, &bits, 4);
            data[k] = static_cast<double>(f);
        }
        tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    if (r.remaining() != 0) throw FormatError("weight file: trailing bytes after tensor table");
    return tensors;
}

void save_tensors(const std::vector<NamedTensor>& tensors, const fs::path& path) {
    write_file_atomic(path, encode_tensors(tensors));
}

std::vector<NamedTensor> load_tensors(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_tensors(bytes);
    } catch (const CorruptionError& e) {
        throw CorruptionError(path.string() + ": " + e.what());
    } catch (const VersionError& e) {
        throw VersionError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

namespace {

std::vector<NamedTensor> prefixed_state(const Sequential& body, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : body.state()) out.push_back({prefix + name, *t});
    return out;
}

/// Copies tensors named prefix + <state name> into body; every state entry must be present.
void assign_state(Sequential& body, const std::map<std::string, const Tensor*>& found, const std::string& prefix) {
    std::size_t used = 0;
    for (auto& [name, t] : body.state()) {
        auto it = found.find(prefix + name);
        if (it == found.end()) throw FormatError("weight file is missing tensor '" + prefix + name + "'");
        if (it->second->shape() != t->shape()) {
            throw FormatError("tensor '" + prefix + name + "' has shape " + shape_to_string(it->second->shape()) +
                              ", expected " + shape_to_string(t->shape()));
        }
        *t = *it->second;
        ++used;
    }
    if (used != found.size()) {
        for (const auto& [name, t] : found) {
            bool known = false;
            for (const auto& [sname, st] : body.state()) known |= prefix + sname == name;
            if (!known) throw FormatError("weight file has unexpected tensor '" + name + "'");
        }
    }
}

std::map<std::string, const Tensor*> with_prefix(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    std::map<std::string, const Tensor*> out;
    for (const auto& nt : tensors) {
        if (nt.name.rfind(prefix, 0) == 0) {
            if (!out.emplace(nt.name, &nt.tensor).second) throw FormatError("duplicate tensor '" + nt.name + "'");
        }
    }
    return out;
}

}  // namespace

std::vector<NamedTensor> generator_tensors(const GeneratorNet& net) { return prefixed_state(net.body(), "generator."); }

GeneratorNet generator_from_tensors(const std::vector<NamedTensor>& tensors) {
    const auto found = with_prefix(tensors, "generator.");
    auto first = found.find("generator.0.weight");
    auto last = found.find("generator.10.weight");
    if (first == found.end() || last == found.end() || first->second->rank() != 2 || last->second->rank() != 4) {
        throw FormatError("weight file does not contain a DCGAN generator");
    }
    GeneratorNet net = make_dcgan_generator({first->second->dim(1), last->second->dim(1)}, 0);
    assign_state(net.body(), found, "generator.");
    return net;
}

void save_weights(const GeneratorNet& net, const fs::path& path) { save_tensors(generator_tensors(net), path); }

void save_checkpoint(const GeneratorNet& gen, const DiscriminatorNet& disc, const fs::path& path) {
    auto tensors = generator_tensors(gen);
    auto d = prefixed_state(disc.body(), "discriminator.");
    tensors.insert(tensors.end(), d.begin(), d.end());
    save_tensors(tensors, path);
}

GeneratorNet load_weights(const fs::path& path) {
    const auto tensors = load_tensors(path);
    try {
        return generator_from_tensors(tensors);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

DiscriminatorNet load_discriminator(const fs::path& path) {
    const auto tensors = load_tensors(path);
    const auto found = with_prefix(tensors, "discriminator.");
    auto first = found.find("discriminator.0.weight");
    if (first == found.end() || first->second->rank() != 4) {
        throw FormatError(path.string() + ": weight file does not contain a discriminator");
    }
    DiscriminatorNet disc = make_dcgan_discriminator(first->second->dim(1), 0, first->second->dim(0));
    try {
        assign_state(disc.body(), found, "discriminator.");
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return disc;
}

// ---- latent JSON -----------------------------------------------------------------

nlohmann::json latents_to_json(const std::vector<LatentVector>& vectors, const nlohmann::json& meta) {
    if (vectors.empty()) throw ConfigError("no latent vectors to save");
    const std::size_t dim = vectors.front().dim();
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& v : vectors) {
        if (v.dim() != dim) throw FormatError("latent vectors have inconsistent dimensions");
        rows.push_back(v.storage());
    }
    return {{"dim", dim}, {"vectors", std::move(rows)}, {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
}

LatentFile latents_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("dim") || !doc["dim"].is_number_unsigned() || !doc.contains("vectors") ||
        !doc["vectors"].is_array()) {
        throw FormatError("latent file needs an unsigned \"dim\" and a \"vectors\" array");
    }
    LatentFile out;
    out.dim = doc["dim"].get<std::size_t>();
    for (const auto& row : doc["vectors"]) {
        if (!row.is_array() || row.size() != out.dim) {
            throw FormatError("latent vector of length " + std::to_string(row.is_array() ? row.size() : 0) +
                              " does not match dim " + std::to_string(out.dim));
        }
        std::vector<double> values;
        for (const auto& x : row) {
            if (!x.is_number()) throw FormatError("latent vector entries must be numbers");
            values.push_back(x.get<double>());
        }
        out.vectors.emplace_back(std::move(values));
    }
    if (doc.contains("meta")) out.meta = doc["meta"];
    return out;
}

void save_latents(const std::vector<LatentVector>& vectors, const nlohmann::json& meta, const fs::path& path) {
    write_text_atomic(path, latents_to_json(vectors, meta).dump(2) + "\n");
}

LatentFile load_latents(const fs::path& path) {
    try {
        return latents_from_json(read_json(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ganproj
