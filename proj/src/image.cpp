#include "gst/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

#include <json.hpp>

namespace gst {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      values(static_cast<size_t>(h) * w * c, fill) {}

void Image::validate() const {
    if (height <= 0 || width <= 0 || (channels != 1 && channels != 3))
        throw DataError("invalid image dimensions");
    if (values.size() != static_cast<size_t>(height) * width * channels)
        throw DataError("image value count does not match dimensions");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("image contains non-finite values");
}

void AnnotationSet::validate() const {
    if (image_height <= 0 || image_width <= 0)
        throw DataError("invalid annotation image dimensions");
    for (const auto& p : points) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
            throw DataError("point out of bounds: non-finite coordinate");
        if (p[0] < 0.0 || p[0] >= image_height || p[1] < 0.0 || p[1] >= image_width) {
            std::ostringstream os;
            os << "point out of bounds: (" << p[0] << ", " << p[1] << ") on "
               << image_height << "x" << image_width;
            throw DataError(os.str());
        }
    }
}

DensityMap::DensityMap(int h, int w, double fill)
    : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

void DensityMap::validate() const {
    if (height <= 0 || width <= 0 || values.size() != static_cast<size_t>(height) * width)
        throw DataError("invalid density map dimensions");
    for (double v : values)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw DataError("density map contains negative or non-finite values");
}

std::vector<double> annotation_target(size_t n_annotations) {
    std::vector<double> t(n_annotations + 1, 1.0);
    t[0] = 0.0;
    return t;
}

// --- PPM/PGM -------------------------------------------------------------

namespace {

// Skips whitespace and '#' comments between header tokens.
int next_header_int(std::istream& in, const char* what) {
    for (;;) {
        const int c = in.peek();
        if (c == EOF) throw IoError(std::string("malformed header: missing ") + what);
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) throw IoError(std::string("malformed header: missing ") + what);
    return value;
}

Image load_pnm(std::ifstream& in, bool gray) {
    const int width = next_header_int(in, "width");
    const int height = next_header_int(in, "height");
    const int maxval = next_header_int(in, "maxval");
    if (width <= 0 || height <= 0) throw IoError("malformed header: bad dimensions");
    if (maxval > 255) throw IoError("unsupported bit depth (>8)");
    if (maxval <= 0) throw IoError("malformed header: bad maxval");
    in.get(); // single whitespace after maxval

    const int channels = gray ? 1 : 3;
    const size_t n = static_cast<size_t>(width) * height * channels;
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw IoError("unexpected end of pixel data");

    Image img(height, width, channels);
    const double scale = 1.0 / maxval;
    for (size_t i = 0; i < n; ++i) img.values[i] = raw[i] * scale;
    return img;
}

void save_pnm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.values.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const double v = std::clamp(img.values[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("cannot write file: " + path);
}

// --- PNG -----------------------------------------------------------------

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

Image load_png(const std::string& path) {
    PngReadCloser s;
    s.fp = std::fopen(path.c_str(), "rb");
    if (!s.fp) throw IoError("missing file: " + path);
    s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (!s.png || !s.info) throw IoError("png init failed");
    if (setjmp(png_jmpbuf(s.png))) throw IoError("malformed PNG: " + path);

    png_init_io(s.png, s.fp);
    png_read_info(s.png, s.info);

    const png_uint_32 width = png_get_image_width(s.png, s.info);
    const png_uint_32 height = png_get_image_height(s.png, s.info);
    const int bit_depth = png_get_bit_depth(s.png, s.info);
    const int color_type = png_get_color_type(s.png, s.info);
    if (bit_depth > 8) throw IoError("unsupported bit depth (>8)");
    if (png_get_interlace_type(s.png, s.info) != PNG_INTERLACE_NONE)
        throw IoError("interlaced PNG not supported");

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(s.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(s.png);
    if (png_get_valid(s.png, s.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(s.png);
    png_set_strip_alpha(s.png);
    png_read_update_info(s.png, s.info);

    const int out_channels = png_get_channels(s.png, s.info);
    if (out_channels != 1 && out_channels != 3)
        throw IoError("unsupported PNG channel count");

    const size_t rowbytes = png_get_rowbytes(s.png, s.info);
    std::vector<unsigned char> raw(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = raw.data() + r * rowbytes;
    png_read_image(s.png, rows.data());

    Image img(static_cast<int>(height), static_cast<int>(width), out_channels);
    const size_t n = img.values.size();
    for (size_t i = 0; i < n; ++i) img.values[i] = raw[i] / 255.0;
    return img;
}

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

void save_png(const Image& img, const std::string& path) {
    PngWriteCloser s;
    s.fp = std::fopen(path.c_str(), "wb");
    if (!s.fp) throw IoError("cannot write file: " + path);
    s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (!s.png || !s.info) throw IoError("png init failed");
    if (setjmp(png_jmpbuf(s.png))) throw IoError("png write failed: " + path);

    png_init_io(s.png, s.fp);
    // Fixed settings keep encoded bytes reproducible.
    png_set_compression_level(s.png, 6);
    png_set_IHDR(s.png, s.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(s.png, s.info);

    std::vector<unsigned char> raw(img.values.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const double v = std::clamp(img.values[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    const size_t rowbytes = static_cast<size_t>(img.width) * img.channels;
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int r = 0; r < img.height; ++r) rows[static_cast<size_t>(r)] = raw.data() + r * rowbytes;
    png_write_image(s.png, rows.data());
    png_write_end(s.png, nullptr);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file: " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in.gcount() != 2) throw IoError("malformed header: file too short");
    if (magic[0] == 'P' && magic[1] == '6') return load_pnm(in, false);
    if (magic[0] == 'P' && magic[1] == '5') return load_pnm(in, true);
    if (magic[0] == char(0x89) && magic[1] == 'P') {
        in.close();
        return load_png(path);
    }
    throw IoError("malformed header: not a PPM/PGM/PNG file");
}

void save_image(const Image& img, const std::string& path) {
    img.validate();
    if (has_suffix(path, ".png")) {
        save_png(img, path);
    } else {
        save_pnm(img, path);
    }
}

AnnotationSet load_annotations(const std::string& path, int height, int width) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("annotation parse error: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("points") || !doc["points"].is_array())
        throw IoError("annotation parse error: missing \"points\" array");

    AnnotationSet ann;
    ann.image_height = height;
    ann.image_width = width;
    for (const auto& p : doc["points"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw IoError("annotation parse error: points must be [row, col] pairs");
        ann.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    ann.validate();
    return ann;
}

void save_annotations(const AnnotationSet& ann, const std::string& path) {
    nlohmann::json doc;
    doc["points"] = nlohmann::json::array();
    for (const auto& p : ann.points) doc["points"].push_back({p[0], p[1]});
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << doc.dump(2) << "\n";
}

std::vector<double> normalize(const DensityMap& d) {
    double total = 0.0;
    for (double v : d.values) total += v;
    if (!(total > 0.0)) throw DataError("zero mass");
    std::vector<double> p(d.values.size());
    for (size_t i = 0; i < p.size(); ++i) p[i] = d.values[i] / total;
    return p;
}

} // namespace gst
