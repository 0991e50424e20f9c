#include "minidetr/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "minidetr/errors.hpp"

namespace minidetr {

Tensor image_to_tensor(const Image& img) {
    Tensor t = Tensor::zeros({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t(c, y, x) = img.at(y, x, c);
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) {
        throw ValidationError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
    }
    Image img(t.dim(1), t.dim(2));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) img.at(y, x, c) = t(c, y, x);
    return img;
}

double image_mse(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width) {
        throw ValidationError("image_mse: dimension mismatch");
    }
    double s = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return a.pixels.empty() ? 0.0 : s / static_cast<double>(a.pixels.size());
}

void clamp_pixels(Image& img) {
    for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

namespace {

// Consumes PPM header whitespace/comments between tokens.
void skip_ppm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            in.get();
        } else {
            return;
        }
    }
}

int read_ppm_int(std::istream& in, const std::string& path, const char* what) {
    skip_ppm_space(in);
    int v = -1;
    if (!(in >> v) || v < 0) {
        throw ValidationError(path + ": malformed PPM header (" + std::string(what) + ")");
    }
    return v;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image image_read(const std::string& path) {
    if (ends_with(path, ".png") || ends_with(path, ".PNG")) {
        throw ValidationError(path + ": PNG support is not built in; convert to binary PPM (.ppm)");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(path + ": cannot open image file");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '6') {
        throw ValidationError(path + ": not a binary PPM (P6) file");
    }
    int w = read_ppm_int(in, path, "width");
    int h = read_ppm_int(in, path, "height");
    int maxval = read_ppm_int(in, path, "maxval");
    if (w <= 0 || h <= 0) throw ValidationError(path + ": non-positive PPM dimensions");
    if (maxval <= 0 || maxval > 255) {
        throw ValidationError(path + ": unsupported PPM maxval " + std::to_string(maxval) + " (want 1..255)");
    }
    in.get();  // single whitespace byte after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) {
        throw ValidationError(path + ": truncated PPM payload");
    }
    Image img(h, w);
    double inv = 1.0 / static_cast<double>(maxval);
    for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * inv;
    return img;
}

void image_write(const Image& img, const std::string& path) {
    if (ends_with(path, ".png") || ends_with(path, ".PNG")) {
        throw ValidationError(path + ": PNG support is not built in; write binary PPM (.ppm)");
    }
    if (img.height <= 0 || img.width <= 0) throw ValidationError("image_write: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure(path + ": cannot open for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        double v = std::clamp(img.pixels[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw RuntimeFailure(path + ": write failed");
}

}  // namespace minidetr
