#include "duv/image_io.hpp"

#include <cmath>
#include <fstream>

#include "duv/errors.hpp"

namespace duv {

void write_ppm(const Tensor& pixels, const std::string& path) {
    if (pixels.shape.size() != 3 || pixels.shape[0] != 3) {
        throw DimensionError("write_ppm: expected [3,H,W], got " + shape_string(pixels.shape));
    }
    int h = pixels.shape[1], w = pixels.shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write image: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    const double* r = pixels.data.data();
    const double* g = r + static_cast<std::size_t>(h) * w;
    const double* b = g + static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto quant = [](double v) {
                double c = std::min(std::max(v, 0.0), 1.0);
                return static_cast<unsigned char>(std::lround(c * 255.0));
            };
            row[static_cast<std::size_t>(x) * 3 + 0] = quant(r[y * w + x]);
            row[static_cast<std::size_t>(x) * 3 + 1] = quant(g[y * w + x]);
            row[static_cast<std::size_t>(x) * 3 + 2] = quant(b[y * w + x]);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read image: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
        throw FormatError("unsupported PPM header in " + path);
    }
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw FormatError("truncated PPM data in " + path);
    Tensor pixels = Tensor::zeros({3, h, w});
    double* r = pixels.data.data();
    double* g = r + static_cast<std::size_t>(h) * w;
    double* b = g + static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
            r[y * w + x] = raw[o + 0] / 255.0;
            g[y * w + x] = raw[o + 1] / 255.0;
            b[y * w + x] = raw[o + 2] / 255.0;
        }
    }
    return pixels;
}

Tensor contact_sheet(const std::vector<Tensor>& tiles) {
    if (tiles.empty()) throw ContractError("contact_sheet: no tiles");
    const std::vector<int>& shape = tiles.front().shape;
    for (const Tensor& t : tiles) {
        if (t.shape != shape) throw DimensionError("contact_sheet: tiles differ in shape");
    }
    int m = 1;
    while (m * m < static_cast<int>(tiles.size())) ++m;
    int th = shape[1], tw = shape[2];
    Tensor sheet = Tensor::zeros({3, m * th, m * tw});
    int sw = m * tw;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        int gy = static_cast<int>(i) / m, gx = static_cast<int>(i) % m;
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) {
                    sheet.data[(static_cast<std::size_t>(c) * m * th + gy * th + y) * sw +
                               gx * tw + x] =
                        tiles[i].data[(static_cast<std::size_t>(c) * th + y) * tw + x];
                }
            }
        }
    }
    return sheet;
}

}  // namespace duv
