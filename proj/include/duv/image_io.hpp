#pragma once

#include <string>

#include "duv/tensor.hpp"

namespace duv {

// Binary PPM (P6, 8-bit). Pixels are [3,H,W] floats in [0,1]; values are
// clamped and rounded on write, so a write/read round trip is the
// quantization map and nothing else.
void write_ppm(const Tensor& pixels, const std::string& path);
Tensor read_ppm(const std::string& path);

// m x m contact sheet of equally sized tiles, row-major fill.
Tensor contact_sheet(const std::vector<Tensor>& tiles);

}  // namespace duv
