#pragma once

#include <string>

#include "duv/denoiser.hpp"

namespace duv {

// Flat JSON checkpoint: architecture, step counter, and every parameter as
// {shape, row-major values}. Keys are emitted in sorted order and doubles
// round-trip exactly, so identical parameters give identical bytes.
void save_checkpoint(const DenoiserModel& model, const std::string& path);
DenoiserModel load_checkpoint(const std::string& path);

}  // namespace duv
