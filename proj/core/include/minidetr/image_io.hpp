#pragma once

#include <string>

#include "minidetr/image.hpp"

namespace minidetr {

// Binary PPM (P6, 8-bit) is the supported codec; pixel bytes map linearly to
// [0,1]. Paths ending in .png raise a clear unsupported-format error.
Image image_read(const std::string& path);
void image_write(const Image& img, const std::string& path);

}  // namespace minidetr
