#pragma once

#include <string>

#include "epifusion/synthetic.hpp"

namespace epifusion {

// Dataset directory layout:
//   rig.json    {"version": 1, "cameras": [camera json, ...], "image_size": N}
//   poses.bin   "POSES v1 <frames> <k> <views> <crc32>\n" + f64 payload
//   views/frame_XXXXXX_view_V.img  "IMG v1 C H W\n" + f32 payload
// All integers little-endian. Reads verify the CRC and throw FormatError on
// corrupt or truncated files.
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

void write_rig_json(const std::string& path, const Rig& rig);
Rig read_rig_json(const std::string& path);

void write_view_image(const std::string& path, const ViewImage& img);
ViewImage read_view_image(const std::string& path);

}  // namespace epifusion
