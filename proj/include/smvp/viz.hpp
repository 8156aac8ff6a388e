#pragma once

#include "smvp/tensor.hpp"

namespace smvp::viz {

using Frame = diff::TensorT<float>;

/// Flow field [1,2,H,W] to RGB via the angular color wheel: hue encodes
/// direction, saturation magnitude. Zero flow renders white. max_mag <= 0
/// normalizes by the field's own maximum.
Frame flow_to_rgb(const Frame& flow, double max_mag = 0.0);

/// Depth [1,1,H,W] to grayscale as normalized inverse depth (near = bright).
Frame depth_to_gray(const Frame& depth);

/// Single-channel [1,1,H,W] map in [0,1] to grayscale RGB.
Frame gray_to_rgb(const Frame& map);

/// Writes rows of equally sized RGB frames as one PPM montage with a
/// one-pixel separator grid.
void write_montage(const std::string& path,
                   const std::vector<std::vector<Frame>>& rows);

}  // namespace smvp::viz
