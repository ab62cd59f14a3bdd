#pragma once

#include <cstdint>

#include "precodec/imageio.hpp"
#include "precodec/tensor.hpp"

namespace precodec {

// Procedural test content with natural-image traits: smooth shading, hard
// object edges, multi-octave texture and some oriented stripes. Returns YUV
// in [0,1] as [1,3,H,W]; chroma is smoother than luma.
Tensor synthetic_image(std::uint64_t seed, Index height, Index width);
Frame synthetic_frame(std::uint64_t seed, int width, int height);

// Frames of one synthetic scene panned by (dy,dx) integer pixels per frame.
VideoSeq synthetic_video(std::uint64_t seed, int width, int height, int frames, int dy = 0, int dx = 1);

}  // namespace precodec
