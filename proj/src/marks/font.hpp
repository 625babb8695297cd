#pragma once

#include <array>
#include <cstdint>

namespace keymark::marks::detail {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphSpacing = 1;  // in glyph cells, scaled with the text

using Glyph = std::array<std::uint8_t, kGlyphHeight>;

// Unknown characters render as a hollow box.
const Glyph& glyph(char c);

}  // namespace keymark::marks::detail
