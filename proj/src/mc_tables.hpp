#pragma once

namespace rcd::mesher::detail {
extern const int kEdgeTable[256];
extern const int kTriTable[256][16];
}  // namespace rcd::mesher::detail
