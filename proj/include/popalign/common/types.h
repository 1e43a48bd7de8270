#pragma once

#include <cstdint>
#include <vector>

namespace popalign {

using ItemId = std::int32_t;
using UserId = std::int32_t;

// Marks left-padding slots in fixed-length model inputs.
inline constexpr ItemId kPadItem = -1;

using ItemSequence = std::vector<ItemId>;

}  // namespace popalign
