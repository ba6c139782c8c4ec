#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metoken/diffengine.hpp"

namespace metoken::diff {

// Versioned array container: magic "MTK1", u32 array count, then per array
// u32 name length, name bytes, u32 rank, u32 dims, float64 payload.
// All integers and floats little-endian.
void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, const Tensor*>>& arrays);
std::map<std::string, Tensor> load_arrays(const std::string& path);

}  // namespace metoken::diff
