#pragma once

#include <string>
#include <vector>

#include "vqamoe/tensor.hpp"

namespace vqamoe::checkpoint {

// Flat key -> tensor archive: a JSON manifest (<path>.json) listing name,
// shape and byte offset per entry, and a raw blob (<path>.bin) of
// little-endian 64-bit floats in manifest order.
void save(const std::string& path_prefix, const std::vector<Parameter>& params);

// Loads values into the given parameters in place. Every parameter must be
// present in the archive with a matching shape.
void load(const std::string& path_prefix, std::vector<Parameter>& params);

} // namespace vqamoe::checkpoint
