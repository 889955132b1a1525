#pragma once

#include <iosfwd>
#include <string>

#include "ccisac/nn/tensor.hpp"

namespace ccisac::nn {

// "NNMC0001", uint32 count, then per tensor: uint32 name length, name, uint32
// rank, uint32 dims, float32 payload. Little-endian.
void save_checkpoint(const ParamStore& ps, std::ostream& os);
void save_checkpoint(const ParamStore& ps, const std::string& path);

// Every stored tensor must exist in `ps` with the same shape.
void load_checkpoint(ParamStore& ps, std::istream& is);
void load_checkpoint(ParamStore& ps, const std::string& path);

}  // namespace ccisac::nn
