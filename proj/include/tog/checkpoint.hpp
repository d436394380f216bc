#pragma once

#include <functional>
#include <map>
#include <string>

#include "tog/optim.hpp"
#include "tog/tensor.hpp"

namespace tog {

// Checkpoint container: little-endian u32 header length, then a UTF-8 JSON
// header {"params":[{"name","shape","offset"},...]} in serialization order
// with offsets relative to the start of the raw-f32 data section that
// follows. Round-trips are bit-exact.

/// Writes all parameters; `keep` (when set) filters by name.
void save_checkpoint(const Params& params, const std::string& path,
                     const std::function<bool(const std::string&)>& keep = nullptr);

/// Loads every parameter currently registered in `params`; each must be
/// present in the file with an identical shape. The file is validated in
/// full before any tensor is touched, so a failure never partially loads.
void load_checkpoint(Params& params, const std::string& path);

/// Loads a subset by name (used for encoder-only checkpoints). Returns the
/// names actually restored; names absent from `params` are an error.
std::size_t load_checkpoint_subset(Params& params, const std::string& path,
                                   const std::function<bool(const std::string&)>& want);

/// Raw read of all entries, keyed by name.
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

}  // namespace tog
