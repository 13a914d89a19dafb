#pragma once

#include <filesystem>
#include <optional>

#include "pare/archive.h"
#include "pare/distill.h"
#include "pare/model.h"
#include "pare/router.h"

namespace pare {

// Tensor entries are prefixed "model." / "router."; meta carries the
// configurations under "model_config" / "router".
void add_model(TensorArchive& ar, const DiTParams& params);
DiTParams read_model(const TensorArchive& ar);

void add_router(TensorArchive& ar, const RouterParams& params);
std::optional<RouterParams> read_router(const TensorArchive& ar);

// Full training state including optimizer moments, for resuming.
TensorArchive state_archive(const TrainState& state);
TrainState read_state(const TensorArchive& ar);

}  // namespace pare
