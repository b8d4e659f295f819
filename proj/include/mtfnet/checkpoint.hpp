#pragma once

#include <string>

#include "mtfnet/model.hpp"
#include "mtfnet/binio.hpp"

namespace mtfnet {

/// "MTFM" container: versioned header, one float32 record per named
/// parameter, then tagged trailing sections for the model config (always
/// written, validated on load) and optional optimizer state.
void save_checkpoint(const std::string& path, const StackedModel<Real>& model,
                     const nn::AdamW<Real>* optimizer = nullptr);

StackedModel<Real> load_checkpoint(const std::string& path,
                                   nn::AdamW<Real>* optimizer = nullptr);

}  // namespace mtfnet
