#pragma once

#include <spdlog/spdlog.h>

namespace kinact {

/// Applies KINACT_LOG (error|warn|info|debug) to the default logger, which
/// writes to standard error. Unknown values fall back to warn.
void init_logging();

}  // namespace kinact
